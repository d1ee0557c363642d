//! Skip-gram with negative sampling over the caption corpus.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{self, dim_u32, push_f32s, push_u32, ByteReader};
use crate::nn::{dot, sigmoid, Matrix};
use crate::rng::SeededRng;
use crate::text::{TokenSeq, Vocabulary, EOS_ID, PAD_ID, SOS_ID, UNK_ID};

const MAGIC: &[u8; 4] = b"EMB1";
pub const DEFAULT_EMBED_DIM: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate; decays linearly to `lr * 1e-4` over the run.
    pub lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBED_DIM,
            window: 5,
            negatives: 5,
            epochs: 30,
            lr: 0.025,
            seed: 42,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.epochs == 0 {
            return Err(Error::invalid(
                "skip-gram dim, window, negatives and epochs must all be >= 1",
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("skip-gram lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Input vectors, one row per vocabulary id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix(Matrix);

impl EmbeddingMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::invalid("embedding matrix must be non-empty"));
        }
        Ok(Self(m))
    }

    pub fn vocab_size(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(12 + 4 * self.0.len());
        buf.extend_from_slice(MAGIC);
        push_u32(&mut buf, dim_u32(self.vocab_size(), "vocab size")?);
        push_u32(&mut buf, dim_u32(self.dim(), "embedding dim")?);
        push_f32s(&mut buf, self.0.data().iter().map(|&v| v as f32));
        Ok(buf)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.magic(MAGIC)?;
        let v = r.u32("vocab size")? as usize;
        let d = r.u32("embedding dim")? as usize;
        if v == 0 || d == 0 {
            return Err(r.error(format!("empty embedding matrix {v}x{d}")));
        }
        let count = v
            .checked_mul(d)
            .ok_or_else(|| r.error(format!("dimensions {v}x{d} overflow")))?;
        if r.remaining() != count.saturating_mul(4) {
            return Err(r.error(format!(
                "payload for {v}x{d} needs {} bytes, file has {}",
                count.saturating_mul(4),
                r.remaining()
            )));
        }
        let data: Vec<f64> = r.f32s(count, "embedding payload")?.into_iter().map(f64::from).collect();
        r.finish()?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::format(path, 12, "embedding payload contains non-finite values"));
        }
        Self::new(Matrix::from_vec(v, d, data)?)
    }
}

pub fn save_embeddings(e: &EmbeddingMatrix, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &e.to_bytes()?)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_bytes(path, &fsutil::read_bytes(path)?)
}

pub fn lookup(e: &EmbeddingMatrix, id: usize) -> Result<&[f64]> {
    if id >= e.vocab_size() {
        return Err(Error::invalid(format!(
            "token id {id} out of range for {} embeddings",
            e.vocab_size()
        )));
    }
    Ok(e.0.row(id))
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!("cosine of lengths {} and {}", u.len(), v.len())));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine of a zero vector"));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

fn trainable_id(id: usize) -> bool {
    !matches!(id, PAD_ID | SOS_ID | EOS_ID)
}

/// `(center, context)` pairs within ±`window` positions of each other inside
/// one sentence. Marker tokens are dropped before positions are counted.
pub fn generate_pairs(corpus: &[Vec<usize>], window: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for sentence in corpus {
        let ids: Vec<usize> = sentence.iter().copied().filter(|&i| trainable_id(i)).collect();
        for (i, &c) in ids.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(ids.len() - 1);
            for (j, &o) in ids.iter().enumerate().take(hi + 1).skip(lo) {
                if j != i {
                    pairs.push((c, o));
                }
            }
        }
    }
    pairs
}

/// Token occurrence counts over the encoded corpus, markers excluded.
pub fn unigram_counts(corpus: &[Vec<usize>], vocab_size: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; vocab_size];
    for &id in corpus.iter().flatten() {
        let slot = counts
            .get_mut(id)
            .ok_or_else(|| Error::invalid(format!("token id {id} outside vocabulary of {vocab_size}")))?;
        if trainable_id(id) {
            *slot += 1;
        }
    }
    Ok(counts)
}

/// Draws negatives from `count^0.75`, never returning a reserved token.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(counts: &[u64]) -> Result<Self> {
        let weights: Vec<f64> = counts
            .iter()
            .enumerate()
            .map(|(id, &c)| if id <= UNK_ID { 0.0 } else { (c as f64).powf(0.75) })
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("no non-reserved tokens to sample negatives from"));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { probs, cdf })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample(&self, rng: &mut SeededRng) -> usize {
        let u = rng.next_f64() * self.cdf[self.cdf.len() - 1];
        let i = self.cdf.partition_point(|&c| c <= u);
        // Rounding can land past the last positive-mass entry; walk back to it.
        let mut i = i.min(self.probs.len() - 1);
        while self.probs[i] == 0.0 {
            i -= 1;
        }
        i
    }
}

/// `-log σ(u_o·v) - Σ log σ(-u_n·v)` for one training triple.
pub fn sgns_loss(v: &[f64], u_pos: &[f64], u_negs: &[&[f64]]) -> f64 {
    let mut loss = -log_sigmoid(dot(u_pos, v));
    for u in u_negs {
        loss -= log_sigmoid(-dot(u, v));
    }
    loss
}

/// Gradients of [`sgns_loss`] with respect to `v`, `u_pos` and each `u_neg`.
pub fn sgns_grad(v: &[f64], u_pos: &[f64], u_negs: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let gp = sigmoid(dot(u_pos, v)) - 1.0;
    let mut gv: Vec<f64> = u_pos.iter().map(|u| gp * u).collect();
    let gu_pos = v.iter().map(|x| gp * x).collect();
    let mut gu_negs = Vec::with_capacity(u_negs.len());
    for u in u_negs {
        let gn = sigmoid(dot(u, v));
        for (g, ui) in gv.iter_mut().zip(u.iter()) {
            *g += gn * ui;
        }
        gu_negs.push(v.iter().map(|x| gn * x).collect());
    }
    (gv, gu_pos, gu_negs)
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[derive(Clone, Debug)]
pub struct SkipGramModel {
    pub embeddings: EmbeddingMatrix,
    pub context: Matrix,
    /// Mean objective over all pairs after each epoch, with negatives fixed
    /// once up front so the numbers are comparable across epochs.
    pub loss_history: Vec<f64>,
}

/// SGD over `pairs` in a seeded shuffled order per epoch.
pub fn train_skipgram(
    pairs: &[(usize, usize)],
    counts: &[u64],
    config: &SkipGramConfig,
) -> Result<SkipGramModel> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("skip-gram training needs at least one pair"));
    }
    let vocab = counts.len();
    if let Some(&(c, o)) = pairs.iter().find(|(c, o)| *c >= vocab || *o >= vocab) {
        return Err(Error::invalid(format!(
            "pair ({c}, {o}) outside vocabulary of {vocab}"
        )));
    }
    let sampler = NegativeSampler::new(counts)?;
    let mut rng = SeededRng::new(config.seed);
    let d = config.dim;
    let bound = 0.5 / d as f64;
    let mut input = Matrix::uniform(vocab, d, -bound, bound, &mut rng);
    let mut context = Matrix::zeros(vocab, d);

    let mut eval_rng = rng.fork();
    let eval_negs: Vec<Vec<usize>> = pairs
        .iter()
        .map(|&(_, o)| draw_negatives(&sampler, o, config.negatives, &mut eval_rng))
        .collect();

    let total_steps = (config.epochs * pairs.len()) as f64;
    let min_lr = config.lr * 1e-4;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0usize;
    let mut history = Vec::with_capacity(config.epochs);
    let mut grad_v = vec![0.0; d];
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        for &k in &order {
            let lr = (config.lr * (1.0 - step as f64 / total_steps)).max(min_lr);
            step += 1;
            let (c, o) = pairs[k];
            let negs = draw_negatives(&sampler, o, config.negatives, &mut rng);
            grad_v.iter_mut().for_each(|g| *g = 0.0);
            for (target, label) in std::iter::once((o, 1.0)).chain(negs.iter().map(|&n| (n, 0.0))) {
                let v = input.row(c);
                let u = context.row_mut(target);
                let g = lr * (label - sigmoid(dot(u, v)));
                for j in 0..d {
                    grad_v[j] += g * u[j];
                    u[j] += g * v[j];
                }
            }
            for (x, g) in input.row_mut(c).iter_mut().zip(&grad_v) {
                *x += g;
            }
        }
        let loss = objective(&input, &context, pairs, &eval_negs);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("skip-gram loss became {loss} in epoch {epoch}")));
        }
        log::debug!("skip-gram epoch {epoch}: loss {loss:.6}");
        history.push(loss);
    }
    Ok(SkipGramModel {
        embeddings: EmbeddingMatrix::new(input)?,
        context,
        loss_history: history,
    })
}

/// Normalize, encode, pair and train in one go.
pub fn train_on_captions(
    captions: &[TokenSeq],
    vocab: &Vocabulary,
    config: &SkipGramConfig,
) -> Result<SkipGramModel> {
    let encoded: Vec<Vec<usize>> = captions.iter().map(|c| vocab.encode(c)).collect();
    let pairs = generate_pairs(&encoded, config.window);
    let counts = unigram_counts(&encoded, vocab.len())?;
    train_skipgram(&pairs, &counts, config)
}

fn draw_negatives(sampler: &NegativeSampler, positive: usize, k: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    // Bounded retries: a vocabulary with a single real token can only ever
    // draw the positive.
    for _ in 0..k * 10 {
        if out.len() == k {
            break;
        }
        let n = sampler.sample(rng);
        if n != positive {
            out.push(n);
        }
    }
    out
}

fn objective(input: &Matrix, context: &Matrix, pairs: &[(usize, usize)], negs: &[Vec<usize>]) -> f64 {
    let total: f64 = pairs
        .iter()
        .zip(negs)
        .map(|(&(c, o), ns)| {
            let u_negs: Vec<&[f64]> = ns.iter().map(|&n| context.row(n)).collect();
            sgns_loss(input.row(c), context.row(o), &u_negs)
        })
        .sum();
    total / pairs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_token_sentence() {
        assert_eq!(generate_pairs(&[vec![SOS_ID, 4, 5, EOS_ID]], 5), vec![(4, 5), (5, 4)]);
        assert!(generate_pairs(&[vec![SOS_ID, 4, EOS_ID]], 5).is_empty());
    }

    #[test]
    fn pairs_stay_inside_sentences() {
        let pairs = generate_pairs(&[vec![4, 5], vec![6, 7]], 5);
        assert!(!pairs.contains(&(5, 6)));
        assert_eq!(pairs.len(), 4);
    }

    #[test]
    fn cosine_cases() {
        let v = [0.3, -1.2, 4.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sampler_mass() {
        let s = NegativeSampler::new(&[9, 9, 9, 9, 1, 16, 0]).unwrap();
        let p = s.probs();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(&p[..4], &[0.0; 4]);
        assert_eq!(p[6], 0.0);
        assert!((p[5] / p[4] - 8.0).abs() < 1e-12);
        let mut rng = SeededRng::new(1);
        for _ in 0..1000 {
            assert!(matches!(s.sample(&mut rng), 4 | 5));
        }
    }

    #[test]
    fn empty_pairs_rejected() {
        let err = train_skipgram(&[], &[0, 0, 0, 0, 1], &SkipGramConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn emb1_round_trip() {
        let m = Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.25, 0.0, 8.0]).unwrap();
        let e = EmbeddingMatrix::new(m).unwrap();
        let bytes = e.to_bytes().unwrap();
        assert_eq!(&bytes[..12], b"EMB1\x02\x00\x00\x00\x03\x00\x00\x00");
        assert_eq!(EmbeddingMatrix::from_bytes(Path::new("e"), &bytes).unwrap(), e);
        let err = EmbeddingMatrix::from_bytes(Path::new("e"), &bytes[..20]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn analytic_grad_matches_differences() {
        let mut rng = SeededRng::new(3);
        let mut r = |n| (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<f64>>();
        let v = r(4);
        let up = r(4);
        let n1 = r(4);
        let n2 = r(4);
        let (gv, _, _) = sgns_grad(&v, &up, &[&n1, &n2]);
        for j in 0..4 {
            let mut a = v.clone();
            let mut b = v.clone();
            a[j] += 1e-6;
            b[j] -= 1e-6;
            let num = (sgns_loss(&a, &up, &[&n1, &n2]) - sgns_loss(&b, &up, &[&n1, &n2])) / 2e-6;
            assert!((num - gv[j]).abs() < 1e-7);
        }
    }
}
