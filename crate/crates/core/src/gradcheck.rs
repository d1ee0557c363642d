//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each problem exposes its parameters and inputs as flat slots, a scalar
//! loss, and the analytic gradient of that loss. Layer problems use a random
//! linear readout `sum(c ⊙ output)` so every output coordinate matters.

use std::sync::Arc;

use serde::Serialize;

use crate::captioner::{batch_pass, build_model, Architecture, CaptionerModel, ClipInput, Example, ModelConfig};
use crate::embeddings::{sgns_grad, sgns_loss};
use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_backward, batchnorm_forward_train, bigru_layer_backward, bigru_layer_forward_cached,
    dense_backward, dense_backward_pre, dense_forward, gru_cell_backward, gru_cell_forward, gru_layer_backward,
    gru_layer_forward_cached, softmax_cross_entropy, Activation, BatchNormParams, BiGru, DenseParams, GruCellParams,
    Matrix, Mode, ParamSet,
};
use crate::rng::SeededRng;
use crate::text::{EOS_ID, SOS_ID};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub seeds: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Scale every analytic gradient by 1.01 before comparing. A sound
    /// checker must then fail.
    pub perturb_backward: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            seeds: 20,
            step: 1e-5,
            tolerance: 1e-4,
            perturb_backward: false,
        }
    }
}

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub seed: u64,
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// Slot and index of the worst coordinate.
    pub worst: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub seeds: Vec<u64>,
    pub max_rel_error: f64,
    pub passed: bool,
    pub results: Vec<CheckResult>,
}

impl GradCheckReport {
    /// Worst error per check name, in run order.
    pub fn summary(&self) -> Vec<(String, f64, bool)> {
        let mut out: Vec<(String, f64, bool)> = Vec::new();
        for r in &self.results {
            match out.iter_mut().find(|(n, _, _)| *n == r.check) {
                Some(e) => {
                    e.1 = e.1.max(r.max_rel_error);
                    e.2 &= r.passed;
                }
                None => out.push((r.check.clone(), r.max_rel_error, r.passed)),
            }
        }
        out
    }
}

type LossFn<'a> = Box<dyn Fn(&[Vec<f64>]) -> Result<f64> + 'a>;
type GradFn<'a> = Box<dyn Fn(&[Vec<f64>]) -> Result<Vec<Vec<f64>>> + 'a>;

struct Problem<'a> {
    names: Vec<String>,
    slots: Vec<Vec<f64>>,
    loss: LossFn<'a>,
    grad: GradFn<'a>,
}

fn run_problem(name: &str, seed: u64, p: Problem, cfg: &GradCheckConfig) -> Result<CheckResult> {
    let mut analytic = (p.grad)(&p.slots)?;
    if analytic.len() != p.slots.len() || analytic.iter().zip(&p.slots).any(|(g, s)| g.len() != s.len()) {
        return Err(Error::InvalidState(format!("{name}: gradient shapes do not match slots")));
    }
    if cfg.perturb_backward {
        analytic.iter_mut().flatten().for_each(|g| *g *= 1.01);
    }
    let mut slots = p.slots.clone();
    let mut worst = (0.0f64, String::new());
    let mut coords = 0;
    for s in 0..slots.len() {
        for i in 0..slots[s].len() {
            let x = slots[s][i];
            slots[s][i] = x + cfg.step;
            let up = (p.loss)(&slots)?;
            slots[s][i] = x - cfg.step;
            let down = (p.loss)(&slots)?;
            slots[s][i] = x;
            let numeric = (up - down) / (2.0 * cfg.step);
            let e = relative_error(analytic[s][i], numeric);
            if !e.is_finite() {
                return Err(Error::Numeric(format!("{name}: non-finite gradient at {}[{i}]", p.names[s])));
            }
            if e > worst.0 || worst.1.is_empty() {
                worst = (e.max(worst.0), format!("{}[{i}]", p.names[s]));
            }
            coords += 1;
        }
    }
    Ok(CheckResult {
        check: name.to_string(),
        seed,
        coordinates: coords,
        max_rel_error: worst.0,
        worst: worst.1,
        passed: worst.0 < cfg.tolerance,
    })
}

fn names_of(p: &impl ParamSet) -> Vec<String> {
    p.tensors().iter().map(|t| t.name.clone()).collect()
}

fn flat(p: &impl ParamSet) -> Vec<Vec<f64>> {
    p.tensors().iter().map(|t| t.data.to_vec()).collect()
}

fn load<P: ParamSet>(p: &mut P, slots: &[Vec<f64>]) {
    for (dst, src) in p.tensors_mut().into_iter().zip(slots) {
        dst.copy_from_slice(src);
    }
}

fn randomize(p: &mut impl ParamSet, lo: f64, hi: f64, rng: &mut SeededRng) {
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.uniform(lo, hi));
    }
}

fn random_vec(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

fn readout(c: &[f64], y: &[f64]) -> f64 {
    c.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn dense_problem(act: Activation, rng: &mut SeededRng) -> Problem<'static> {
    let mut layer = DenseParams::zeros(4, 8, act);
    randomize(&mut layer, -1.0, 1.0, rng);
    let x = random_vec(4, rng);
    let c = random_vec(8, rng);
    let c2 = c.clone();
    let mut names = names_of(&layer);
    names.push("x".into());
    let mut slots = flat(&layer);
    slots.push(x);
    let build = move |s: &[Vec<f64>]| {
        let mut l = DenseParams::zeros(4, 8, act);
        load(&mut l, &s[..2]);
        l
    };
    Problem {
        names,
        slots,
        loss: Box::new(move |s| {
            let (y, _) = dense_forward(&build(s), &s[2])?;
            Ok(readout(&c, &y))
        }),
        grad: Box::new(move |s| {
            let l = build(s);
            let (_, cache) = dense_forward(&l, &s[2])?;
            let mut g = l.zeros_like();
            let gx = dense_backward(&l, &cache, &c2, &mut g)?;
            let mut out = flat(&g);
            out.push(gx);
            Ok(out)
        }),
    }
}

fn softmax_xent_problem(rng: &mut SeededRng) -> Problem<'static> {
    let mut layer = DenseParams::zeros(4, 8, Activation::Softmax);
    randomize(&mut layer, -1.0, 1.0, rng);
    let target = rng.below(8);
    let mut names = names_of(&layer);
    names.push("x".into());
    let mut slots = flat(&layer);
    slots.push(random_vec(4, rng));
    let build = |s: &[Vec<f64>]| {
        let mut l = DenseParams::zeros(4, 8, Activation::Softmax);
        load(&mut l, &s[..2]);
        l
    };
    Problem {
        names,
        slots,
        loss: Box::new(move |s| {
            let (_, cache) = dense_forward(&build(s), &s[2])?;
            Ok(softmax_cross_entropy(cache.pre_activation(), target)?.0)
        }),
        grad: Box::new(move |s| {
            let l = build(s);
            let (_, cache) = dense_forward(&l, &s[2])?;
            let (_, mut probs) = softmax_cross_entropy(cache.pre_activation(), target)?;
            probs[target] -= 1.0;
            let mut g = l.zeros_like();
            let gx = dense_backward_pre(&l, &cache, &probs, &mut g)?;
            let mut out = flat(&g);
            out.push(gx);
            Ok(out)
        }),
    }
}

fn batchnorm_problem(rng: &mut SeededRng) -> Problem<'static> {
    let (b, d) = (4, 4);
    let mut bn = BatchNormParams::new(d);
    bn.gamma.iter_mut().for_each(|v| *v = rng.uniform(0.5, 1.5));
    bn.beta.iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
    let c = random_vec(b * d, rng);
    let c2 = c.clone();
    let slots = vec![bn.gamma.clone(), bn.beta.clone(), random_vec(b * d, rng)];
    let names = vec!["gamma".into(), "beta".into(), "batch".into()];
    let build = move |s: &[Vec<f64>]| -> Result<(BatchNormParams, Matrix)> {
        let mut p = BatchNormParams::new(d);
        p.gamma.copy_from_slice(&s[0]);
        p.beta.copy_from_slice(&s[1]);
        Ok((p, Matrix::from_vec(b, d, s[2].clone())?))
    };
    Problem {
        names,
        slots,
        loss: Box::new(move |s| {
            let (mut p, x) = build(s)?;
            let (y, _) = batchnorm_forward_train(&mut p, &x, false)?;
            Ok(readout(&c, y.data()))
        }),
        grad: Box::new(move |s| {
            let (mut p, x) = build(s)?;
            let (_, cache) = batchnorm_forward_train(&mut p, &x, false)?;
            let mut g = p.zeros_like();
            let dx = batchnorm_backward(&p, &cache, &Matrix::from_vec(b, d, c2.clone())?, &mut g)?;
            Ok(vec![g.gamma, g.beta, dx.into_vec()])
        }),
    }
}

fn random_gru(input: usize, hidden: usize, rng: &mut SeededRng) -> GruCellParams {
    let mut p = GruCellParams::zeros(input, hidden);
    randomize(&mut p, -0.8, 0.8, rng);
    p
}

fn gru_cell_problem(rng: &mut SeededRng) -> Problem<'static> {
    let (i, h) = (4, 8);
    let cell = random_gru(i, h, rng);
    let c = random_vec(h, rng);
    let c2 = c.clone();
    let mut names = names_of(&cell);
    names.extend(["x".into(), "h_prev".into()]);
    let mut slots = flat(&cell);
    slots.push(random_vec(i, rng));
    slots.push(random_vec(h, rng));
    let build = move |s: &[Vec<f64>]| {
        let mut p = GruCellParams::zeros(i, h);
        load(&mut p, &s[..9]);
        p
    };
    Problem {
        names,
        slots,
        loss: Box::new(move |s| Ok(readout(&c, &gru_cell_forward(&build(s), &s[9], &s[10])?.0))),
        grad: Box::new(move |s| {
            let p = build(s);
            let (_, cache) = gru_cell_forward(&p, &s[9], &s[10])?;
            let g = gru_cell_backward(&p, &cache, &c2)?;
            let mut out = flat(&g.params);
            out.push(g.x);
            out.push(g.h_prev);
            Ok(out)
        }),
    }
}

fn gru_layer_problem(rng: &mut SeededRng) -> Problem<'static> {
    let (t, i, h) = (5, 4, 8);
    let cell = random_gru(i, h, rng);
    let c = random_vec(t * h, rng);
    let c2 = c.clone();
    let mut names = names_of(&cell);
    names.extend(["seq".into(), "h0".into()]);
    let mut slots = flat(&cell);
    slots.push(random_vec(t * i, rng));
    slots.push(random_vec(h, rng));
    let build = move |s: &[Vec<f64>]| -> Result<(GruCellParams, Matrix)> {
        let mut p = GruCellParams::zeros(i, h);
        load(&mut p, &s[..9]);
        Ok((p, Matrix::from_vec(t, i, s[9].clone())?))
    };
    Problem {
        names,
        slots,
        loss: Box::new(move |s| {
            let (p, seq) = build(s)?;
            let (y, _) = gru_layer_forward_cached(&p, &seq, Some(&s[10]))?;
            Ok(readout(&c, y.data()))
        }),
        grad: Box::new(move |s| {
            let (p, seq) = build(s)?;
            let (_, cache) = gru_layer_forward_cached(&p, &seq, Some(&s[10]))?;
            let mut g = p.zeros_like();
            let (dseq, dh0) = gru_layer_backward(&p, &cache, &Matrix::from_vec(t, h, c2.clone())?, &mut g)?;
            let mut out = flat(&g);
            out.push(dseq.into_vec());
            out.push(dh0);
            Ok(out)
        }),
    }
}

fn bigru_problem(rng: &mut SeededRng) -> Problem<'static> {
    let (t, i, h) = (5, 4, 4);
    let layer = BiGru {
        fwd: random_gru(i, h, rng),
        bwd: random_gru(i, h, rng),
    };
    let c = random_vec(t * 2 * h, rng);
    let c2 = c.clone();
    let mut names = names_of(&layer);
    names.push("seq".into());
    let mut slots = flat(&layer);
    slots.push(random_vec(t * i, rng));
    let build = move |s: &[Vec<f64>]| -> Result<(BiGru, Matrix)> {
        let mut p = BiGru::zeros(i, h);
        load(&mut p, &s[..18]);
        Ok((p, Matrix::from_vec(t, i, s[18].clone())?))
    };
    Problem {
        names,
        slots,
        loss: Box::new(move |s| {
            let (p, seq) = build(s)?;
            let (y, _) = bigru_layer_forward_cached(&p.fwd, &p.bwd, &seq)?;
            Ok(readout(&c, y.data()))
        }),
        grad: Box::new(move |s| {
            let (p, seq) = build(s)?;
            let (_, cache) = bigru_layer_forward_cached(&p.fwd, &p.bwd, &seq)?;
            let mut g = p.zeros_like();
            let dseq = bigru_layer_backward(&p, &cache, &Matrix::from_vec(t, 2 * h, c2.clone())?, &mut g)?;
            let mut out = flat(&g);
            out.push(dseq.into_vec());
            Ok(out)
        }),
    }
}

fn negs_of(s: &[Vec<f64>]) -> Vec<&[f64]> {
    s[2..].iter().map(Vec::as_slice).collect()
}

fn sgns_problem(rng: &mut SeededRng) -> Problem<'static> {
    let d = 8;
    let negs = 3;
    let mut slots = vec![random_vec(d, rng), random_vec(d, rng)];
    let mut names = vec!["v".to_string(), "u_pos".to_string()];
    for k in 0..negs {
        slots.push(random_vec(d, rng));
        names.push(format!("u_neg{k}"));
    }
    Problem {
        names,
        slots,
        loss: Box::new(move |s| Ok(sgns_loss(&s[0], &s[1], &negs_of(s)))),
        grad: Box::new(move |s| {
            let (gv, gp, gn) = sgns_grad(&s[0], &s[1], &negs_of(s));
            let mut out = vec![gv, gp];
            out.extend(gn);
            Ok(out)
        }),
    }
}

/// Tiny captioner with trainable embeddings, dropout active, and a batch of
/// clips with different lengths.
fn captioner_problem(rng: &mut SeededRng) -> Result<Problem<'static>> {
    let arch = Architecture {
        bigru1_cells: 4,
        bigru2_cells: 4,
        caption_gru_cells: 8,
        decoder_gru_cells: 8,
        embed_dim: 8,
        dropout: 0.5,
        max_decode_len: 8,
        use_leaky_dense: true,
        leaky_dense_units: 8,
        train_embeddings: true,
    };
    let cfg = ModelConfig::new(4, 4, 8, arch);
    let mut model = build_model(&cfg, None, rng)?;
    for t in model.tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.uniform(-0.2, 0.2));
    }
    let mut examples = Vec::new();
    for frames in [3, 4, 5] {
        let clip = Arc::new(ClipInput {
            features: Matrix::uniform(frames, 4, -1.0, 1.0, rng),
            events: (0..4).map(|_| f64::from(u8::from(rng.uniform(0.0, 1.0) < 0.5))).collect(),
        });
        let len = 1 + rng.below(3);
        let mut tokens = vec![SOS_ID];
        tokens.extend((0..len).map(|_| 4 + rng.below(4)));
        tokens.push(EOS_ID);
        examples.push(Example::new(clip, tokens)?);
    }
    let seeds: Vec<u64> = examples.iter().map(|_| rng.next_u64()).collect();
    let seeds2 = seeds.clone();
    let ex2 = examples.clone();
    let names = names_of(&model);
    let slots = flat(&model);
    let template = model.clone();
    let template2 = model;
    let build = |t: &CaptionerModel, s: &[Vec<f64>]| {
        let mut m = t.clone();
        load(&mut m, s);
        m
    };
    Ok(Problem {
        names,
        slots,
        loss: Box::new(move |s| {
            let m = build(&template, s);
            let batch: Vec<&Example> = examples.iter().collect();
            Ok(batch_pass(&m, &batch, Mode::Train, &seeds, false)?.loss)
        }),
        grad: Box::new(move |s| {
            let m = build(&template2, s);
            let batch: Vec<&Example> = ex2.iter().collect();
            let g = batch_pass(&m, &batch, Mode::Train, &seeds2, true)?
                .grads
                .ok_or_else(|| Error::InvalidState("train pass returned no gradients".into()))?;
            Ok(flat(&g))
        }),
    })
}

pub const CHECK_NAMES: [&str; 10] = [
    "dense_linear",
    "dense_leaky_relu",
    "dense_softmax",
    "softmax_cross_entropy",
    "batch_norm",
    "gru_cell",
    "gru_layer_bptt",
    "bigru_layer",
    "skipgram_negative_sampling",
    "captioner_end_to_end",
];

/// Run every check for `cfg.seeds` consecutive seeds starting at `cfg.seed`.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.seeds == 0 || !(cfg.step > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(Error::invalid("gradcheck needs at least one seed and positive step and tolerance"));
    }
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    let mut results = Vec::new();
    for &seed in &seeds {
        let mut rng = SeededRng::new(seed);
        let problems = [
            dense_problem(Activation::Linear, &mut rng),
            dense_problem(Activation::leaky(), &mut rng),
            dense_problem(Activation::Softmax, &mut rng),
            softmax_xent_problem(&mut rng),
            batchnorm_problem(&mut rng),
            gru_cell_problem(&mut rng),
            gru_layer_problem(&mut rng),
            bigru_problem(&mut rng),
            sgns_problem(&mut rng),
            captioner_problem(&mut rng)?,
        ];
        for (name, p) in CHECK_NAMES.iter().zip(problems) {
            results.push(run_problem(name, seed, p, cfg)?);
        }
    }
    let max_rel_error = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        step: cfg.step,
        seeds,
        max_rel_error,
        passed: results.iter().all(|r| r.passed),
        results,
    })
}
