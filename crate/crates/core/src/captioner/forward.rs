use std::sync::Arc;

use rayon::prelude::*;

use super::model::CaptionerModel;
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::events::EventMultiHot;
use crate::nn::{
    add_into, apply_mask, batchnorm_backward, batchnorm_forward, batchnorm_forward_train,
    bigru_layer_backward, bigru_layer_forward_cached, dense_backward, dense_backward_pre,
    dense_forward, dropout_mask, gru_cell_backward_into, gru_cell_forward, gru_layer_backward,
    gru_layer_forward_cached, softmax, softmax_cross_entropy, BatchNormParams, BiGruCache,
    DenseCache, GruCache, Matrix, Mode, ParamSet,
};
use crate::rng::SeededRng;
use crate::text::{TokenSeq, Vocabulary, EOS_ID, SOS_ID};

/// Examples per parallel work unit. Fixed so the gradient summation order
/// does not depend on the thread count.
const CHUNK: usize = 4;

/// One clip's encoder inputs, shared by its captions.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipInput {
    pub features: Matrix,
    pub events: Vec<f64>,
}

impl ClipInput {
    pub fn new(features: &FeatureMatrix, events: &EventMultiHot) -> Self {
        Self {
            features: features.to_matrix(),
            events: events.to_f64(),
        }
    }
}

/// A clip paired with one encoded caption (`<sos> … <eos>`).
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub clip: Arc<ClipInput>,
    pub tokens: Vec<usize>,
}

impl Example {
    pub fn new(clip: Arc<ClipInput>, tokens: Vec<usize>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != SOS_ID || tokens[tokens.len() - 1] != EOS_ID {
            return Err(Error::invalid(
                "training caption must be <sos> ... <eos> with at least the two markers",
            ));
        }
        Ok(Self { clip, tokens })
    }

    /// Number of next-token predictions this caption contributes.
    pub fn predictions(&self) -> usize {
        self.tokens.len() - 1
    }
}

fn encoder_input(model: &CaptionerModel, features: &Matrix, events: &[f64]) -> Result<Matrix> {
    let c = &model.config;
    if features.cols() != c.feature_dim {
        return Err(Error::invalid(format!(
            "features have {} columns, model expects {}",
            features.cols(),
            c.feature_dim
        )));
    }
    if events.len() != c.event_dim {
        return Err(Error::invalid(format!(
            "event vector has {} entries, model expects {}",
            events.len(),
            c.event_dim
        )));
    }
    if features.rows() == 0 {
        return Err(Error::invalid("clip has no frames"));
    }
    let mut x = Matrix::zeros(features.rows(), c.encoder_input_dim());
    for t in 0..features.rows() {
        let row = x.row_mut(t);
        row[..c.feature_dim].copy_from_slice(features.row(t));
        row[c.feature_dim..].copy_from_slice(events);
    }
    Ok(x)
}

fn maybe_dropout(x: &mut [f64], rate: f64, rng: Option<&mut SeededRng>) -> Result<Option<Vec<f64>>> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let mask = dropout_mask(x.len(), rate, rng)?;
            apply_mask(x, &mask);
            Ok(Some(mask))
        }
        _ => Ok(None),
    }
}

struct EncoderCache {
    first: BiGruCache,
    mask: Option<Vec<f64>>,
    second: BiGruCache,
    frames: usize,
}

/// BiGRU stack over already-normalized frames. The context is the forward
/// state at the last frame followed by the backward state at the first.
fn encoder_forward(
    model: &CaptionerModel,
    xn: &Matrix,
    rng: Option<&mut SeededRng>,
) -> Result<(Vec<f64>, EncoderCache)> {
    let (mut h1, first) = bigru_layer_forward_cached(&model.bigru1.fwd, &model.bigru1.bwd, xn)?;
    let mask = maybe_dropout(h1.data_mut(), model.config.arch.dropout, rng)?;
    let (h2, second) = bigru_layer_forward_cached(&model.bigru2.fwd, &model.bigru2.bwd, &h1)?;
    let b = model.bigru2.hidden_dim();
    let t = h2.rows();
    let mut ctx = h2.row(t - 1)[..b].to_vec();
    ctx.extend_from_slice(&h2.row(0)[b..]);
    Ok((
        ctx,
        EncoderCache {
            first,
            mask,
            second,
            frames: t,
        },
    ))
}

fn encoder_backward(
    model: &CaptionerModel,
    cache: &EncoderCache,
    grad_ctx: &[f64],
    grads: &mut CaptionerModel,
) -> Result<Matrix> {
    let b = model.bigru2.hidden_dim();
    let t = cache.frames;
    let mut g2 = Matrix::zeros(t, 2 * b);
    add_into(&mut g2.row_mut(t - 1)[..b], &grad_ctx[..b]);
    add_into(&mut g2.row_mut(0)[b..], &grad_ctx[b..]);
    let mut g1 = bigru_layer_backward(&model.bigru2, &cache.second, &g2, &mut grads.bigru2)?;
    if let Some(mask) = &cache.mask {
        apply_mask(g1.data_mut(), mask);
    }
    bigru_layer_backward(&model.bigru1, &cache.first, &g1, &mut grads.bigru1)
}

struct DecodeCache {
    gru: GruCache,
    hidden: Option<DenseCache>,
    mask: Option<Vec<f64>>,
    out: DenseCache,
}

/// Returns output-layer logits.
fn decode_forward(
    model: &CaptionerModel,
    audio_ctx: &[f64],
    caption_ctx: &[f64],
    rng: Option<&mut SeededRng>,
) -> Result<(Vec<f64>, DecodeCache)> {
    let c = &model.config;
    if audio_ctx.len() != c.audio_context_dim() || caption_ctx.len() != c.arch.caption_gru_cells {
        return Err(Error::invalid(format!(
            "decoder contexts are {} + {}, model expects {} + {}",
            audio_ctx.len(),
            caption_ctx.len(),
            c.audio_context_dim(),
            c.arch.caption_gru_cells
        )));
    }
    let mut x = audio_ctx.to_vec();
    x.extend_from_slice(caption_ctx);
    let h0 = vec![0.0; model.decoder_gru.hidden_dim];
    let (h, gru) = gru_cell_forward(&model.decoder_gru, &x, &h0)?;
    let (mut y, hidden) = match &model.hidden {
        Some(hd) => {
            let (y, cache) = dense_forward(hd, &h)?;
            (y, Some(cache))
        }
        None => (h, None),
    };
    let mask = maybe_dropout(&mut y, c.arch.dropout, rng)?;
    let (_, out) = dense_forward(&model.output, &y)?;
    let logits = out.pre_activation().to_vec();
    Ok((
        logits,
        DecodeCache {
            gru,
            hidden,
            mask,
            out,
        },
    ))
}

/// Backward from dL/dlogits; returns dL/d[audio_ctx | caption_ctx].
fn decode_backward(
    model: &CaptionerModel,
    cache: &DecodeCache,
    grad_logits: &[f64],
    grads: &mut CaptionerModel,
) -> Result<Vec<f64>> {
    let mut gy = dense_backward_pre(&model.output, &cache.out, grad_logits, &mut grads.output)?;
    if let Some(mask) = &cache.mask {
        apply_mask(&mut gy, mask);
    }
    let gh = match (&model.hidden, &cache.hidden, grads.hidden.as_mut()) {
        (Some(hd), Some(hc), Some(hg)) => dense_backward(hd, hc, &gy, hg)?,
        (None, None, None) => gy,
        _ => return Err(Error::InvalidState("hidden dense layer presence mismatch".into())),
    };
    let mut gx = vec![0.0; model.decoder_gru.input_dim];
    let mut gh0 = vec![0.0; model.decoder_gru.hidden_dim];
    gru_cell_backward_into(&model.decoder_gru, &cache.gru, &gh, &mut grads.decoder_gru, &mut gx, &mut gh0)?;
    Ok(gx)
}

fn embed_rows(model: &CaptionerModel, ids: &[usize]) -> Result<Matrix> {
    let v = model.config.vocab_size;
    let mut m = Matrix::zeros(ids.len(), model.config.arch.embed_dim);
    for (k, &id) in ids.iter().enumerate() {
        if id >= v {
            return Err(Error::invalid(format!("token id {id} outside vocabulary of {v}")));
        }
        m.row_mut(k).copy_from_slice(model.embeddings.row(id));
    }
    Ok(m)
}

/// Encoder output for one clip. Train mode normalizes with the clip's own
/// frame statistics (running statistics are left untouched) and applies
/// dropout from `rng`; infer mode uses the running statistics.
pub fn encode_audio(
    model: &CaptionerModel,
    feats: &FeatureMatrix,
    ev: &EventMultiHot,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let x = encoder_input(model, &feats.to_matrix(), &ev.to_f64())?;
    let mut bn = model.bn.clone();
    match mode {
        Mode::Infer => {
            let xn = batchnorm_forward(&mut bn, &x, Mode::Infer)?;
            encoder_forward(model, &xn, None).map(|(c, _)| c)
        }
        Mode::Train => {
            let (xn, _) = batchnorm_forward_train(&mut bn, &x, false)?;
            encoder_forward(model, &xn, Some(rng)).map(|(c, _)| c)
        }
    }
}

/// Final caption-GRU state after reading `prefix`, which must start with
/// `<sos>`.
pub fn encode_partial_caption(model: &CaptionerModel, prefix: &[usize]) -> Result<Vec<f64>> {
    if prefix.first() != Some(&SOS_ID) {
        return Err(Error::invalid("partial caption must be non-empty and start with <sos>"));
    }
    let emb = embed_rows(model, prefix)?;
    let (hs, _) = gru_layer_forward_cached(&model.caption_gru, &emb, None)?;
    Ok(hs.row(hs.rows() - 1).to_vec())
}

/// Next-token distribution.
pub fn decode_step(
    model: &CaptionerModel,
    audio_ctx: &[f64],
    caption_ctx: &[f64],
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let rng = (mode == Mode::Train).then_some(rng);
    decode_forward(model, audio_ctx, caption_ctx, rng).map(|(logits, _)| softmax(&logits))
}

/// Greedy decoding in inference mode. Ties go to the lowest id; stops after
/// `<eos>` or `max_len` generated tokens.
pub fn greedy_caption(
    model: &CaptionerModel,
    feats: &FeatureMatrix,
    ev: &EventMultiHot,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSeq> {
    if vocab.len() != model.config.vocab_size {
        return Err(Error::invalid(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let mut unused = SeededRng::new(0);
    let ctx = encode_audio(model, feats, ev, Mode::Infer, &mut unused)?;
    let mut h = vec![0.0; model.caption_gru.hidden_dim];
    let mut ids = vec![SOS_ID];
    for _ in 0..max_len {
        let last = ids[ids.len() - 1];
        h = gru_cell_forward(&model.caption_gru, model.embeddings.row(last), &h)?.0;
        let (logits, _) = decode_forward(model, &ctx, &h, None)?;
        let next = argmax(&logits);
        ids.push(next);
        if next == EOS_ID {
            break;
        }
    }
    Ok(TokenSeq::from_tokens(
        ids.iter().map(|&i| vocab.token(i).unwrap_or_default().to_string()).collect(),
    ))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Summed cross-entropy of one example on normalized frames; when `grads`
/// is given, adds gradients of that sum and returns dL/dxn.
fn example_pass(
    model: &CaptionerModel,
    xn: &Matrix,
    tokens: &[usize],
    mut rng: Option<&mut SeededRng>,
    grads: Option<&mut CaptionerModel>,
) -> Result<(f64, Option<Matrix>)> {
    let (ctx, enc) = encoder_forward(model, xn, rng.as_deref_mut())?;
    let inputs = &tokens[..tokens.len() - 1];
    let targets = &tokens[1..];
    let emb = embed_rows(model, inputs)?;
    let (hs, cap_cache) = gru_layer_forward_cached(&model.caption_gru, &emb, None)?;

    let mut loss = 0.0;
    let mut steps = Vec::with_capacity(targets.len());
    for (k, &target) in targets.iter().enumerate() {
        let (logits, cache) = decode_forward(model, &ctx, hs.row(k), rng.as_deref_mut())?;
        let (l, probs) = softmax_cross_entropy(&logits, target)?;
        loss += l;
        if grads.is_some() {
            steps.push((cache, probs));
        }
    }
    let Some(g) = grads else {
        return Ok((loss, None));
    };

    let a = model.config.audio_context_dim();
    let mut grad_ctx = vec![0.0; a];
    let mut grad_hs = Matrix::zeros(hs.rows(), hs.cols());
    for (k, (cache, mut probs)) in steps.into_iter().enumerate() {
        probs[targets[k]] -= 1.0;
        let gx = decode_backward(model, &cache, &probs, g)?;
        add_into(&mut grad_ctx, &gx[..a]);
        add_into(grad_hs.row_mut(k), &gx[a..]);
    }
    let (grad_emb, _) = gru_layer_backward(&model.caption_gru, &cap_cache, &grad_hs, &mut g.caption_gru)?;
    if model.config.arch.train_embeddings {
        for (k, &id) in inputs.iter().enumerate() {
            add_into(g.embeddings.row_mut(id), grad_emb.row(k));
        }
    }
    let grad_xn = encoder_backward(model, &enc, &grad_ctx, g)?;
    Ok((loss, Some(grad_xn)))
}

/// Result of one batch pass. `loss` is the mean cross-entropy per predicted
/// token; `grads` (when requested) are gradients of that mean.
#[derive(Clone, Debug)]
pub struct BatchPass {
    pub loss: f64,
    pub loss_sum: f64,
    pub tokens: usize,
    pub grads: Option<CaptionerModel>,
    /// Batch-norm parameters with running statistics updated by this batch
    /// (train mode only).
    pub bn_updated: Option<BatchNormParams>,
}

/// Teacher-forced pass over `batch`. Train mode normalizes with statistics
/// pooled over every frame in the batch and draws each example's dropout
/// masks from the matching entry of `dropout_seeds`.
pub fn batch_pass(
    model: &CaptionerModel,
    batch: &[&Example],
    mode: Mode,
    dropout_seeds: &[u64],
    want_grads: bool,
) -> Result<BatchPass> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if want_grads && mode == Mode::Infer {
        return Err(Error::invalid("gradients are only defined for train-mode passes"));
    }
    if mode == Mode::Train && dropout_seeds.len() != batch.len() {
        return Err(Error::invalid("need one dropout seed per example"));
    }
    let inputs = batch
        .iter()
        .map(|ex| encoder_input(model, &ex.clip.features, &ex.clip.events))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Matrix> = inputs.iter().collect();
    let stacked = Matrix::vstack(&refs)?;
    let mut bn = model.bn.clone();
    let (normalized, bn_cache) = match mode {
        Mode::Train => {
            let (y, cache) = batchnorm_forward_train(&mut bn, &stacked, true)?;
            (y, Some(cache))
        }
        Mode::Infer => (batchnorm_forward(&mut bn, &stacked, Mode::Infer)?, None),
    };
    let mut offsets = Vec::with_capacity(batch.len());
    let mut start = 0;
    for x in &inputs {
        offsets.push(start);
        start += x.rows();
    }

    let indices: Vec<usize> = (0..batch.len()).collect();
    let parts = indices
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(f64, Option<CaptionerModel>, Vec<Matrix>)> {
            let mut grads = want_grads.then(|| model.zeros_like());
            let mut loss = 0.0;
            let mut grad_inputs = Vec::new();
            for &i in chunk {
                let xn = normalized.row_block(offsets[i], inputs[i].rows());
                let mut rng = (mode == Mode::Train).then(|| SeededRng::new(dropout_seeds[i]));
                let (l, gx) = example_pass(model, &xn, &batch[i].tokens, rng.as_mut(), grads.as_mut())?;
                loss += l;
                grad_inputs.extend(gx);
            }
            Ok((loss, grads, grad_inputs))
        })
        .collect::<Vec<_>>();

    let tokens: usize = batch.iter().map(|ex| ex.predictions()).sum();
    let mut loss_sum = 0.0;
    let mut total = want_grads.then(|| model.zeros_like());
    let mut grad_rows = Vec::with_capacity(if want_grads { batch.len() } else { 0 });
    for part in parts {
        let (l, g, gx) = part?;
        loss_sum += l;
        if let (Some(total), Some(g)) = (total.as_mut(), g) {
            add_params(total, &g);
        }
        grad_rows.extend(gx);
    }
    let scale = 1.0 / tokens as f64;
    if let Some(total) = total.as_mut() {
        let grad_refs: Vec<&Matrix> = grad_rows.iter().collect();
        let grad_stacked = Matrix::vstack(&grad_refs)?;
        let cache = bn_cache.as_ref().expect("train mode has a batch-norm cache");
        batchnorm_backward(&model.bn, cache, &grad_stacked, &mut total.bn)?;
        for t in total.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(BatchPass {
        loss: loss_sum * scale,
        loss_sum,
        tokens,
        grads: total,
        bn_updated: (mode == Mode::Train).then_some(bn),
    })
}

fn add_params(dst: &mut CaptionerModel, src: &CaptionerModel) {
    for (d, s) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        add_into(d, s.data);
    }
}

/// Inference-mode teacher-forced cross-entropy per predicted token over all
/// `examples`. A zero-weight model scores exactly `ln(vocab_size)`.
pub fn teacher_forced_loss(model: &CaptionerModel, examples: &[Example], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to score"));
    }
    let mut sum = 0.0;
    let mut tokens = 0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let pass = batch_pass(model, &refs, Mode::Infer, &[], false)?;
        sum += pass.loss_sum;
        tokens += pass.tokens;
    }
    Ok(sum / tokens as f64)
}
