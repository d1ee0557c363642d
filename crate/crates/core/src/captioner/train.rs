use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::forward::{batch_pass, teacher_forced_loss, Example};
use super::model::CaptionerModel;
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Mode, ParamSet};
use crate::rng::SeededRng;

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation loss, rounded to `f32`.
    pub model: CaptionerModel,
    pub history: Vec<EpochRecord>,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Split a shuffled order into batches; a trailing single example joins the
/// previous batch so every batch has at least two clips for batch norm.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out[out.len() - 1].len() == 1 {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Mini-batch Adam with teacher forcing. Validation loss is computed in
/// inference mode after every epoch; the earliest epoch with the minimum
/// validation loss is returned.
pub fn train(
    mut model: CaptionerModel,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::invalid(format!(
            "training set has {} examples, need at least 2",
            train_set.len()
        )));
    }
    if val_set.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut adam = AdamState::new(cfg.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(CaptionerModel, usize, f64)> = None;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        for (bi, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let seeds: Vec<u64> = batch.iter().map(|_| rng.next_u64()).collect();
            let pass = batch_pass(&model, &batch, Mode::Train, &seeds, true)?;
            let grads = pass.grads.expect("requested gradients");
            if !pass.loss.is_finite() || !grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training state at epoch {epoch}, batch {}: loss {}, max |grad| {}",
                    bi + 1,
                    pass.loss,
                    grads.max_abs()
                )));
            }
            loss_sum += pass.loss_sum;
            tokens += pass.tokens;
            let bn = pass.bn_updated.expect("train mode updates batch norm");
            model.bn.running_mean = bn.running_mean;
            model.bn.running_var = bn.running_var;
            let g = grads.tensors();
            let g: Vec<&[f64]> = g.iter().map(|t| t.data).collect();
            adam_step(&mut model.tensors_mut(), &g, &mut adam)?;
        }
        let train_loss = loss_sum / tokens as f64;
        let val_loss = teacher_forced_loss(&model, val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "validation loss is {val_loss} at epoch {epoch}; max |param| {}",
                model.max_abs()
            )));
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.5} val {val_loss:.5} ({:.2}s)",
            rec.seconds
        );
        history.push(rec);
        if best.as_ref().map_or(true, |(_, _, b)| val_loss < *b) {
            best = Some((model.clone(), epoch, val_loss));
        }
    }
    let (mut model, best_epoch, best_val_loss) = best.expect("at least one epoch ran");
    model.quantize_f32();
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_loss,
    })
}
