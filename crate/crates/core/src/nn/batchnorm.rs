use super::matrix::Matrix;
use super::{Mode, ParamSet, TensorRef};
use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-feature batch normalization. Running statistics follow
/// `running = momentum·running + (1 − momentum)·batch`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormParams {
    pub fn new(dim: usize) -> Self {
        Self::with(dim, DEFAULT_MOMENTUM, DEFAULT_EPSILON)
    }

    pub fn with(dim: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum,
            epsilon,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Gradient container: zero gamma/beta, statistics untouched.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.gamma.iter_mut().for_each(|v| *v = 0.0);
        z.beta.iter_mut().for_each(|v| *v = 0.0);
        z
    }
}

/// Trainable tensors only (gamma, beta).
impl ParamSet for BatchNormParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef {
                name: "gamma".into(),
                rows: 1,
                cols: self.dim(),
                data: &self.gamma,
            },
            TensorRef {
                name: "beta".into(),
                rows: 1,
                cols: self.dim(),
                data: &self.beta,
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

/// Normalize the rows of `batch`. Train mode uses (and folds into the
/// running averages) the batch statistics; infer mode uses the running ones.
pub fn batchnorm_forward(p: &mut BatchNormParams, batch: &Matrix, mode: Mode) -> Result<Matrix> {
    match mode {
        Mode::Train => batchnorm_forward_train(p, batch, true).map(|(y, _)| y),
        Mode::Infer => {
            check_width(p, batch)?;
            let mut out = batch.clone();
            for r in 0..out.rows() {
                for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                    let xhat = (*v - p.running_mean[j]) / (p.running_var[j] + p.epsilon).sqrt();
                    *v = p.gamma[j] * xhat + p.beta[j];
                }
            }
            Ok(out)
        }
    }
}

fn check_width(p: &BatchNormParams, batch: &Matrix) -> Result<()> {
    if batch.cols() != p.dim() {
        return Err(Error::invalid(format!(
            "batch norm width {} != {}",
            batch.cols(),
            p.dim()
        )));
    }
    Ok(())
}

/// Train-mode forward with cache. Running statistics are updated only when
/// `update_running` is set, which lets gradient checks evaluate the loss
/// repeatedly without side effects.
pub fn batchnorm_forward_train(
    p: &mut BatchNormParams,
    batch: &Matrix,
    update_running: bool,
) -> Result<(Matrix, BatchNormCache)> {
    check_width(p, batch)?;
    let b = batch.rows();
    if b < 2 {
        return Err(Error::invalid(format!(
            "batch norm in train mode needs at least 2 rows, got {b}"
        )));
    }
    let d = p.dim();
    let mut mean = vec![0.0; d];
    for row in batch.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut var = vec![0.0; d];
    for row in batch.iter_rows() {
        for j in 0..d {
            let c = row[j] - mean[j];
            var[j] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= b as f64);

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + p.epsilon).sqrt()).collect();
    let mut xhat = Matrix::zeros(b, d);
    let mut out = Matrix::zeros(b, d);
    for r in 0..b {
        let src = batch.row(r);
        for j in 0..d {
            let xh = (src[j] - mean[j]) * inv_std[j];
            xhat.set(r, j, xh);
            out.set(r, j, p.gamma[j] * xh + p.beta[j]);
        }
    }
    if update_running {
        let m = p.momentum;
        for j in 0..d {
            p.running_mean[j] = m * p.running_mean[j] + (1.0 - m) * mean[j];
            p.running_var[j] = m * p.running_var[j] + (1.0 - m) * var[j];
        }
    }
    Ok((out, BatchNormCache { xhat, inv_std }))
}

/// Returns dL/dbatch; gamma/beta gradients are added into `grads`.
pub fn batchnorm_backward(
    p: &BatchNormParams,
    cache: &BatchNormCache,
    grad_out: &Matrix,
    grads: &mut BatchNormParams,
) -> Result<Matrix> {
    if grad_out.shape() != cache.xhat.shape() || cache.inv_std.len() != p.dim() {
        return Err(Error::InvalidState("batch norm cache does not match upstream gradient".into()));
    }
    let (b, d) = grad_out.shape();
    let mut sum_g = vec![0.0; d];
    let mut sum_gx = vec![0.0; d];
    for r in 0..b {
        let g = grad_out.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..d {
            grads.beta[j] += g[j];
            grads.gamma[j] += g[j] * xh[j];
            sum_g[j] += g[j] * p.gamma[j];
            sum_gx[j] += g[j] * p.gamma[j] * xh[j];
        }
    }
    let n = b as f64;
    let mut dx = Matrix::zeros(b, d);
    for r in 0..b {
        let g = grad_out.row(r);
        let xh = cache.xhat.row(r);
        let out = dx.row_mut(r);
        for j in 0..d {
            let gxh = g[j] * p.gamma[j];
            out[j] = cache.inv_std[j] * (n * gxh - sum_g[j] - xh[j] * sum_gx[j]) / n;
        }
    }
    Ok(dx)
}
