use super::matrix::{add_into, dot, Matrix};
use super::{ParamSet, TensorRef};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Negative slope of the leaky ReLU.
pub const LEAKY_RELU_SLOPE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Linear,
    LeakyRelu { slope: f64 },
    Softmax,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu {
            slope: LEAKY_RELU_SLOPE,
        }
    }
}

pub fn leaky_relu(v: f64, slope: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            w: Matrix::zeros(input, output),
            b: vec![0.0; output],
            activation,
        }
    }

    pub fn glorot(input: usize, output: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        Self {
            w: Matrix::glorot(input, output, rng),
            b: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim(), self.activation)
    }

    pub fn count_for(input: usize, output: usize) -> usize {
        input * output + output
    }
}

impl ParamSet for DenseParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef {
                name: "w".into(),
                rows: self.w.rows(),
                cols: self.w.cols(),
                data: self.w.data(),
            },
            TensorRef {
                name: "b".into(),
                rows: 1,
                cols: self.b.len(),
                data: &self.b,
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.data_mut(), &mut self.b]
    }
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    y: Vec<f64>,
}

impl DenseCache {
    /// Pre-activation values `x·W + b`.
    pub fn pre_activation(&self) -> &[f64] {
        &self.pre
    }
}

/// `y = act(x·W + b)`.
pub fn dense_forward(p: &DenseParams, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
    if x.len() != p.input_dim() {
        return Err(Error::invalid(format!(
            "dense layer expects input {}, got {}",
            p.input_dim(),
            x.len()
        )));
    }
    let mut pre = p.b.clone();
    p.w.accum_vec_mul(x, &mut pre);
    let y = match p.activation {
        Activation::Linear => pre.clone(),
        Activation::LeakyRelu { slope } => pre.iter().map(|&v| leaky_relu(v, slope)).collect(),
        Activation::Softmax => softmax(&pre),
    };
    Ok((
        y.clone(),
        DenseCache {
            x: x.to_vec(),
            pre,
            y,
        },
    ))
}

/// Backward from dL/dy. Parameter gradients are added into `grads`; returns
/// dL/dx.
pub fn dense_backward(
    p: &DenseParams,
    cache: &DenseCache,
    grad_y: &[f64],
    grads: &mut DenseParams,
) -> Result<Vec<f64>> {
    if grad_y.len() != p.output_dim() {
        return Err(Error::invalid("dense backward: upstream length mismatch"));
    }
    let grad_pre: Vec<f64> = match p.activation {
        Activation::Linear => grad_y.to_vec(),
        Activation::LeakyRelu { slope } => grad_y
            .iter()
            .zip(&cache.pre)
            .map(|(g, v)| if *v >= 0.0 { *g } else { slope * g })
            .collect(),
        Activation::Softmax => {
            let gy = dot(grad_y, &cache.y);
            cache
                .y
                .iter()
                .zip(grad_y)
                .map(|(y, g)| y * (g - gy))
                .collect()
        }
    };
    dense_backward_pre(p, cache, &grad_pre, grads)
}

/// Backward from dL/d(pre-activation), bypassing the activation. Used with
/// the fused softmax + cross-entropy gradient `p − onehot`.
pub fn dense_backward_pre(
    p: &DenseParams,
    cache: &DenseCache,
    grad_pre: &[f64],
    grads: &mut DenseParams,
) -> Result<Vec<f64>> {
    if cache.x.len() != p.input_dim() || grad_pre.len() != p.output_dim() {
        return Err(Error::InvalidState("dense cache does not match layer".into()));
    }
    if grads.w.shape() != p.w.shape() {
        return Err(Error::invalid("dense gradient buffer shape mismatch"));
    }
    grads.w.add_outer(&cache.x, grad_pre);
    add_into(&mut grads.b, grad_pre);
    let mut gx = vec![0.0; p.input_dim()];
    p.w.accum_mul_transposed(grad_pre, &mut gx);
    Ok(gx)
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// `−ln probs[target]`.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    if target >= probs.len() {
        return Err(Error::invalid(format!(
            "target index {target} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-probs[target].max(f64::MIN_POSITIVE).ln())
}

/// Cross-entropy of `softmax(logits)` against `target`, computed through
/// log-sum-exp. Returns (loss, probabilities).
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "target index {target} out of range for {} classes",
            logits.len()
        )));
    }
    let logp = log_softmax(logits);
    let probs = logp.iter().map(|v| v.exp()).collect();
    Ok((-logp[target], probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer() {
        let mut p = DenseParams::zeros(3, 3, Activation::Linear);
        for i in 0..3 {
            p.w.set(i, i, 1.0);
        }
        let (y, _) = dense_forward(&p, &[1.5, -2.0, 0.25]).unwrap();
        assert_eq!(y, vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn leaky_slope() {
        assert_eq!(leaky_relu(-1.0, LEAKY_RELU_SLOPE), -0.3);
        assert_eq!(leaky_relu(2.0, LEAKY_RELU_SLOPE), 2.0);
    }

    #[test]
    fn dense_dimension_mismatch() {
        let p = DenseParams::zeros(3, 2, Activation::Linear);
        assert!(dense_forward(&p, &[1.0]).is_err());
    }

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let a = softmax(&[1.0, -2.0, 0.5]);
        let b = softmax(&[1001.0, 998.0, 1000.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_value() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        let loss = cross_entropy(&p, 2).unwrap();
        // −ln(e³ / (e + e² + e³)), evaluated independently.
        assert!((loss - 0.407_605_964_444_380_3).abs() < 1e-12);
        let (fused, _) = softmax_cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((fused - loss).abs() < 1e-14);
        assert!(cross_entropy(&p, 3).is_err());
    }

    proptest::proptest! {
        #[test]
        fn softmax_sums_to_one(v in proptest::collection::vec(-50.0f64..50.0, 1..40), c in -100.0f64..100.0) {
            let p = softmax(&v);
            let s: f64 = p.iter().sum();
            proptest::prop_assert!((s - 1.0).abs() < 1e-12);
            proptest::prop_assert!(p.iter().all(|x| *x > 0.0 && *x <= 1.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                proptest::prop_assert!((a - b).abs() < 1e-12);
            }
            let argmax = |x: &[f64]| x.iter().enumerate().fold(0, |m, (i, v)| if *v > x[m] { i } else { m });
            proptest::prop_assert_eq!(argmax(&p), argmax(&q));
        }
    }
}
