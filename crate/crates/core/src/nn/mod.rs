//! Minimal numerical kernel: recurrent and dense layers with hand-derived
//! backward passes, batch normalization, dropout, softmax/cross-entropy and
//! the Adam optimizer. Everything runs in `f64`.

mod adam;
mod batchnorm;
mod dense;
mod dropout;
mod gru;
mod matrix;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_forward_train, BatchNormCache,
    BatchNormParams,
};
pub use dense::{
    cross_entropy, dense_backward, dense_backward_pre, dense_forward, leaky_relu, log_softmax,
    softmax, softmax_cross_entropy, Activation, DenseCache, DenseParams, LEAKY_RELU_SLOPE,
};
pub use dropout::{apply_mask, dropout, dropout_mask};
pub use gru::{
    bigru_layer_backward, bigru_layer_forward, bigru_layer_forward_cached, gru_cell_backward,
    gru_cell_backward_into, gru_cell_forward, gru_layer_backward, gru_layer_forward,
    gru_layer_forward_cached, BiGru, BiGruCache, GruCache, GruCellGrads, GruCellParams,
    GruSequenceCache,
};
pub use matrix::{add_into, dot, sigmoid, Matrix};

/// Whether a layer runs with training-time behavior (batch statistics,
/// dropout) or inference-time behavior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Read-only view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

/// A bundle of trainable tensors with a fixed, documented order.
///
/// `tensors` and `tensors_mut` must list the same tensors in the same order;
/// the optimizer and serializers rely on it.
pub trait ParamSet {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    /// Number of stored floats, by enumeration.
    fn stored_floats(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, ts: Vec<TensorRef<'a>>) -> Vec<TensorRef<'a>> {
    ts.into_iter()
        .map(|mut t| {
            t.name = format!("{prefix}.{}", t.name);
            t
        })
        .collect()
}
