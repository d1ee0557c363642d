//! Gated recurrent units.
//!
//! Cell equations (row-vector convention):
//!
//! ```text
//! z  = σ(x·W_z + h·U_z + b_z)
//! r  = σ(x·W_r + h·U_r + b_r)
//! h̃  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! The reset gate is applied to the previous state before the candidate's
//! recurrent product.

use super::matrix::{add_into, sigmoid, Matrix};
use super::{prefixed, ParamSet, TensorRef};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruCellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Matrix::zeros(input_dim, hidden_dim);
        let u = || Matrix::zeros(hidden_dim, hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: vec![0.0; hidden_dim],
            b_r: vec![0.0; hidden_dim],
            b_h: vec![0.0; hidden_dim],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        for m in [&mut p.w_z, &mut p.w_r, &mut p.w_h] {
            *m = Matrix::glorot(input_dim, hidden_dim, rng);
        }
        for m in [&mut p.u_z, &mut p.u_r, &mut p.u_h] {
            *m = Matrix::glorot(hidden_dim, hidden_dim, rng);
        }
        p
    }

    /// `3·(input·hidden + hidden² + hidden)`.
    pub fn count_for(input_dim: usize, hidden_dim: usize) -> usize {
        3 * (input_dim * hidden_dim + hidden_dim * hidden_dim + hidden_dim)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim)
    }

    fn check(&self, x: &[f64], h_prev: &[f64]) -> Result<()> {
        if x.len() != self.input_dim || h_prev.len() != self.hidden_dim {
            return Err(Error::invalid(format!(
                "gru cell expects input {} / hidden {}, got {} / {}",
                self.input_dim,
                self.hidden_dim,
                x.len(),
                h_prev.len()
            )));
        }
        Ok(())
    }
}

impl ParamSet for GruCellParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let (i, h) = (self.input_dim, self.hidden_dim);
        fn t<'a>(name: &str, rows: usize, cols: usize, data: &'a [f64]) -> TensorRef<'a> {
            TensorRef {
                name: name.to_string(),
                rows,
                cols,
                data,
            }
        }
        vec![
            t("w_z", i, h, self.w_z.data()),
            t("w_r", i, h, self.w_r.data()),
            t("w_h", i, h, self.w_h.data()),
            t("u_z", h, h, self.u_z.data()),
            t("u_r", h, h, self.u_r.data()),
            t("u_h", h, h, self.u_h.data()),
            t("b_z", 1, h, &self.b_z),
            t("b_r", 1, h, &self.b_r),
            t("b_h", 1, h, &self.b_h),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_z.data_mut(),
            self.w_r.data_mut(),
            self.w_h.data_mut(),
            self.u_z.data_mut(),
            self.u_r.data_mut(),
            self.u_h.data_mut(),
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }
}

/// Intermediates of one cell step, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    candidate: Vec<f64>,
}

pub fn gru_cell_forward(p: &GruCellParams, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruCache)> {
    p.check(x, h_prev)?;
    let n = p.hidden_dim;

    let mut z = p.b_z.clone();
    p.w_z.accum_vec_mul(x, &mut z);
    p.u_z.accum_vec_mul(h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut r = p.b_r.clone();
    p.w_r.accum_vec_mul(x, &mut r);
    p.u_r.accum_vec_mul(h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let reset_h: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut cand = p.b_h.clone();
    p.w_h.accum_vec_mul(x, &mut cand);
    p.u_h.accum_vec_mul(&reset_h, &mut cand);
    cand.iter_mut().for_each(|v| *v = v.tanh());

    let h: Vec<f64> = (0..n)
        .map(|j| (1.0 - z[j]) * h_prev[j] + z[j] * cand[j])
        .collect();

    Ok((
        h,
        GruCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            candidate: cand,
        },
    ))
}

/// Gradients of one cell step.
#[derive(Clone, Debug)]
pub struct GruCellGrads {
    pub params: GruCellParams,
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
}

pub fn gru_cell_backward(p: &GruCellParams, cache: &GruCache, grad_h: &[f64]) -> Result<GruCellGrads> {
    let mut params = p.zeros_like();
    let mut x = vec![0.0; p.input_dim];
    let mut h_prev = vec![0.0; p.hidden_dim];
    gru_cell_backward_into(p, cache, grad_h, &mut params, &mut x, &mut h_prev)?;
    Ok(GruCellGrads { params, x, h_prev })
}

/// Accumulating form of [`gru_cell_backward`]: adds parameter gradients into
/// `grads` and input/state gradients into `grad_x` / `grad_h_prev`.
pub fn gru_cell_backward_into(
    p: &GruCellParams,
    cache: &GruCache,
    grad_h: &[f64],
    grads: &mut GruCellParams,
    grad_x: &mut [f64],
    grad_h_prev: &mut [f64],
) -> Result<()> {
    let n = p.hidden_dim;
    if cache.x.len() != p.input_dim || cache.h_prev.len() != n {
        return Err(Error::InvalidState(format!(
            "gru cache built for input {} / hidden {}, params are {} / {}",
            cache.x.len(),
            cache.h_prev.len(),
            p.input_dim,
            n
        )));
    }
    if grads.input_dim != p.input_dim || grads.hidden_dim != n {
        return Err(Error::invalid("gradient buffer shape mismatch"));
    }
    if grad_h.len() != n || grad_x.len() != p.input_dim || grad_h_prev.len() != n {
        return Err(Error::invalid("gru backward: gradient length mismatch"));
    }
    let GruCache {
        x,
        h_prev,
        z,
        r,
        candidate,
    } = cache;

    let mut da_z = vec![0.0; n];
    let mut da_h = vec![0.0; n];
    for j in 0..n {
        let g = grad_h[j];
        grad_h_prev[j] += g * (1.0 - z[j]);
        let dz = g * (candidate[j] - h_prev[j]);
        da_z[j] = dz * z[j] * (1.0 - z[j]);
        let dcand = g * z[j];
        da_h[j] = dcand * (1.0 - candidate[j] * candidate[j]);
    }

    // Candidate path.
    let reset_h: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    grads.w_h.add_outer(x, &da_h);
    grads.u_h.add_outer(&reset_h, &da_h);
    add_into(&mut grads.b_h, &da_h);
    p.w_h.accum_mul_transposed(&da_h, grad_x);
    let mut d_reset_h = vec![0.0; n];
    p.u_h.accum_mul_transposed(&da_h, &mut d_reset_h);

    let mut da_r = vec![0.0; n];
    for j in 0..n {
        grad_h_prev[j] += d_reset_h[j] * r[j];
        let dr = d_reset_h[j] * h_prev[j];
        da_r[j] = dr * r[j] * (1.0 - r[j]);
    }

    // Gate paths.
    grads.w_z.add_outer(x, &da_z);
    grads.u_z.add_outer(h_prev, &da_z);
    add_into(&mut grads.b_z, &da_z);
    p.w_z.accum_mul_transposed(&da_z, grad_x);
    p.u_z.accum_mul_transposed(&da_z, grad_h_prev);

    grads.w_r.add_outer(x, &da_r);
    grads.u_r.add_outer(h_prev, &da_r);
    add_into(&mut grads.b_r, &da_r);
    p.w_r.accum_mul_transposed(&da_r, grad_x);
    p.u_r.accum_mul_transposed(&da_r, grad_h_prev);

    Ok(())
}

#[derive(Clone, Debug)]
pub struct GruSequenceCache {
    steps: Vec<GruCache>,
}

impl GruSequenceCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Run the cell over every row of `seq`; row `t` of the result is `h_t`.
/// `h0` defaults to zeros.
pub fn gru_layer_forward(p: &GruCellParams, seq: &Matrix, h0: Option<&[f64]>) -> Result<Matrix> {
    gru_layer_forward_cached(p, seq, h0).map(|(m, _)| m)
}

pub fn gru_layer_forward_cached(
    p: &GruCellParams,
    seq: &Matrix,
    h0: Option<&[f64]>,
) -> Result<(Matrix, GruSequenceCache)> {
    if seq.rows() == 0 {
        return Err(Error::invalid("gru layer: empty sequence"));
    }
    if seq.cols() != p.input_dim {
        return Err(Error::invalid(format!(
            "gru layer: sequence width {} != input dim {}",
            seq.cols(),
            p.input_dim
        )));
    }
    let mut h = match h0 {
        Some(h0) => h0.to_vec(),
        None => vec![0.0; p.hidden_dim],
    };
    let mut out = Matrix::zeros(seq.rows(), p.hidden_dim);
    let mut steps = Vec::with_capacity(seq.rows());
    for t in 0..seq.rows() {
        let (next, cache) = gru_cell_forward(p, seq.row(t), &h)?;
        out.row_mut(t).copy_from_slice(&next);
        steps.push(cache);
        h = next;
    }
    Ok((out, GruSequenceCache { steps }))
}

/// Backpropagation through time. `grad_out` row `t` is dL/dh_t from outside
/// the recurrence. Returns (dL/dseq, dL/dh0); parameter gradients are added
/// into `grads`.
pub fn gru_layer_backward(
    p: &GruCellParams,
    cache: &GruSequenceCache,
    grad_out: &Matrix,
    grads: &mut GruCellParams,
) -> Result<(Matrix, Vec<f64>)> {
    let steps = cache.steps.len();
    if grad_out.rows() != steps || grad_out.cols() != p.hidden_dim {
        return Err(Error::InvalidState(format!(
            "gru layer backward: cache has {steps} steps, upstream gradient is {}x{}",
            grad_out.rows(),
            grad_out.cols()
        )));
    }
    let mut grad_seq = Matrix::zeros(steps, p.input_dim);
    let mut carry = vec![0.0; p.hidden_dim];
    for t in (0..steps).rev() {
        let mut gh = grad_out.row(t).to_vec();
        add_into(&mut gh, &carry);
        let mut next_carry = vec![0.0; p.hidden_dim];
        gru_cell_backward_into(
            p,
            &cache.steps[t],
            &gh,
            grads,
            grad_seq.row_mut(t),
            &mut next_carry,
        )?;
        carry = next_carry;
    }
    Ok((grad_seq, carry))
}

/// Bidirectional GRU layer: forward and backward cells with equal hidden size.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGru {
    pub fwd: GruCellParams,
    pub bwd: GruCellParams,
}

impl BiGru {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            fwd: GruCellParams::zeros(input_dim, hidden_dim),
            bwd: GruCellParams::zeros(input_dim, hidden_dim),
        }
    }

    pub fn glorot(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let fwd = GruCellParams::glorot(input_dim, hidden_dim, rng);
        let bwd = GruCellParams::glorot(input_dim, hidden_dim, rng);
        Self { fwd, bwd }
    }

    pub fn hidden_dim(&self) -> usize {
        self.fwd.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fwd: self.fwd.zeros_like(),
            bwd: self.bwd.zeros_like(),
        }
    }

    pub fn forward(&self, seq: &Matrix) -> Result<Matrix> {
        bigru_layer_forward(&self.fwd, &self.bwd, seq)
    }
}

impl ParamSet for BiGru {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = prefixed("fwd", self.fwd.tensors());
        v.extend(prefixed("bwd", self.bwd.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.fwd.tensors_mut();
        v.extend(self.bwd.tensors_mut());
        v
    }
}

#[derive(Clone, Debug)]
pub struct BiGruCache {
    fwd: GruSequenceCache,
    bwd: GruSequenceCache,
}

/// Row `t` is `[h_fwd(t) | h_bwd(t)]`, where the backward half runs over the
/// time-reversed sequence and is re-reversed to align with `t`.
pub fn bigru_layer_forward(fwd: &GruCellParams, bwd: &GruCellParams, seq: &Matrix) -> Result<Matrix> {
    bigru_layer_forward_cached(fwd, bwd, seq).map(|(m, _)| m)
}

pub fn bigru_layer_forward_cached(
    fwd: &GruCellParams,
    bwd: &GruCellParams,
    seq: &Matrix,
) -> Result<(Matrix, BiGruCache)> {
    if fwd.hidden_dim != bwd.hidden_dim || fwd.input_dim != bwd.input_dim {
        return Err(Error::invalid(format!(
            "bigru directions disagree: fwd {}->{}, bwd {}->{}",
            fwd.input_dim, fwd.hidden_dim, bwd.input_dim, bwd.hidden_dim
        )));
    }
    let (hf, cf) = gru_layer_forward_cached(fwd, seq, None)?;
    let (hb_rev, cb) = gru_layer_forward_cached(bwd, &seq.reversed_rows(), None)?;
    let out = hf.hconcat(&hb_rev.reversed_rows())?;
    Ok((out, BiGruCache { fwd: cf, bwd: cb }))
}

/// Returns dL/dseq; parameter gradients are added into `grads`.
pub fn bigru_layer_backward(
    layer: &BiGru,
    cache: &BiGruCache,
    grad_out: &Matrix,
    grads: &mut BiGru,
) -> Result<Matrix> {
    let h = layer.hidden_dim();
    if grad_out.cols() != 2 * h {
        return Err(Error::InvalidState(format!(
            "bigru backward: upstream width {} != {}",
            grad_out.cols(),
            2 * h
        )));
    }
    let gf = grad_out.columns(0, h);
    let gb_rev = grad_out.columns(h, h).reversed_rows();
    let (mut dseq, _) = gru_layer_backward(&layer.fwd, &cache.fwd, &gf, &mut grads.fwd)?;
    let (dseq_rev, _) = gru_layer_backward(&layer.bwd, &cache.bwd, &gb_rev, &mut grads.bwd)?;
    dseq.add_assign(&dseq_rev.reversed_rows());
    Ok(dseq)
}
