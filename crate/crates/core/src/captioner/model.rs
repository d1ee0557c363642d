use super::config::ModelConfig;
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::nn::{prefixed, Activation, BatchNormParams, BiGru, DenseParams, GruCellParams, Matrix, ParamSet, TensorRef};
use crate::rng::SeededRng;

/// Encoder (batch norm + two BiGRU layers), caption GRU, single-step decoder
/// GRU, optional LeakyReLU projection, softmax output, and the word
/// embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionerModel {
    pub config: ModelConfig,
    pub bn: BatchNormParams,
    pub bigru1: BiGru,
    pub bigru2: BiGru,
    pub caption_gru: GruCellParams,
    pub decoder_gru: GruCellParams,
    pub hidden: Option<DenseParams>,
    pub output: DenseParams,
    pub embeddings: Matrix,
}

impl CaptionerModel {
    /// All weights zero, batch norm at its identity initialization.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let a = &c.arch;
        Ok(Self {
            config: c.clone(),
            bn: BatchNormParams::new(c.encoder_input_dim()),
            bigru1: BiGru::zeros(c.encoder_input_dim(), a.bigru1_cells),
            bigru2: BiGru::zeros(2 * a.bigru1_cells, a.bigru2_cells),
            caption_gru: GruCellParams::zeros(a.embed_dim, a.caption_gru_cells),
            decoder_gru: GruCellParams::zeros(c.decoder_input_dim(), a.decoder_gru_cells),
            hidden: a
                .use_leaky_dense
                .then(|| DenseParams::zeros(a.decoder_gru_cells, a.leaky_dense_units, Activation::leaky())),
            output: DenseParams::zeros(c.output_input_dim(), c.vocab_size, Activation::Softmax),
            embeddings: Matrix::zeros(c.vocab_size, a.embed_dim),
        })
    }

    /// Gradient buffer: same trainable shapes, all zero. The embedding table
    /// is left empty when embeddings are frozen.
    pub fn zeros_like(&self) -> Self {
        let mut g = Self {
            config: self.config.clone(),
            bn: self.bn.zeros_like(),
            bigru1: self.bigru1.zeros_like(),
            bigru2: self.bigru2.zeros_like(),
            caption_gru: self.caption_gru.zeros_like(),
            decoder_gru: self.decoder_gru.zeros_like(),
            hidden: self.hidden.as_ref().map(DenseParams::zeros_like),
            output: self.output.zeros_like(),
            embeddings: Matrix::zeros(0, 0),
        };
        if self.config.arch.train_embeddings {
            g.embeddings = Matrix::zeros(self.embeddings.rows(), self.embeddings.cols());
        }
        g
    }

    /// Count of trainable scalars, by enumeration.
    pub fn parameter_count(&self) -> usize {
        self.stored_floats()
    }

    /// Every stored tensor in serialization order, including batch-norm
    /// running statistics and the embedding table whether or not they train.
    pub fn stored_tensors(&self) -> Vec<TensorRef<'_>> {
        let d = self.bn.dim();
        let mut v = vec![
            tensor("bn.gamma", 1, d, &self.bn.gamma),
            tensor("bn.beta", 1, d, &self.bn.beta),
            tensor("bn.running_mean", 1, d, &self.bn.running_mean),
            tensor("bn.running_var", 1, d, &self.bn.running_var),
        ];
        v.extend(self.layer_tensors());
        v.push(tensor(
            "embeddings",
            self.embeddings.rows(),
            self.embeddings.cols(),
            self.embeddings.data(),
        ));
        v
    }

    pub fn stored_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            &mut self.bn.gamma,
            &mut self.bn.beta,
            &mut self.bn.running_mean,
            &mut self.bn.running_var,
        ];
        v.extend(self.bigru1.tensors_mut());
        v.extend(self.bigru2.tensors_mut());
        v.extend(self.caption_gru.tensors_mut());
        v.extend(self.decoder_gru.tensors_mut());
        if let Some(h) = self.hidden.as_mut() {
            v.extend(h.tensors_mut());
        }
        v.extend(self.output.tensors_mut());
        v.push(self.embeddings.data_mut());
        v
    }

    /// Round every stored value to the nearest `f32`, so that a model file
    /// written afterwards reloads to exactly this model.
    pub fn quantize_f32(&mut self) {
        for t in self.stored_tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.stored_tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    fn layer_tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = prefixed("bigru1", self.bigru1.tensors());
        v.extend(prefixed("bigru2", self.bigru2.tensors()));
        v.extend(prefixed("caption_gru", self.caption_gru.tensors()));
        v.extend(prefixed("decoder_gru", self.decoder_gru.tensors()));
        if let Some(h) = &self.hidden {
            v.extend(prefixed("hidden_dense", h.tensors()));
        }
        v.extend(prefixed("output_dense", self.output.tensors()));
        v
    }
}

fn tensor<'a>(name: &str, rows: usize, cols: usize, data: &'a [f64]) -> TensorRef<'a> {
    TensorRef {
        name: name.to_string(),
        rows,
        cols,
        data,
    }
}

/// Trainable tensors: batch-norm scale/shift, every layer, and the
/// embedding table only when `train_embeddings` is set.
impl ParamSet for CaptionerModel {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let d = self.bn.dim();
        let mut v = vec![
            tensor("bn.gamma", 1, d, &self.bn.gamma),
            tensor("bn.beta", 1, d, &self.bn.beta),
        ];
        v.extend(self.layer_tensors());
        if self.config.arch.train_embeddings {
            v.push(tensor(
                "embeddings",
                self.embeddings.rows(),
                self.embeddings.cols(),
                self.embeddings.data(),
            ));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let train_emb = self.config.arch.train_embeddings;
        let mut v: Vec<&mut [f64]> = vec![&mut self.bn.gamma, &mut self.bn.beta];
        v.extend(self.bigru1.tensors_mut());
        v.extend(self.bigru2.tensors_mut());
        v.extend(self.caption_gru.tensors_mut());
        v.extend(self.decoder_gru.tensors_mut());
        if let Some(h) = self.hidden.as_mut() {
            v.extend(h.tensors_mut());
        }
        v.extend(self.output.tensors_mut());
        if train_emb {
            v.push(self.embeddings.data_mut());
        }
        v
    }
}

/// Glorot-uniform weights, zero biases. Embeddings are copied from
/// `embeddings` when given, otherwise drawn uniform(±0.5/dim) like the
/// skip-gram initialization.
pub fn build_model(
    config: &ModelConfig,
    embeddings: Option<&EmbeddingMatrix>,
    rng: &mut SeededRng,
) -> Result<CaptionerModel> {
    config.validate()?;
    let c = config;
    let a = &c.arch;
    let emb = match embeddings {
        Some(e) => {
            if e.vocab_size() != c.vocab_size || e.dim() != a.embed_dim {
                return Err(Error::invalid(format!(
                    "embeddings are {}x{}, model expects {}x{}",
                    e.vocab_size(),
                    e.dim(),
                    c.vocab_size,
                    a.embed_dim
                )));
            }
            e.matrix().clone()
        }
        None => {
            let b = 0.5 / a.embed_dim as f64;
            Matrix::uniform(c.vocab_size, a.embed_dim, -b, b, rng)
        }
    };
    let model = CaptionerModel {
        config: c.clone(),
        bn: BatchNormParams::new(c.encoder_input_dim()),
        bigru1: BiGru::glorot(c.encoder_input_dim(), a.bigru1_cells, rng),
        bigru2: BiGru::glorot(2 * a.bigru1_cells, a.bigru2_cells, rng),
        caption_gru: GruCellParams::glorot(a.embed_dim, a.caption_gru_cells, rng),
        decoder_gru: GruCellParams::glorot(c.decoder_input_dim(), a.decoder_gru_cells, rng),
        hidden: a
            .use_leaky_dense
            .then(|| DenseParams::glorot(a.decoder_gru_cells, a.leaky_dense_units, Activation::leaky(), rng)),
        output: DenseParams::glorot(c.output_input_dim(), c.vocab_size, Activation::Softmax, rng),
        embeddings: emb,
    };
    log::info!("captioner has {} trainable parameters", model.parameter_count());
    Ok(model)
}

/// Closed-form trainable parameter count for `config`.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let c = config;
    let a = &c.arch;
    let gru = GruCellParams::count_for;
    let mut n = 2 * c.encoder_input_dim()
        + 2 * gru(c.encoder_input_dim(), a.bigru1_cells)
        + 2 * gru(2 * a.bigru1_cells, a.bigru2_cells)
        + gru(a.embed_dim, a.caption_gru_cells)
        + gru(c.decoder_input_dim(), a.decoder_gru_cells)
        + DenseParams::count_for(c.output_input_dim(), c.vocab_size);
    if a.use_leaky_dense {
        n += DenseParams::count_for(a.decoder_gru_cells, a.leaky_dense_units);
    }
    if a.train_embeddings {
        n += c.vocab_size * a.embed_dim;
    }
    n
}
