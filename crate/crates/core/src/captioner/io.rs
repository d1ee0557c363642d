//! ACM1 model files.
//!
//! Layout: magic `ACM1`, u32 LE format version, u32 LE header length, a UTF-8
//! JSON header (model config, vocabulary, event label table, event corpus,
//! threshold, tensor list), then every tensor in header order as f32 LE
//! values, row-major. Tensor order: `bn.gamma`, `bn.beta`,
//! `bn.running_mean`, `bn.running_var`, `bigru1.{fwd,bwd}.*`,
//! `bigru2.{fwd,bwd}.*`, `caption_gru.*`, `decoder_gru.*`,
//! `hidden_dense.{w,b}` (when enabled), `output_dense.{w,b}`, `embeddings`.
//! GRU tensors are `w_z w_r w_h u_z u_r u_h b_z b_r b_h`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::forward::{greedy_caption, ClipInput, Example};
use super::model::CaptionerModel;
use crate::data::{FeatureMatrix, Manifest};
use crate::error::{Error, Result};
use crate::events::{EventCorpus, EventEncoder, EventLabelTable, EventProbVector};
use crate::fsutil::{self, dim_u32, push_f32s, push_u32, ByteReader};
use crate::text::{normalize_caption, TokenSeq, Vocabulary};

const MAGIC: &[u8; 4] = b"ACM1";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained model together with the vocabulary and event encoder it was
/// trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct Captioner {
    pub model: CaptionerModel,
    pub vocab: Vocabulary,
    pub events: EventEncoder,
}

impl Captioner {
    pub fn new(model: CaptionerModel, vocab: Vocabulary, events: EventEncoder) -> Result<Self> {
        let c = &model.config;
        if vocab.len() != c.vocab_size || events.dim() != c.event_dim {
            return Err(Error::invalid(format!(
                "model expects vocab {} / events {}, got {} / {}",
                c.vocab_size,
                c.event_dim,
                vocab.len(),
                events.dim()
            )));
        }
        Ok(Self { model, vocab, events })
    }

    pub fn caption(&self, feats: &FeatureMatrix, probs: &EventProbVector) -> Result<TokenSeq> {
        let ev = self.events.encode(probs);
        greedy_caption(&self.model, feats, &ev, &self.vocab, self.model.config.arch.max_decode_len)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.model.stored_tensors();
        let header = Header {
            config: self.model.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            event_labels: self.events.table().labels().to_vec(),
            event_corpus: self.events.corpus().tokens().to_vec(),
            event_threshold: self.events.threshold(),
            tensors: tensors
                .iter()
                .map(|t| TensorSpec {
                    name: t.name.clone(),
                    rows: t.rows,
                    cols: t.cols,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::invalid(format!("cannot serialize model header: {e}")))?;
        let floats: usize = tensors.iter().map(|t| t.data.len()).sum();
        let mut buf = Vec::with_capacity(12 + json.len() + 4 * floats);
        buf.extend_from_slice(MAGIC);
        push_u32(&mut buf, MODEL_FORMAT_VERSION);
        push_u32(&mut buf, dim_u32(json.len(), "header length")?);
        buf.extend_from_slice(&json);
        for t in &tensors {
            push_f32s(&mut buf, t.data.iter().map(|&v| v as f32));
        }
        Ok(buf)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.magic(MAGIC)?;
        let version = r.u32("format version")?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::format(
                path,
                4,
                format!("model format version {version}, this build reads {MODEL_FORMAT_VERSION}"),
            ));
        }
        let header_len = r.u32("header length")? as usize;
        let header_at = r.offset();
        let raw = r.take(header_len, "model header")?;
        let header: Header = serde_json::from_slice(raw)
            .map_err(|e| Error::format(path, header_at, format!("bad model header: {e}")))?;
        let bad = |msg: String| Error::format(path, header_at, msg);

        let vocab = Vocabulary::from_text(&lines(&header.vocab)).map_err(|e| bad(e.to_string()))?;
        let table = EventLabelTable::new(header.event_labels).map_err(|e| bad(e.to_string()))?;
        let corpus = EventCorpus::from_text(&lines(&header.event_corpus)).map_err(|e| bad(e.to_string()))?;
        let events = EventEncoder::new(table, corpus, header.event_threshold).map_err(|e| bad(e.to_string()))?;
        let mut model = CaptionerModel::zeros(&header.config).map_err(|e| bad(e.to_string()))?;

        let expected: Vec<TensorSpec> = model
            .stored_tensors()
            .iter()
            .map(|t| TensorSpec {
                name: t.name.clone(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect();
        if expected != header.tensors {
            return Err(bad("tensor list does not match the model config".into()));
        }
        for (dst, spec) in model.stored_tensors_mut().into_iter().zip(&header.tensors) {
            let vals = r.f32s(spec.rows * spec.cols, &spec.name)?;
            if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
                return Err(r.error(format!("tensor {} contains {v}", spec.name)));
            }
            dst.iter_mut().zip(vals).for_each(|(d, v)| *d = f64::from(v));
        }
        r.finish()?;
        Self::new(model, vocab, events).map_err(|e| bad(e.to_string()))
    }
}

fn lines(items: &[String]) -> String {
    items.iter().map(|s| format!("{s}\n")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    event_labels: Vec<String>,
    event_corpus: Vec<String>,
    event_threshold: f64,
    tensors: Vec<TensorSpec>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorSpec {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn save_model(c: &Captioner, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &c.to_bytes()?)
}

pub fn load_model(path: &Path) -> Result<Captioner> {
    Captioner::from_bytes(path, &fsutil::read_bytes(path)?)
}

/// Training examples for every (clip, caption) pair of `manifest`, clip
/// order × caption index. Words missing from `vocab` map to `<unk>`.
pub fn build_examples(manifest: &Manifest, vocab: &Vocabulary, events: &EventEncoder) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(manifest.len() * 5);
    for rec in &manifest.records {
        let feats = manifest.load_features(rec)?;
        let ev = events.encode(&manifest.load_event_probs(rec)?);
        let clip = Arc::new(ClipInput::new(&feats, &ev));
        for cap in &rec.captions {
            out.push(Example::new(clip.clone(), vocab.encode(&normalize_caption(cap)))?);
        }
    }
    Ok(out)
}
