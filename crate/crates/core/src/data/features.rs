use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::{self, dim_u32, push_f32s, push_u32, ByteReader};
use crate::nn::Matrix;

/// Width of PANNs frame embeddings.
pub const PANN_FEATURE_DIM: usize = 2048;

const MAGIC: &[u8; 4] = b"AFC1";

/// Per-clip feature sequence, `frames × dim`, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::invalid(format!("feature matrix {frames}x{dim} is empty")));
        }
        if data.len() != frames * dim {
            return Err(Error::invalid(format!(
                "feature data length {} != {frames}x{dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "feature value at frame {}, column {} is not finite",
                i / dim,
                i % dim
            )));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.frames,
            self.dim,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("shape checked at construction")
    }

    /// AFC1 bytes: magic, u32 LE frames, u32 LE dim, then `frames·dim`
    /// f32 LE values, row-major.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(12 + 4 * self.data.len());
        buf.extend_from_slice(MAGIC);
        push_u32(&mut buf, dim_u32(self.frames, "frame count")?);
        push_u32(&mut buf, dim_u32(self.dim, "feature dim")?);
        push_f32s(&mut buf, self.data.iter().copied());
        Ok(buf)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(path, bytes);
        r.magic(MAGIC)?;
        let frames = r.u32("frame count")? as usize;
        let dim = r.u32("feature dim")? as usize;
        if frames == 0 || dim == 0 {
            return Err(r.error(format!("empty feature matrix {frames}x{dim}")));
        }
        let count = frames
            .checked_mul(dim)
            .ok_or_else(|| r.error(format!("dimensions {frames}x{dim} overflow")))?;
        let expected = count.checked_mul(4).ok_or_else(|| r.error("payload size overflows"))?;
        if r.remaining() != expected {
            return Err(r.error(format!(
                "payload for {frames}x{dim} needs {expected} bytes, file has {}",
                r.remaining()
            )));
        }
        let data = r.f32s(count, "feature payload")?;
        r.finish()?;
        Self::new(frames, dim, data).map_err(|e| Error::format(path, 12, e.to_string()))
    }
}

pub fn save_features(m: &FeatureMatrix, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &m.to_bytes()?)
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::from_bytes(path, &fsutil::read_bytes(path)?)
}
