use std::path::{Path, PathBuf};

use sedcap::captioner::{Architecture, TrainConfig};
use sedcap::embeddings::SkipGramConfig;
use sedcap::events::DEFAULT_THRESHOLD;
use sedcap::{Error, Result};
use serde::Deserialize;

pub const DEFAULT_SEED: u64 = 42;

/// JSON run configuration. Every field is optional; command-line flags win
/// over values given here. `seed` is the single source of randomness and
/// replaces the seeds inside `training` and `skipgram`.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub event_threshold: Option<f64>,
    pub architecture: Architecture,
    pub training: TrainConfig,
    pub skipgram: SkipGramConfig,
    pub paths: Paths,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub labels: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub history: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = sedcap::fsutil::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))
    }

    /// Resolve seed and thread count (flag, then config, then default), push
    /// the seed into every sub-config, and validate before any work starts.
    pub fn finish(mut self, seed: Option<u64>, threads: Option<usize>) -> Result<Self> {
        let seed = seed.or(self.seed).unwrap_or(DEFAULT_SEED);
        self.seed = Some(seed);
        self.threads = Some(threads.or(self.threads).unwrap_or(1));
        self.training.seed = seed;
        self.skipgram.seed = seed;
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("threads must be >= 1".into()));
        }
        let t = self.threshold();
        if !(0.0..1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("event_threshold {t} not in [0, 1)")));
        }
        self.training.validate()?;
        self.skipgram.validate()?;
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or(1)
    }

    pub fn threshold(&self) -> f64 {
        self.event_threshold.unwrap_or(DEFAULT_THRESHOLD)
    }
}

/// Flag value, else config value, else a "missing" error naming the flag.
pub fn pick(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| Error::InvalidArgument(format!("--{name} is required (flag or paths.{name} in the config)")))
}
