use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::{load_features, FeatureMatrix};
use crate::error::{Error, Result};
use crate::events::{EventProbVector, NUM_CLASSES};
use crate::fsutil;

pub const CAPTIONS_PER_CLIP: usize = 5;

/// Clip counts of the Clotho V2 splits, for sanity-checking full manifests.
pub fn clotho_v2_split_size(split: &str) -> Option<usize> {
    match split {
        "development" => Some(3840),
        "validation" => Some(1046),
        "evaluation" => Some(1045),
        "test" => Some(1043),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    clip_id: String,
    feature_path: String,
    captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    event_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    event_probs_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventSource {
    Inline(EventProbVector),
    /// Path relative to the manifest directory: an AFC1 file of shape
    /// `1 × 527` or a JSON array of 527 numbers.
    File(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    /// As written in the manifest, relative to its directory.
    pub feature_path: String,
    pub captions: Vec<String>,
    pub events: EventSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub split: String,
    pub base_dir: PathBuf,
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn load_features(&self, rec: &ClipRecord) -> Result<FeatureMatrix> {
        load_features(&self.resolve(&rec.feature_path))
    }

    pub fn load_event_probs(&self, rec: &ClipRecord) -> Result<EventProbVector> {
        match &rec.events {
            EventSource::Inline(p) => Ok(p.clone()),
            EventSource::File(rel) => {
                let path = self.resolve(rel);
                let bytes = fsutil::read_bytes(&path)?;
                let probs: Vec<f64> = if bytes.starts_with(b"AFC1") {
                    let m = FeatureMatrix::from_bytes(&path, &bytes)?;
                    if m.frames() != 1 || m.dim() != NUM_CLASSES {
                        return Err(Error::format(
                            &path,
                            4,
                            format!("event file is {}x{}, expected 1x{NUM_CLASSES}", m.frames(), m.dim()),
                        ));
                    }
                    m.data().iter().map(|&v| f64::from(v)).collect()
                } else {
                    serde_json::from_slice(&bytes).map_err(|e| {
                        Error::format(&path, e.column() as u64, format!("event probs: {e}"))
                    })?
                };
                EventProbVector::new(probs)
                    .map_err(|e| Error::Validation(format!("clip {}: {e}", rec.clip_id)))
            }
        }
    }

    /// JSONL text, one record per line in manifest order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let (event_probs, event_probs_path) = match &r.events {
                EventSource::Inline(p) => (Some(p.probs().to_vec()), None),
                EventSource::File(f) => (None, Some(f.clone())),
            };
            let raw = RawRecord {
                clip_id: r.clip_id.clone(),
                feature_path: r.feature_path.clone(),
                captions: r.captions.clone(),
                event_probs,
                event_probs_path,
            };
            out.push_str(&serde_json::to_string(&raw).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_jsonl().as_bytes())
    }

    /// Parse and validate JSONL text. `base_dir` anchors relative paths;
    /// feature files are required to exist when `check_files` is set.
    pub fn parse(split: &str, base_dir: &Path, text: &str, check_files: bool) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        let mut duplicates = Vec::new();
        let mut bad_captions = Vec::new();
        let mut missing = Vec::new();
        let mut bad_events = Vec::new();

        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord = serde_json::from_str(line).map_err(|e| {
                Error::Validation(format!("manifest line {}: {e}", lineno + 1))
            })?;
            if !seen.insert(raw.clip_id.clone()) {
                duplicates.push(raw.clip_id.clone());
            }
            if raw.captions.len() != CAPTIONS_PER_CLIP {
                bad_captions.push(format!("{} ({})", raw.clip_id, raw.captions.len()));
            }
            if check_files && !base_dir.join(&raw.feature_path).is_file() {
                missing.push(raw.clip_id.clone());
            }
            let events = match (raw.event_probs, raw.event_probs_path) {
                (Some(p), None) => match EventProbVector::new(p) {
                    Ok(v) => Some(EventSource::Inline(v)),
                    Err(e) => {
                        bad_events.push(format!("{} ({e})", raw.clip_id));
                        None
                    }
                },
                (None, Some(f)) => {
                    if check_files && !base_dir.join(&f).is_file() {
                        missing.push(raw.clip_id.clone());
                    }
                    Some(EventSource::File(f))
                }
                _ => {
                    bad_events.push(format!(
                        "{} (exactly one of event_probs / event_probs_path required)",
                        raw.clip_id
                    ));
                    None
                }
            };
            if let Some(events) = events {
                records.push(ClipRecord {
                    clip_id: raw.clip_id,
                    feature_path: raw.feature_path,
                    captions: raw.captions,
                    events,
                });
            }
        }

        let mut problems = Vec::new();
        if !duplicates.is_empty() {
            problems.push(format!("duplicate clip_id: {}", duplicates.join(", ")));
        }
        if !bad_captions.is_empty() {
            problems.push(format!(
                "caption count != {CAPTIONS_PER_CLIP}: {}",
                bad_captions.join(", ")
            ));
        }
        if !missing.is_empty() {
            problems.push(format!("missing files for: {}", missing.join(", ")));
        }
        if !bad_events.is_empty() {
            problems.push(format!("invalid event probabilities: {}", bad_events.join(", ")));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems.join("; ")));
        }
        if records.is_empty() {
            return Err(Error::Validation(format!("manifest {split:?} has no records")));
        }
        Ok(Manifest {
            split: split.to_string(),
            base_dir: base_dir.to_path_buf(),
            records,
        })
    }
}

/// Load a JSONL manifest. The split name is the file stem; relative paths
/// resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fsutil::read_text(path)?;
    let split = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let m = Manifest::parse(&split, &base, &text, true)?;
    match clotho_v2_split_size(&split) {
        Some(n) if n != m.len() => log::warn!(
            "manifest {split}: {} clips (Clotho V2 {split} has {n})",
            m.len()
        ),
        _ => log::info!("manifest {split}: {} clips", m.len()),
    }
    Ok(m)
}

/// One training item per (clip, caption), clip-major.
pub fn oversample(manifest: &Manifest) -> Vec<(String, usize)> {
    manifest
        .records
        .iter()
        .flat_map(|r| (0..r.captions.len()).map(move |k| (r.clip_id.clone(), k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, n_captions: usize) -> String {
        let caps: Vec<String> = (0..n_captions).map(|i| format!("caption {i}")).collect();
        serde_json::json!({
            "clip_id": id,
            "feature_path": format!("{id}.afc"),
            "captions": caps,
            "event_probs": vec![0.0; NUM_CLASSES],
        })
        .to_string()
    }

    #[test]
    fn parses_three_clips() {
        let text = [line("a", 5), line("b", 5), line("c", 5)].join("\n");
        let m = Manifest::parse("dev", Path::new("."), &text, false).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(oversample(&m).len(), 15);
        assert_eq!(oversample(&m)[5], ("b".to_string(), 0));
    }

    #[test]
    fn rejects_wrong_caption_count_citing_clip() {
        let text = [line("good", 5), line("short_one", 4)].join("\n");
        let err = Manifest::parse("dev", Path::new("."), &text, false).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("short_one"));
        assert!(!err.to_string().contains("good"));
    }

    #[test]
    fn rejects_duplicates_and_missing_files() {
        let text = [line("x", 5), line("x", 5)].join("\n");
        let err = Manifest::parse("dev", Path::new("."), &text, false).unwrap_err();
        assert!(err.to_string().contains("duplicate clip_id: x"));
        let dir = tempfile::tempdir().unwrap();
        let err = Manifest::parse("dev", dir.path(), &line("ghost", 5), true).unwrap_err();
        assert!(err.to_string().contains("ghost"));
        assert!(Manifest::parse("dev", Path::new("."), "", false).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let text = [line("a", 5), line("b", 5)].join("\n");
        let m = Manifest::parse("dev", Path::new("."), &text, false).unwrap();
        let again = Manifest::parse("dev", Path::new("."), &m.to_jsonl(), false).unwrap();
        assert_eq!(again, m);
        assert_eq!(again.to_jsonl(), m.to_jsonl());
    }

    #[test]
    fn clotho_sizes() {
        assert_eq!(clotho_v2_split_size("development"), Some(3840));
        assert_eq!(clotho_v2_split_size("development").unwrap() * CAPTIONS_PER_CLIP, 19200);
    }
}
