//! Caption metrics: corpus BLEU-1..4, ROUGE_L, METEOR without synonyms,
//! plain CIDEr, and SPIDEr from an externally supplied SPICE score.

mod bleu;
mod cider;
mod meteor;
mod porter;
mod report;
mod rouge;

use std::collections::HashMap;

pub use bleu::{bleu, clipped};
pub use cider::{cider, cider_per_clip};
pub use meteor::{align, meteor_lite, meteor_pair, meteor_score, Alignment};
pub use porter::porter_stem;
pub use report::{evaluate, evaluate_pairs, spider, ClipScores, MetricReport, SpiceScores};
pub use rouge::{rouge_l, rouge_l_pair, ROUGE_BETA};

use crate::text::normalize_caption;

/// One evaluated clip: candidate and reference words, markers stripped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPair {
    pub clip_id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(clip_id: impl Into<String>, candidate: Vec<String>, references: Vec<Vec<String>>) -> Self {
        Self {
            clip_id: clip_id.into(),
            candidate,
            references,
        }
    }

    /// Build from raw caption text using the caption normalization rules.
    pub fn from_text<S: AsRef<str>>(clip_id: impl Into<String>, candidate: &str, references: &[S]) -> Self {
        let words = |s: &str| normalize_caption(s).words().to_vec();
        Self::new(
            clip_id,
            words(candidate),
            references.iter().map(|r| words(r.as_ref())).collect(),
        )
    }
}

/// Pairs in clip-id order, so corpus sums do not depend on input order.
fn canonical(pairs: &[EvalPair]) -> Vec<&EvalPair> {
    let mut v: Vec<&EvalPair> = pairs.iter().collect();
    v.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    v
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}
