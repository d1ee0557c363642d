use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{bleu, canonical, cider_per_clip, meteor_pair, rouge_l_pair, EvalPair};
use crate::error::{Error, Result};
use crate::fsutil;

pub const REFERENCES_PER_CLIP: usize = 5;

/// (cider + spice) / 2, or `None` without a SPICE score.
pub fn spider(cider: f64, spice: Option<f64>) -> Result<Option<f64>> {
    match spice {
        None => Ok(None),
        Some(s) if !(0.0..=1.0).contains(&s) => Err(Error::Validation(format!("SPICE score {s} is outside [0, 1]"))),
        Some(s) => Ok(Some((cider + s) / 2.0)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipScores {
    pub clip_id: String,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spice: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub spice: Option<f64>,
    pub spider: Option<f64>,
    pub clips: Vec<ClipScores>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Two aligned rows: metric names, then scores to three decimals.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        let cols = [
            ("BLEU-1", Some(self.bleu1)),
            ("BLEU-2", Some(self.bleu2)),
            ("BLEU-3", Some(self.bleu3)),
            ("BLEU-4", Some(self.bleu4)),
            ("METEOR", Some(self.meteor)),
            ("ROUGE_L", Some(self.rouge_l)),
            ("CIDEr", Some(self.cider)),
            ("SPICE", self.spice),
            ("SPIDEr", self.spider),
        ];
        let (mut head, mut row) = (String::new(), String::new());
        for (i, (name, v)) in cols.iter().enumerate() {
            let v = fmt(*v);
            let w = name.len().max(v.len());
            let sep = if i == 0 { "" } else { "  " };
            let _ = write!(head, "{sep}{name:>w$}");
            let _ = write!(row, "{sep}{v:>w$}");
        }
        format!("{head}\n{row}\n")
    }
}

/// SPICE supplied from outside, either per clip or one corpus score.
#[derive(Clone, Debug, PartialEq)]
pub enum SpiceScores {
    PerClip(BTreeMap<String, f64>),
    Corpus(f64),
}

impl SpiceScores {
    pub fn parse_jsonl(path: &Path, text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Line {
            clip_id: Option<String>,
            spice: f64,
        }
        let mut per_clip = BTreeMap::new();
        let mut corpus = None;
        for (i, l) in nonblank(text) {
            let line: Line = parse_line(path, i, l)?;
            match line.clip_id {
                Some(id) => {
                    if per_clip.insert(id.clone(), line.spice).is_some() {
                        return Err(Error::Validation(format!("{}: duplicate SPICE clip_id {id}", path.display())));
                    }
                }
                None if corpus.is_none() => corpus = Some(line.spice),
                None => return Err(Error::Validation(format!("{}: more than one corpus SPICE line", path.display()))),
            }
        }
        match (corpus, per_clip.is_empty()) {
            (Some(s), true) => Ok(SpiceScores::Corpus(s)),
            (None, false) => Ok(SpiceScores::PerClip(per_clip)),
            (None, true) => Err(Error::Validation(format!("{}: no SPICE scores", path.display()))),
            (Some(_), false) => Err(Error::Validation(format!(
                "{}: mixes per-clip and corpus SPICE lines",
                path.display()
            ))),
        }
    }
}

/// Score every pair. IDF for CIDEr comes from the references of these pairs.
pub fn evaluate_pairs(pairs: &[EvalPair], spice: Option<&SpiceScores>) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Validation("no predictions to evaluate".into()));
    }
    let ciders: HashMap<String, f64> = cider_per_clip(pairs)?.into_iter().collect();
    let per_clip_spice = |id: &str| match spice {
        Some(SpiceScores::PerClip(m)) => m.get(id).copied(),
        _ => None,
    };
    if let Some(SpiceScores::PerClip(m)) = spice {
        let missing: Vec<&str> = pairs
            .iter()
            .map(|p| p.clip_id.as_str())
            .filter(|id| !m.contains_key(*id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!("SPICE scores missing for clips: {}", missing.join(", "))));
        }
    }
    let clips: Vec<ClipScores> = canonical(pairs)
        .into_iter()
        .map(|p| ClipScores {
            clip_id: p.clip_id.clone(),
            rouge_l: rouge_l_pair(p),
            meteor: meteor_pair(p),
            cider: ciders[&p.clip_id],
            spice: per_clip_spice(&p.clip_id),
        })
        .collect();
    let n = clips.len() as f64;
    let avg = |f: fn(&ClipScores) -> f64| clips.iter().map(f).sum::<f64>() / n;
    let spice_score = match spice {
        None => None,
        Some(SpiceScores::Corpus(s)) => Some(*s),
        Some(SpiceScores::PerClip(_)) => Some(avg(|c| c.spice.unwrap_or(0.0))),
    };
    if let Some(c) = clips.iter().find(|c| c.spice.is_some_and(|s| !(0.0..=1.0).contains(&s))) {
        return Err(Error::Validation(format!(
            "SPICE score {} for clip {} is outside [0, 1]",
            c.spice.unwrap_or_default(),
            c.clip_id
        )));
    }
    let cider = avg(|c| c.cider);
    Ok(MetricReport {
        bleu1: bleu(pairs, 1)?,
        bleu2: bleu(pairs, 2)?,
        bleu3: bleu(pairs, 3)?,
        bleu4: bleu(pairs, 4)?,
        meteor: avg(|c| c.meteor),
        rouge_l: avg(|c| c.rouge_l),
        cider,
        spider: spider(cider, spice_score)?,
        spice: spice_score,
        clips,
    })
}

/// Read prediction, reference and optional SPICE JSONL files and score them.
pub fn evaluate(predictions: &Path, references: &Path, spice: Option<&Path>) -> Result<MetricReport> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Prediction {
        clip_id: String,
        caption: String,
    }
    // Extra fields are ignored so a clip manifest can serve as references.
    #[derive(Deserialize)]
    struct References {
        clip_id: String,
        captions: Vec<String>,
    }

    let mut preds: Vec<Prediction> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, l) in nonblank(&fsutil::read_text(predictions)?) {
        let p: Prediction = parse_line(predictions, i, l)?;
        if !seen.insert(p.clip_id.clone()) {
            return Err(Error::Validation(format!("duplicate prediction for clip {}", p.clip_id)));
        }
        preds.push(p);
    }
    if preds.is_empty() {
        return Err(Error::Validation(format!("{} has no predictions", predictions.display())));
    }
    let mut refs: HashMap<String, Vec<String>> = HashMap::new();
    for (i, l) in nonblank(&fsutil::read_text(references)?) {
        let r: References = parse_line(references, i, l)?;
        if r.captions.len() != REFERENCES_PER_CLIP {
            return Err(Error::Validation(format!(
                "{} line {}: clip {} has {} reference captions, expected {REFERENCES_PER_CLIP}",
                references.display(),
                i + 1,
                r.clip_id,
                r.captions.len()
            )));
        }
        if refs.insert(r.clip_id.clone(), r.captions).is_some() {
            return Err(Error::Validation(format!("duplicate references for clip {}", r.clip_id)));
        }
    }
    let missing: Vec<&str> = preds
        .iter()
        .map(|p| p.clip_id.as_str())
        .filter(|id| !refs.contains_key(*id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!("no references for clips: {}", missing.join(", "))));
    }
    let pairs: Vec<EvalPair> = preds
        .iter()
        .map(|p| EvalPair::from_text(p.clip_id.clone(), &p.caption, &refs[&p.clip_id]))
        .collect();
    let spice = match spice {
        Some(path) => Some(SpiceScores::parse_jsonl(path, &fsutil::read_text(path)?)?),
        None => None,
    };
    evaluate_pairs(&pairs, spice.as_ref())
}

fn nonblank(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty())
}

fn parse_line<'a, T: Deserialize<'a>>(path: &Path, index: usize, line: &'a str) -> Result<T> {
    serde_json::from_str(line)
        .map_err(|e| Error::Validation(format!("{} line {}: {e}", path.display(), index + 1)))
}
