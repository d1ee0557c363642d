//! Sound-event conditioning.
//!
//! A tagger emits one probability per AudioSet class. Classes whose
//! probability is strictly greater than the threshold are selected; their
//! display labels are split into word tokens, and the clip is encoded as a
//! binary vector over the event corpus (the sorted set of all label tokens).
//! Related labels such as "Sad Music" and "Funny Music" thereby share the
//! `music` dimension.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::text::is_punctuation;

/// Number of AudioSet classes.
pub const NUM_CLASSES: usize = 527;

/// Default selection threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Per-clip class probabilities, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventProbVector(Vec<f64>);

impl EventProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() != NUM_CLASSES {
            return Err(Error::invalid(format!(
                "event probability vector has {} entries, expected {NUM_CLASSES}",
                probs.len()
            )));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::invalid(format!("event probability {i} = {p} outside [0, 1]")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// Indices `i` with `probs[i] > tau` (strict), ascending.
pub fn threshold_events(e: &EventProbVector, tau: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("threshold {tau} outside [0, 1]")));
    }
    Ok(select_above(e.probs(), tau))
}

fn select_above(probs: &[f64], tau: f64) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > tau)
        .map(|(i, _)| i)
        .collect()
}

/// Split a class label into lowercase word tokens.
///
/// Whitespace, commas, parentheses and hyphens separate tokens; any other
/// punctuation is deleted in place ("Rock 'n' roll" gives `rock n roll`).
pub fn tokenize_label(label: &str) -> Result<Vec<String>> {
    if label.trim().is_empty() {
        return Err(Error::invalid("empty event label"));
    }
    let spaced: String = label
        .to_lowercase()
        .chars()
        .filter_map(|c| match c {
            ',' | '(' | ')' | '-' => Some(' '),
            c if c.is_whitespace() => Some(' '),
            c if is_punctuation(c) => None,
            c => Some(c),
        })
        .collect();
    Ok(spaced.split_whitespace().map(str::to_string).collect())
}

/// Display labels, index-aligned with [`EventProbVector`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventLabelTable(Vec<String>);

impl EventLabelTable {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() != NUM_CLASSES {
            return Err(Error::Validation(format!(
                "label table has {} lines, expected {NUM_CLASSES}",
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|l| l.trim().is_empty()) {
            return Err(Error::Validation(format!("label on line {} is empty", i + 1)));
        }
        Ok(Self(labels))
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fsutil::read_text(path)?)
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|l| format!("{l}\n")).collect()
    }
}

/// Sorted, deduplicated label tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventCorpus {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl EventCorpus {
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let set: BTreeSet<String> = tokens.into_iter().collect();
        let tokens: Vec<String> = set.into_iter().collect();
        let index = tokens.iter().cloned().zip(0..).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    /// Parse a corpus file; lines must be unique and sorted.
    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        for (i, w) in lines.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(Error::Validation(format!(
                    "corpus line {}: tokens must be unique and sorted ({:?} then {:?})",
                    i + 2,
                    w[0],
                    w[1]
                )));
            }
        }
        if let Some(i) = lines.iter().position(|l| l.is_empty()) {
            return Err(Error::Validation(format!("corpus line {} is empty", i + 1)));
        }
        Ok(Self::from_tokens(lines.into_iter().map(str::to_string)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fsutil::read_text(path)?)
    }
}

/// Union of [`tokenize_label`] over the table.
pub fn build_event_corpus(table: &EventLabelTable) -> Result<EventCorpus> {
    let mut all = Vec::new();
    for label in table.labels() {
        all.extend(tokenize_label(label)?);
    }
    let corpus = EventCorpus::from_tokens(all);
    log::info!("event corpus: {} tokens from {} labels", corpus.len(), table.labels().len());
    Ok(corpus)
}

/// Binary vector over the event corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventMultiHot(Vec<u8>);

impl EventMultiHot {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("multi-hot entries must be 0 or 1"));
        }
        Ok(Self(bits))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| f64::from(b)).collect()
    }

    /// Elementwise OR.
    pub fn union(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a | b).collect())
    }
}

/// Multi-hot over the corpus tokens of every selected label.
pub fn encode_clip_events(
    selected: &[usize],
    table: &EventLabelTable,
    corpus: &EventCorpus,
) -> Result<EventMultiHot> {
    let mut bits = vec![0u8; corpus.len()];
    for &i in selected {
        let label = table.labels().get(i).ok_or_else(|| {
            Error::invalid(format!("event class index {i} out of range (< {NUM_CLASSES})"))
        })?;
        for tok in tokenize_label(label)? {
            let k = corpus.index_of(&tok).ok_or_else(|| {
                Error::invalid(format!("label token {tok:?} missing from event corpus"))
            })?;
            bits[k] = 1;
        }
    }
    Ok(EventMultiHot(bits))
}

/// Label table plus corpus with each label's token indices precomputed:
/// everything needed to turn tagger output into the model's event input.
#[derive(Clone, Debug, PartialEq)]
pub struct EventEncoder {
    table: EventLabelTable,
    corpus: EventCorpus,
    label_tokens: Vec<Vec<usize>>,
    threshold: f64,
}

impl EventEncoder {
    pub fn new(table: EventLabelTable, corpus: EventCorpus, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::invalid(format!("threshold {threshold} outside [0, 1]")));
        }
        let mut label_tokens = Vec::with_capacity(NUM_CLASSES);
        for label in table.labels() {
            let mut idx = Vec::new();
            for tok in tokenize_label(label)? {
                idx.push(corpus.index_of(&tok).ok_or_else(|| {
                    Error::Validation(format!(
                        "label {label:?} token {tok:?} is not in the event corpus"
                    ))
                })?);
            }
            label_tokens.push(idx);
        }
        Ok(Self {
            table,
            corpus,
            label_tokens,
            threshold,
        })
    }

    pub fn table(&self) -> &EventLabelTable {
        &self.table
    }

    pub fn corpus(&self) -> &EventCorpus {
        &self.corpus
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn dim(&self) -> usize {
        self.corpus.len()
    }

    pub fn encode(&self, probs: &EventProbVector) -> EventMultiHot {
        let mut bits = vec![0u8; self.corpus.len()];
        for i in select_above(probs.probs(), self.threshold) {
            for &k in &self.label_tokens[i] {
                bits[k] = 1;
            }
        }
        EventMultiHot(bits)
    }
}
