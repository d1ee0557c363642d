//! Caption normalization, vocabulary and teacher-forcing pairs.

use std::collections::HashMap;
use std::path::Path;

use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};
use crate::fsutil;

pub const PAD: &str = "<pad>";
pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const SOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

const RESERVED: [&str; 4] = [PAD, SOS, EOS, UNK];

/// True for characters in any Unicode punctuation category (Pc, Pd, Ps, Pe,
/// Pi, Pf, Po).
pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// A normalized caption, `<sos>` … `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Wrap already-clean words with the sentence markers.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let mut v = Vec::with_capacity(words.len() + 2);
        v.push(SOS.to_string());
        v.extend(words.iter().map(|w| w.as_ref().to_string()));
        v.push(EOS.to_string());
        TokenSeq(v)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tokens without the leading `<sos>` and trailing `<eos>`.
    pub fn words(&self) -> &[String] {
        let start = usize::from(self.0.first().is_some_and(|t| t == SOS));
        let end = self.0.len() - usize::from(self.0.len() > start && self.0.last().is_some_and(|t| t == EOS));
        &self.0[start..end]
    }

    /// Space-joined words without markers.
    pub fn text(&self) -> String {
        self.words().join(" ")
    }

    pub(crate) fn from_tokens(tokens: Vec<String>) -> Self {
        TokenSeq(tokens)
    }
}

/// Lowercase, drop punctuation characters, split on whitespace, and add the
/// sentence markers. Apostrophes and hyphens vanish without a split, so
/// "it's" becomes "its".
pub fn normalize_caption(raw: &str) -> TokenSeq {
    let cleaned: String = raw
        .to_lowercase()
        .chars()
        .filter(|c| !is_punctuation(*c))
        .collect();
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    TokenSeq::from_words(&words)
}

/// Token inventory. Ids 0–3 are `<pad>`, `<sos>`, `<eos>`, `<unk>`; the rest
/// follow first appearance in the corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn reserved_only() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().cloned().zip(0..).collect();
        Self { tokens, index }
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
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

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `<unk>` when absent.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, seq: &TokenSeq) -> Vec<usize> {
        seq.tokens().iter().map(|t| self.id_or_unk(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> TokenSeq {
        TokenSeq(
            ids.iter()
                .map(|&i| self.token(i).unwrap_or(UNK).to_string())
                .collect(),
        )
    }

    /// One token per line, LF-terminated; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(Error::Validation(
                "vocabulary must start with <pad>, <sos>, <eos>, <unk>".into(),
            ));
        }
        let mut v = Self::reserved_only();
        for (line, t) in tokens.iter().enumerate().skip(4) {
            if t.is_empty() || t.chars().any(char::is_whitespace) || v.index.contains_key(*t) {
                return Err(Error::Validation(format!(
                    "vocabulary line {}: empty, whitespace or duplicate token {t:?}",
                    line + 1
                )));
            }
            v.push(t);
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fsutil::read_text(path)?)
    }
}

pub fn build_vocab(captions: &[TokenSeq]) -> Result<Vocabulary> {
    if captions.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from zero captions"));
    }
    let mut v = Vocabulary::reserved_only();
    for c in captions {
        for t in c.tokens() {
            v.push(t);
        }
    }
    Ok(v)
}

/// `(tokens[..k], tokens[k])` for `k = 1..len`.
pub fn partial_caption_pairs(seq: &TokenSeq) -> Result<Vec<(TokenSeq, String)>> {
    let t = seq.tokens();
    if t.len() < 2 {
        return Err(Error::invalid(format!(
            "caption needs at least 2 tokens for partial pairs, got {}",
            t.len()
        )));
    }
    Ok((1..t.len())
        .map(|k| (TokenSeq(t[..k].to_vec()), t[k].clone()))
        .collect())
}
