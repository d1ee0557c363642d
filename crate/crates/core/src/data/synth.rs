//! Deterministic synthetic clips for desk-scale training and tests.
//!
//! Each clip has one "subject" event and one "background" event drawn from a
//! small grammar. Features are uniform noise that carries no information, so
//! the caption (`<subject noun> <verb> <preposition> <background noun>
//! <participle>`) is a function of the above-threshold events alone.

use std::path::{Path, PathBuf};

use super::features::{save_features, FeatureMatrix};
use super::manifest::{ClipRecord, EventSource, Manifest};
use crate::error::{Error, Result};
use crate::events::{EventLabelTable, EventProbVector, NUM_CLASSES};
use crate::rng::SeededRng;

/// Largest number of choices per grammar slot.
pub const SYNTH_MAX_OPTIONS: usize = 6;

const SUBJECTS: [(&str, &str, &str); SYNTH_MAX_OPTIONS] = [
    ("Dog", "dog", "barks"),
    ("Bird vocalization", "bird", "chirps"),
    ("Male speech", "man", "speaks"),
    ("Car passing", "car", "passes"),
    ("Church bell", "bell", "rings"),
    ("Baby cry", "baby", "cries"),
];

const BACKGROUNDS: [(&str, &str, &str, &str); SYNTH_MAX_OPTIONS] = [
    ("Rain", "amid", "rain", "falling"),
    ("Wind", "under", "wind", "howling"),
    ("Stream", "near", "water", "flowing"),
    ("Engine", "over", "engine", "humming"),
    ("Crowd", "beside", "crowd", "chattering"),
    ("Music", "with", "music", "playing"),
];

const FILLER_A: [&str; 23] = [
    "Alpha", "Beta", "Gamma", "Delta", "Epsilon", "Zeta", "Eta", "Theta", "Iota", "Kappa",
    "Lambda", "Mu", "Nu", "Xi", "Omicron", "Pi", "Rho", "Sigma", "Tau", "Upsilon", "Phi", "Chi",
    "Psi",
];

const FILLER_B: [&str; 23] = [
    "Tone", "Hum", "Click", "Buzz", "Whir", "Thump", "Rustle", "Clang", "Hiss", "Drone", "Chime",
    "Crackle", "Rumble", "Squeak", "Pop", "Tick", "Whoosh", "Clatter", "Twang", "Flutter",
    "Patter", "Screech", "Gurgle",
];

/// The caption grammar and its label-table layout: class `s` is subject
/// `s`, class `SYNTH_MAX_OPTIONS + b` is background `b`, the remaining
/// classes are fillers that never exceed the threshold.
#[derive(Clone, Copy, Debug, Default)]
pub struct SynthGrammar;

impl SynthGrammar {
    pub fn subject_class(s: usize) -> usize {
        s
    }

    pub fn background_class(b: usize) -> usize {
        SYNTH_MAX_OPTIONS + b
    }

    pub fn caption_words(subject: usize, background: usize) -> [&'static str; 5] {
        let (_, noun, verb) = SUBJECTS[subject];
        let (_, prep, bg, part) = BACKGROUNDS[background];
        [noun, verb, prep, bg, part]
    }

    pub fn canonical_caption(subject: usize, background: usize) -> String {
        Self::caption_words(subject, background).join(" ")
    }

    /// Every word the grammar can produce.
    pub fn vocabulary() -> Vec<&'static str> {
        let mut v = Vec::new();
        for (_, n, vb) in SUBJECTS {
            v.extend([n, vb]);
        }
        for (_, p, n, pt) in BACKGROUNDS {
            v.extend([p, n, pt]);
        }
        v
    }
}

/// A 527-line label table compatible with [`SynthGrammar`].
pub fn synth_label_table() -> EventLabelTable {
    let mut labels: Vec<String> = SUBJECTS.iter().map(|s| s.0.to_string()).collect();
    labels.extend(BACKGROUNDS.iter().map(|b| b.0.to_string()));
    'outer: for a in FILLER_A {
        for b in FILLER_B {
            if labels.len() == NUM_CLASSES {
                break 'outer;
            }
            labels.push(format!("{a} {b}"));
        }
    }
    EventLabelTable::new(labels).expect("synthetic table has 527 labels")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub features: FeatureMatrix,
    pub probs: EventProbVector,
    pub captions: Vec<String>,
    pub subject: usize,
    pub background: usize,
}

/// Clip with grammar slots drawn uniformly from the first `options` choices.
pub fn synth_clip(seed: u64, frames: usize, dim: usize, options: usize) -> Result<SynthClip> {
    if !(1..=SYNTH_MAX_OPTIONS).contains(&options) {
        return Err(Error::invalid(format!(
            "options must be in 1..={SYNTH_MAX_OPTIONS}, got {options}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let subject = rng.below(options);
    let background = rng.below(options);
    build(&mut rng, frames, dim, subject, background)
}

/// Clip with explicit grammar slots.
pub fn synth_clip_for(
    seed: u64,
    frames: usize,
    dim: usize,
    subject: usize,
    background: usize,
) -> Result<SynthClip> {
    if subject >= SYNTH_MAX_OPTIONS || background >= SYNTH_MAX_OPTIONS {
        return Err(Error::invalid("grammar slot out of range"));
    }
    let mut rng = SeededRng::new(seed);
    build(&mut rng, frames, dim, subject, background)
}

fn build(rng: &mut SeededRng, frames: usize, dim: usize, subject: usize, background: usize) -> Result<SynthClip> {
    if frames == 0 || dim == 0 {
        return Err(Error::invalid("synthetic clip needs frames >= 1 and dim >= 1"));
    }
    let data = (0..frames * dim)
        .map(|_| rng.uniform(-1.0, 1.0) as f32)
        .collect();
    let features = FeatureMatrix::new(frames, dim, data)?;

    let active = [
        SynthGrammar::subject_class(subject),
        SynthGrammar::background_class(background),
    ];
    let probs = (0..NUM_CLASSES)
        .map(|c| {
            if active.contains(&c) {
                rng.uniform(0.5, 1.0)
            } else if rng.next_f64() < 0.05 {
                // Sits exactly on the threshold and must not be selected.
                0.1
            } else {
                rng.uniform(0.0, 0.1)
            }
        })
        .collect();
    let probs = EventProbVector::new(probs)?;

    let w = SynthGrammar::caption_words(subject, background);
    let plain = w.join(" ");
    let mut title = plain.clone();
    title[..1].make_ascii_uppercase();
    let captions = vec![
        format!("{title}."),
        plain.clone(),
        format!("{} {}, {} {} {}!", w[0], w[1], w[2], w[3], w[4]),
        plain.to_uppercase(),
        format!("{} {}... {} {} {};", w[0], w[1], w[2], w[3], w[4]),
    ];
    Ok(SynthClip {
        features,
        probs,
        captions,
        subject,
        background,
    })
}

/// Write clips as AFC1 files under `dir/features/` plus `dir/<split>.jsonl`
/// with inline event probabilities. Returns the manifest path.
pub fn write_synth_split(dir: &Path, split: &str, clips: &[(String, SynthClip)]) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut records = Vec::with_capacity(clips.len());
    for (id, clip) in clips {
        let rel = format!("features/{id}.afc");
        save_features(&clip.features, &dir.join(&rel))?;
        records.push(ClipRecord {
            clip_id: id.clone(),
            feature_path: rel,
            captions: clip.captions.clone(),
            events: EventSource::Inline(clip.probs.clone()),
        });
    }
    let manifest = Manifest {
        split: split.to_string(),
        base_dir: dir.to_path_buf(),
        records,
    };
    let path = dir.join(format!("{split}.jsonl"));
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{build_event_corpus, threshold_events};
    use crate::text::normalize_caption;

    #[test]
    fn same_seed_same_clip() {
        assert_eq!(synth_clip(5, 4, 3, 6).unwrap(), synth_clip(5, 4, 3, 6).unwrap());
        assert_ne!(
            synth_clip(1, 4, 3, 6).unwrap().features,
            synth_clip(2, 4, 3, 6).unwrap().features
        );
    }

    #[test]
    fn captions_use_template_words_and_agree() {
        let vocab = SynthGrammar::vocabulary();
        for seed in 0..20 {
            let clip = synth_clip(seed, 2, 2, 6).unwrap();
            let first = normalize_caption(&clip.captions[0]);
            for c in &clip.captions {
                let n = normalize_caption(c);
                assert_eq!(n, first);
                assert!(n.words().iter().all(|w| vocab.contains(&w.as_str())));
            }
            assert_eq!(first.text(), SynthGrammar::canonical_caption(clip.subject, clip.background));
        }
    }

    #[test]
    fn selected_events_are_exactly_the_slots() {
        for seed in 0..20 {
            let clip = synth_clip(seed, 1, 1, 6).unwrap();
            let sel = threshold_events(&clip.probs, 0.1).unwrap();
            assert_eq!(
                sel,
                vec![
                    SynthGrammar::subject_class(clip.subject),
                    SynthGrammar::background_class(clip.background)
                ]
            );
            let f = clip.features.data();
            assert!(f.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn label_table_tokens_are_disjoint_per_slot() {
        let table = synth_label_table();
        let corpus = build_event_corpus(&table).unwrap();
        assert_eq!(corpus.len(), 17 + 46);
    }
}
