//! Dataset plumbing: binary feature files, clip manifests and the synthetic
//! fixture generator.

mod features;
mod manifest;
mod synth;

pub use features::{load_features, save_features, FeatureMatrix, PANN_FEATURE_DIM};
pub use manifest::{
    clotho_v2_split_size, load_manifest, oversample, ClipRecord, EventSource, Manifest,
    CAPTIONS_PER_CLIP,
};
pub use synth::{
    synth_clip, synth_clip_for, synth_label_table, write_synth_split, SynthClip, SynthGrammar,
    SYNTH_MAX_OPTIONS,
};
