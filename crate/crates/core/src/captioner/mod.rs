//! Event-conditioned encoder/decoder captioner.

mod config;
mod forward;
mod io;
mod model;
mod train;

pub use config::{Architecture, ModelConfig, TrainConfig};
pub use forward::{
    batch_pass, decode_step, encode_audio, encode_partial_caption, greedy_caption,
    teacher_forced_loss, BatchPass, ClipInput, Example,
};
pub use io::{build_examples, load_model, save_model, Captioner, MODEL_FORMAT_VERSION};
pub use model::{build_model, parameter_count, CaptionerModel};
pub use train::{train, EpochRecord, TrainOutcome};
