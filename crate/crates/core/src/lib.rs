pub mod captioner;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod events;
pub mod fsutil;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod text;

pub use error::{Error, Result};
pub use rng::SeededRng;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/events.md")]
    mod events {}
    #[doc = include_str!("../../../book/src/captions.md")]
    mod captions {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/gradcheck.md")]
    mod gradcheck {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
