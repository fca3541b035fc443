//! Multimodal self-supervised pretraining for wearable signals with a shared
//! prototype bank.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod interpret;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod prototypes;
pub mod signal;
pub mod train;

pub use error::{Error, Result};

/// The guide under `book/`, compiled so its examples run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/pretraining.md")]
    mod pretraining {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
