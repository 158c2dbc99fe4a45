//! Reference-based variational autoencoders: data synthesis, models,
//! objectives, training, probe evaluation and numerical oracles.
//!
//! The guide in `book/` walks through the workflow; its listings run as
//! doc-tests of this crate.

pub mod data;
pub mod nets;
pub mod objectives;
pub mod train;
pub mod error;
pub mod eval;
pub mod oracles;
pub mod rng;

pub use error::{Error, Result};

/// Guide chapters, compiled so their listings run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
