//! Probabilistic latent-regime modelling of AIS vessel trajectories.
//!
//! A variational recurrent network is trained on
//! regularly resampled four-hot encoded tracks. Its stepwise likelihoods
//! and hidden regimes feed three task models: gap reconstruction by
//! particle sampling, abnormal-behaviour detection (global threshold and a
//! cell-based *a contrario* detector), and vessel-type identification with
//! a small CNN.
//!
//! The `book/` directory alongside the workspace walks through each piece.

pub mod anomaly;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod embedding;
pub mod error;
pub mod fourhot;
pub mod geo;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod reconstruct;
pub mod rng;
pub mod smc;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

/// The book chapters, compiled so their code blocks run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub mod overview {}
    #[doc = include_str!("../../../book/src/fourhot.md")]
    pub mod fourhot {}
    #[doc = include_str!("../../../book/src/vrnn.md")]
    pub mod vrnn {}
    #[doc = include_str!("../../../book/src/reconstruct.md")]
    pub mod reconstruct {}
    #[doc = include_str!("../../../book/src/anomaly.md")]
    pub mod anomaly {}
    #[doc = include_str!("../../../book/src/classifier.md")]
    pub mod classifier {}
    #[doc = include_str!("../../../book/src/synth.md")]
    pub mod synth {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
