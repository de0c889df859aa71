//! Binaural sound-field reconstruction with one learnable "audio Gaussian" per
//! STFT time-frequency bin.
//!
//! A field is fitted to sparse binaural recordings and then rendered at novel
//! listener poses. See the crate README for the pipeline and the CLI.

pub mod cli;
pub mod error;
pub mod field;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod oracle;
pub mod render;
pub mod scene_io;
pub mod sh;
pub mod spectral;
pub mod train;

#[doc(hidden)]
pub mod testing;

pub use error::{Error, Result};
