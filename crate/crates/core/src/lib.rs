//! Interpretable audio-visual captioning.
//!
//! Audio and visual feature sequences are encoded by per-modality LSTMs,
//! fused with the words generated so far by masked 2D convolutional
//! language models, and pooled by a squeeze-and-excitation weighting whose
//! per-modality energies say which modality drove each generated word.

pub mod aggregation;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod generator;
mod init;
pub mod metrics;
pub mod mmcnn;
pub mod synthetic;

pub use error::{Error, Result};
