//! ECG rhythm classification from single-lead recordings.
//!
//! The pipeline runs in two halves. The first turns a raw record into a
//! time-frequency diagram:
//!
//! 1. [`dsp`]: Butterworth low-pass preprocessing.
//! 2. [`rpeak`]: Pan-Tompkins QRS detection on the filtered signal.
//! 3. [`featurize`]: R-count plausibility gate and four-cycle feature wave.
//! 4. [`scalogram`]: db4 continuous wavelet transform rendered as a grayscale image.
//!
//! The second half classifies those images with a small residual CNN
//! ([`classifier`]) and scores predictions ([`eval`]). [`pipeline`] ties the
//! stages together behind a single serializable configuration.

#![allow(clippy::needless_range_loop)]

pub mod classifier;
pub mod dsp;
mod error;
pub mod eval;
pub mod featurize;
pub mod ingest;
pub mod pipeline;
pub mod rpeak;
pub mod scalogram;

pub use error::{Error, Result};
pub use ingest::{Class, EcgRecord, LabelSet};
pub use pipeline::PipelineConfig;
