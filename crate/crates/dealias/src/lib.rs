//! Alias-reduction toolkit for neural guitar amplifier models.
//!
//! A distortion model trained on real device recordings reproduces the
//! device's aliasing along with its tone. This crate removes that aliasing
//! by teacher-student fine-tuning: a frozen copy of the model (the teacher)
//! is probed with single sines, each response is reduced to its harmonic
//! series and resynthesized without the fold-back components, and a
//! trainable copy (the student) is fitted to those alias-free targets with
//! a perceptually weighted loss.
//!
//! The crate is organized bottom-up:
//!
//! - [`signal`], [`spectrum`], [`wav`]: sampled signals, FFT/STFT,
//!   frequency-domain resampling, WAV I/O.
//! - [`harmonic`]: harmonic extraction with window scalloping correction
//!   and alias-free resynthesis.
//! - [`filters`]: FIR pre-emphasis filters (lowpass, A-weighting).
//! - [`nmr`]: noise-to-mask ratio with a Bark-band masking model.
//! - [`model`]: LSTM and TCN inference models plus weight (de)serialization.
//! - [`autodiff`]: reverse-mode tape over `f64` vectors and Adam.
//! - [`diff`]: tape-built model forwards and training losses.
//! - [`loss`], [`metrics`]: evaluation losses and the metric battery.
//! - [`train`]: pretraining, fine-tuning, checkpointing.
//! - [`dataset`], [`render`], [`cli`]: file ingest, report rendering, and
//!   the command-line front end.

pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod diff;
pub mod filters;
pub mod harmonic;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nmr;
pub mod render;
pub mod signal;
pub mod spectrum;
pub mod train;
pub mod wav;

/// Crate-wide error type. The variants map onto process exit codes:
/// `Usage` -> 1, `Data`/`Io` -> 2, `Numeric` -> 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub use signal::{midi_to_freq, SampledSignal, SineParams};
