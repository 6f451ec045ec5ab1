//! Residual echo suppression: echo-path simulation, a frequency-domain
//! Kalman linear canceller and a TasNet-style neural suppressor trained
//! from scratch.

pub mod audio;
pub mod dsp;
pub mod echo;
pub mod error;
pub mod laec;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use audio::{read_wav, write_wav, Waveform};
pub use error::{Error, Result};
