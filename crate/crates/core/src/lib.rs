//! Learnable wavelet packet transform denoising.

pub mod audio;
pub mod bench;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod seed;
pub mod shrinkage;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
