//! Noise- and reverberation-robust discrete speech units.

pub mod audio;
pub mod augment;
pub mod denoiser;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod pseudo_ssl;
pub mod quantizer;
pub mod substrate;

pub use error::{Error, Result};
