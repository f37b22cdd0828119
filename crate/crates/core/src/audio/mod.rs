//! Waveforms, WAV I/O, framing and power measurement.

mod manifest;
mod wav;

pub use manifest::{AugmentInfo, Condition, Manifest, ManifestEntry};
pub use wav::{decode_wav, encode_wav, quantize_sample, read_wav, write_wav};

use std::ops::Range;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at [`SAMPLE_RATE`]; nominal amplitude range [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySpan);
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Mean squared amplitude over `span` (the whole signal when `None`).
pub fn rms_power(waveform: &Waveform, span: Option<Range<usize>>) -> Result<f64> {
    power_of(waveform.samples(), span)
}

pub(crate) fn power_of(samples: &[f64], span: Option<Range<usize>>) -> Result<f64> {
    let span = span.unwrap_or(0..samples.len());
    if span.start > span.end || span.end > samples.len() {
        return Err(Error::SpanOutOfBounds {
            start: span.start,
            end: span.end,
            len: samples.len(),
        });
    }
    if span.is_empty() {
        return Err(Error::EmptySpan);
    }
    let s = &samples[span];
    Ok(s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64)
}

pub fn ms_to_samples(ms: f64) -> usize {
    (ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
}

/// Number of full windows: `1 + (len - window) / hop` when `len >= window`.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window || hop == 0 {
        0
    } else {
        1 + (len - window) / hop
    }
}

/// Overlapping fixed-length frames. Inputs shorter than one window yield no
/// frames.
pub fn frame_signal(waveform: &Waveform, window_ms: f64, hop_ms: f64) -> Result<Vec<Vec<f64>>> {
    let window = ms_to_samples(window_ms);
    let hop = ms_to_samples(hop_ms);
    if hop == 0 || window < hop {
        return Err(Error::InvalidConfig(format!(
            "framing needs window >= hop > 0 (got {window_ms} ms / {hop_ms} ms)"
        )));
    }
    let n = frame_count(waveform.len(), window, hop);
    Ok((0..n)
        .map(|i| waveform.samples()[i * hop..i * hop + window].to_vec())
        .collect())
}
