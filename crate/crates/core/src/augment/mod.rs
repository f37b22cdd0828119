//! Additive noise at an exact SNR, impulse-response reverberation, the
//! train/validation/test augmentation recipes and synthetic corpora.

mod recipe;
mod synth;

pub use recipe::{augment_corpus, utterance_rng, Recipe, TestRecipe, TrainRecipe, TEST_SNR_GRID};
pub use synth::{
    synth_corpus, synth_environment, synth_ir_bank, synth_noise_bank, write_corpus, SynthConfig, SynthCorpus,
    SynthUtterance, UnitInventory, ENVIRONMENT_KINDS,
};

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{power_of, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseResponse {
    samples: Vec<f64>,
    sample_rate: u32,
    pub tag: String,
}

impl ImpulseResponse {
    pub fn new(samples: Vec<f64>, sample_rate: u32, tag: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySpan);
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("impulse response"));
        }
        if samples.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroPower("impulse response"));
        }
        Ok(Self {
            samples,
            sample_rate,
            tag: tag.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Index of the largest-magnitude tap (the direct path).
    pub fn direct_path(&self) -> usize {
        (0..self.samples.len())
            .max_by(|&a, &b| self.samples[a].abs().total_cmp(&self.samples[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSource {
    pub tag: String,
    pub waveform: Waveform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBank {
    sources: Vec<NoiseSource>,
}

impl NoiseBank {
    /// Every source must be at least one second long and tags must be unique.
    pub fn new(sources: Vec<NoiseSource>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::InvalidRecipe("empty noise bank".into()));
        }
        for (i, s) in sources.iter().enumerate() {
            if s.waveform.len() < SAMPLE_RATE as usize {
                return Err(Error::InvalidRecipe(format!("noise source {:?} shorter than 1 s", s.tag)));
            }
            if sources[..i].iter().any(|o| o.tag == s.tag) {
                return Err(Error::InvalidRecipe(format!("duplicate noise tag {:?}", s.tag)));
            }
        }
        Ok(Self { sources })
    }

    pub fn sources(&self) -> &[NoiseSource] {
        &self.sources
    }

    pub fn tags(&self) -> Vec<String> {
        self.sources.iter().map(|s| s.tag.clone()).collect()
    }

    pub fn get(&self, tag: &str) -> Result<&NoiseSource> {
        self.sources
            .iter()
            .find(|s| s.tag == tag)
            .ok_or_else(|| Error::MissingNoiseTag(tag.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub waveform: Waveform,
    pub gain: f64,
    /// Start of the noise segment within the source.
    pub offset: usize,
    /// Set when the mixture peak exceeded 1 and the whole mixture was scaled down.
    pub rescaled: bool,
}

/// Noise of length `n` from a random offset; shorter sources are tiled.
fn noise_segment(noise: &[f64], n: usize, rng: &mut impl Rng) -> (usize, Vec<f64>) {
    if noise.len() >= n {
        let offset = rng.random_range(0..=noise.len() - n);
        (offset, noise[offset..offset + n].to_vec())
    } else {
        (0, noise.iter().cycle().take(n).copied().collect())
    }
}

/// `clean + g·noise` with `g = sqrt(P_clean / (P_noise · 10^(snr/10)))`,
/// both powers measured over the mixed span.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64, rng: &mut impl Rng) -> Result<Mixture> {
    if snr_db.is_nan() {
        return Err(Error::InvalidRecipe("SNR is NaN".into()));
    }
    let pc = power_of(clean.samples(), None)?;
    if pc == 0.0 {
        return Err(Error::ZeroPower("clean"));
    }
    if power_of(noise.samples(), None)? == 0.0 {
        return Err(Error::ZeroPower("noise"));
    }
    let (offset, seg) = noise_segment(noise.samples(), clean.len(), rng);
    let pn = power_of(&seg, None)?;
    if pn == 0.0 {
        return Err(Error::ZeroPower("noise segment"));
    }
    let gain = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut out: Vec<f64> = clean.samples().iter().zip(&seg).map(|(c, n)| c + gain * n).collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rescaled = peak > 1.0;
    if rescaled {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(Mixture {
        waveform: Waveform::new(out)?,
        gain,
        offset,
        rescaled,
    })
}

/// `10·log10(P_clean / P_(mixture − clean))`; `+∞` when the residual is zero.
pub fn measure_snr(mixture: &Waveform, clean: &Waveform) -> Result<f64> {
    if mixture.len() != clean.len() {
        return Err(Error::LengthMismatch(mixture.len(), clean.len()));
    }
    let residual: Vec<f64> = mixture.samples().iter().zip(clean.samples()).map(|(m, c)| m - c).collect();
    let pr = power_of(&residual, None)?;
    let pc = power_of(clean.samples(), None)?;
    if pr == 0.0 {
        return Ok(f64::INFINITY);
    }
    if pc == 0.0 {
        return Err(Error::ZeroPower("clean"));
    }
    Ok(10.0 * (pc / pr).log10())
}

/// Work above which convolution switches from the direct sum to FFT.
const DIRECT_CONV_LIMIT: usize = 1 << 20;

/// Full linear convolution, length `a.len() + b.len() − 1`.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let n = a.len() + b.len() - 1;
    if a.len().saturating_mul(b.len()) <= DIRECT_CONV_LIMIT {
        let mut out = vec![0.0; n];
        for (i, &x) in a.iter().enumerate() {
            for (j, &h) in b.iter().enumerate() {
                out[i + j] += x * h;
            }
        }
        return out;
    }
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |v: &[f64]| {
        let mut buf = vec![Complex::new(0.0, 0.0); size];
        for (d, &s) in buf.iter_mut().zip(v) {
            d.re = s;
        }
        buf
    };
    let (mut fa, mut fb) = (pad(a), pad(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..n].iter().map(|c| c.re / size as f64).collect()
}

/// Reverberant copy of `clean`: full convolution truncated to the input
/// length, then rescaled to the clean peak. Output sample `i` carries the
/// direct path delayed by [`ImpulseResponse::direct_path`] samples.
pub fn convolve_rir(clean: &Waveform, ir: &ImpulseResponse) -> Result<Waveform> {
    if ir.sample_rate != clean.sample_rate() {
        return Err(Error::RateMismatch(ir.sample_rate, clean.sample_rate()));
    }
    let mut out = convolve(clean.samples(), ir.samples());
    out.truncate(clean.len());
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let target = clean.peak();
    if peak > 0.0 {
        let s = target / peak;
        out.iter_mut().for_each(|v| *v *= s);
    }
    Waveform::new(out)
}
