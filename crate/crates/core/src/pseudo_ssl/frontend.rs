use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{frame_signal, Waveform, SAMPLE_RATE};
use crate::error::Result;
use crate::substrate::Tensor;

const N_FFT: usize = 512;
const LOG_FLOOR: f64 = 1e-3;
/// Fixed rescaling that keeps log energies of speech-level signals near unit range.
const LOG_SCALE: f64 = 0.25;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on an HTK mel scale spanning 0 Hz to Nyquist,
/// returned as an `(n_fft/2 + 1) × n_mels` matrix.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Tensor {
    let n_bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Tensor::zeros(&[n_bins, n_mels]);
    for k in 0..n_bins {
        let f = k as f64 * sample_rate as f64 / n_fft as f64;
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb.row_mut(k)[m] = w;
        }
    }
    fb
}

#[derive(Clone, Debug)]
pub struct LogMel {
    window_ms: f64,
    hop_ms: f64,
    hann: Vec<f64>,
    filters: Tensor,
}

impl LogMel {
    pub fn new(n_mels: usize, window_ms: f64, hop_ms: f64) -> Self {
        let n = crate::audio::ms_to_samples(window_ms);
        let hann = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        Self {
            window_ms,
            hop_ms,
            hann,
            filters: mel_filterbank(n_mels, N_FFT.max(n.next_power_of_two()), SAMPLE_RATE),
        }
    }

    /// `T × n_mels` scaled log filterbank energies.
    pub fn compute(&self, waveform: &Waveform) -> Result<Tensor> {
        let frames = frame_signal(waveform, self.window_ms, self.hop_ms)?;
        let n_fft = (self.filters.rows() - 1) * 2;
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let n_bins = self.filters.rows();
        let mut mags = Tensor::zeros(&[frames.len(), n_bins]);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for (t, frame) in frames.iter().enumerate() {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, (&s, &w)) in frame.iter().zip(&self.hann).enumerate() {
                buf[i].re = s * w;
            }
            fft.process(&mut buf);
            for (m, c) in mags.row_mut(t).iter_mut().zip(&buf[..n_bins]) {
                *m = c.norm();
            }
        }
        let energies = crate::substrate::tensor::matmul(&mags, &self.filters, false, false)?;
        Ok(energies.map(|e| (e + LOG_FLOOR).ln() * LOG_SCALE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_are_triangles_with_unit_peak() {
        let fb = mel_filterbank(40, 512, 16000);
        for m in 0..40 {
            let col: Vec<f64> = (0..257).map(|k| fb.get2(k, m)).collect();
            let peak = col.iter().cloned().fold(0.0, f64::max);
            assert!(peak > 0.3 && peak <= 1.0, "filter {m} peak {peak}");
        }
    }

    #[test]
    fn tone_energy_lands_in_matching_band() {
        let lm = LogMel::new(40, 25.0, 20.0);
        let lo = Waveform::new((0..4000).map(|i| (i as f64 * 2.0 * std::f64::consts::PI * 300.0 / 16000.0).sin()).collect()).unwrap();
        let hi = Waveform::new((0..4000).map(|i| (i as f64 * 2.0 * std::f64::consts::PI * 5000.0 / 16000.0).sin()).collect()).unwrap();
        let argmax = |t: &Tensor| (0..40).max_by(|&a, &b| t.get2(0, a).total_cmp(&t.get2(0, b))).unwrap();
        assert!(argmax(&lm.compute(&lo).unwrap()) < argmax(&lm.compute(&hi).unwrap()));
    }
}
