//! Synthetic stand-ins for speech corpora, noise collections and room
//! impulse responses.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{write_wav, Condition, Manifest, ManifestEntry, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::quantizer::{save_units, UnitSequence};

use super::{ImpulseResponse, NoiseBank, NoiseSource};

const SR: f64 = SAMPLE_RATE as f64;
const TAPER_S: f64 = 0.012;

/// Vowel-like formant pairs (Hz) used for the first voiced unit types.
const VOWELS: [(f64, f64); 6] = [
    (280.0, 2250.0),
    (430.0, 1900.0),
    (650.0, 1650.0),
    (760.0, 1200.0),
    (520.0, 880.0),
    (330.0, 700.0),
];
/// Pass bands (Hz) of the first fricative unit types.
const FRICATIVES: [(f64, f64); 2] = [(2600.0, 4200.0), (4600.0, 7200.0)];

#[derive(Clone, Debug, PartialEq)]
enum UnitKind {
    Voiced { f1: f64, f2: f64, f3: f64 },
    Fricative { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq)]
struct UnitType {
    kind: UnitKind,
    rms: f64,
}

/// Fixed spectral signatures for `num_types` unit types. Every fourth type
/// is fricative (band-limited noise); the rest are harmonic with two
/// formant peaks.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitInventory {
    types: Vec<UnitType>,
}

impl UnitInventory {
    pub fn new(num_types: usize, seed: u64) -> Result<Self> {
        if num_types < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 unit types, got {num_types}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut v, mut f) = (0, 0);
        let types = (0..num_types)
            .map(|i| {
                let kind = if i % 4 == 3 {
                    let (lo, hi) = FRICATIVES
                        .get(f)
                        .copied()
                        .unwrap_or_else(|| {
                            let lo = rng.random_range(1500.0..5500.0);
                            (lo, lo + rng.random_range(1000.0..2000.0))
                        });
                    f += 1;
                    UnitKind::Fricative { lo, hi }
                } else {
                    let (f1, f2) = VOWELS
                        .get(v)
                        .copied()
                        .unwrap_or_else(|| (rng.random_range(250.0..850.0), rng.random_range(800.0..2500.0)));
                    v += 1;
                    UnitKind::Voiced { f1, f2, f3: 2900.0 }
                };
                let rms = match kind {
                    UnitKind::Voiced { .. } => rng.random_range(0.12..0.2),
                    UnitKind::Fricative { .. } => rng.random_range(0.05..0.09),
                };
                UnitType { kind, rms }
            })
            .collect();
        Ok(Self { types })
    }

    /// Inventory with random formants, used for babble-like noise.
    fn random(num_types: usize, rng: &mut ChaCha8Rng) -> Self {
        let types = (0..num_types)
            .map(|_| UnitType {
                kind: UnitKind::Voiced {
                    f1: rng.random_range(250.0..900.0),
                    f2: rng.random_range(800.0..2600.0),
                    f3: rng.random_range(2500.0..3300.0),
                },
                rms: rng.random_range(0.1..0.2),
            })
            .collect();
        Self { types }
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// One tapered segment of unit `unit` at fundamental `f0`.
    pub fn segment(&self, unit: usize, f0: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let ty = &self.types[unit];
        let mut out = vec![0.0; n];
        match ty.kind {
            UnitKind::Voiced { f1, f2, f3 } => {
                let peak = |f: f64, c: f64, bw: f64| (-0.5 * ((f - c) / bw).powi(2)).exp();
                let mut h = 1;
                while h as f64 * f0 < 7000.0 {
                    let fh = h as f64 * f0;
                    let amp = peak(fh, f1, 90.0) + 0.7 * peak(fh, f2, 140.0) + 0.3 * peak(fh, f3, 200.0) + 0.01;
                    let phase = rng.random_range(0.0..2.0 * PI);
                    let w = 2.0 * PI * fh / SR;
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += amp * (w * i as f64 + phase).sin();
                    }
                    h += 1;
                }
            }
            UnitKind::Fricative { lo, hi } => {
                for _ in 0..60 {
                    let w = 2.0 * PI * rng.random_range(lo..hi) / SR;
                    let phase = rng.random_range(0.0..2.0 * PI);
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += (w * i as f64 + phase).sin();
                    }
                }
            }
        }
        let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if rms > 0.0 {
            let s = ty.rms / rms;
            out.iter_mut().for_each(|v| *v *= s);
        }
        taper(&mut out);
        out
    }
}

/// Raised-cosine onset and offset.
fn taper(x: &mut [f64]) {
    let m = ((TAPER_S * SR) as usize).min(x.len() / 2);
    for i in 0..m {
        let g = 0.5 - 0.5 * (PI * i as f64 / m as f64).cos();
        x[i] *= g;
        let j = x.len() - 1 - i;
        x[j] *= g;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_utterances: usize,
    pub num_unit_types: usize,
    pub min_units: usize,
    pub max_units: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_utterances: 200,
            num_unit_types: 8,
            min_units: 5,
            max_units: 8,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub waveform: Waveform,
    /// Generating unit types, no adjacent repeats.
    pub script: Vec<usize>,
    /// Sample index where each segment starts.
    pub starts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub inventory: UnitInventory,
    pub utterances: Vec<SynthUtterance>,
}

fn synth_voice(inv: &UnitInventory, script: &[usize], f0: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<usize>) {
    let mut samples = Vec::new();
    let mut starts = Vec::new();
    for &u in script {
        let n = (rng.random_range(0.08..=0.2) * SR) as usize;
        let drift = rng.random_range(0.95..1.05);
        starts.push(samples.len());
        samples.extend(inv.segment(u, f0 * drift, n, rng));
    }
    (samples, starts)
}

/// Clean utterances built from unit segments of 80–200 ms with a per-utterance
/// fundamental in 100–220 Hz, peak-normalised to 0.5.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.min_units == 0 || cfg.min_units > cfg.max_units {
        return Err(Error::InvalidConfig(format!(
            "units per utterance range {}..={} is empty",
            cfg.min_units, cfg.max_units
        )));
    }
    let inventory = UnitInventory::new(cfg.num_unit_types, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut utterances = Vec::with_capacity(cfg.num_utterances);
    for i in 0..cfg.num_utterances {
        let n_units = rng.random_range(cfg.min_units..=cfg.max_units);
        let mut script: Vec<usize> = Vec::with_capacity(n_units);
        while script.len() < n_units {
            let u = rng.random_range(0..cfg.num_unit_types);
            if script.last() != Some(&u) {
                script.push(u);
            }
        }
        let f0 = rng.random_range(100.0..220.0);
        let (mut samples, starts) = synth_voice(&inventory, &script, f0, &mut rng);
        let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        samples.iter_mut().for_each(|v| *v *= 0.5 / peak);
        utterances.push(SynthUtterance {
            id: format!("utt{i:04}"),
            waveform: Waveform::new(samples)?,
            script,
            starts,
        });
    }
    Ok(SynthCorpus { inventory, utterances })
}

/// Writes `<id>.wav`, `manifest.tsv` and `scripts.units` into `out_dir` and
/// returns the manifest (paths relative to `out_dir`).
pub fn write_corpus(corpus: &SynthCorpus, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::new();
    let mut scripts = Vec::new();
    for u in &corpus.utterances {
        let name = format!("{}.wav", u.id);
        write_wav(&u.waveform, &out_dir.join(&name))?;
        entries.push(ManifestEntry::new(u.id.clone(), name, Condition::Clean));
        scripts.push(UnitSequence::new(u.id.clone(), u.script.clone()));
    }
    let manifest = Manifest { entries };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    save_units(&scripts, &out_dir.join("scripts.units"))?;
    Ok(manifest)
}

fn normalise_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
}

fn coloured_noise(n: usize, pole: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut y = 0.0;
    (0..n)
        .map(|_| {
            y = pole * y + normal.sample(rng);
            y
        })
        .collect()
}

fn babble(n: usize, voices: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let inv = UnitInventory::random(12, rng);
    let mut out = vec![0.0; n];
    for _ in 0..voices {
        let f0 = rng.random_range(90.0..250.0);
        let mut pos = rng.random_range(0..(SR * 0.3) as usize);
        while pos < n {
            let u = rng.random_range(0..inv.len());
            let len = (rng.random_range(0.06..0.25) * SR) as usize;
            let seg = inv.segment(u, f0 * rng.random_range(0.9..1.1), len, rng);
            // syllable-rate amplitude modulation
            let depth = rng.random_range(0.2..1.0);
            for (i, s) in seg.iter().enumerate() {
                if pos + i < n {
                    out[pos + i] += depth * s;
                }
            }
            pos += len + rng.random_range(0..(SR * 0.08) as usize);
        }
    }
    out
}

fn impulsive(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut out: Vec<f64> = (0..n).map(|_| 0.05 * normal.sample(rng)).collect();
    let rate = rng.random_range(3.0..6.0);
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.random::<f64>()).ln() / rate;
        let start = (t * SR) as usize;
        if start >= n {
            break;
        }
        let len = (rng.random_range(0.004..0.03) * SR) as usize;
        let amp = rng.random_range(1.0..3.0);
        let decay = rng.random_range(0.002..0.01) * SR;
        for i in 0..len.min(n - start) {
            out[start + i] += amp * (-(i as f64) / decay).exp() * normal.sample(rng);
        }
    }
    out
}

/// Three sources of distinct character, each `duration_s` long at RMS 0.1:
/// `stationary` (low-pass coloured Gaussian), `babble` (overlapping
/// amplitude-modulated synthetic voices) and `impulsive` (sparse decaying
/// bursts over a weak floor).
pub fn synth_noise_bank(seed: u64, duration_s: f64) -> Result<NoiseBank> {
    let n = (duration_s * SR) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pole = rng.random_range(0.85..0.97);
    let mut stationary = coloured_noise(n, pole, &mut rng);
    let mut bab = babble(n, rng.random_range(4..7), &mut rng);
    let mut imp = impulsive(n, &mut rng);
    let mut sources = Vec::new();
    for (tag, x) in [("stationary", &mut stationary), ("babble", &mut bab), ("impulsive", &mut imp)] {
        normalise_rms(x, 0.1);
        sources.push(NoiseSource {
            tag: tag.into(),
            waveform: Waveform::new(std::mem::take(x))?,
        });
    }
    NoiseBank::new(sources)
}

/// Target environments for test-time adaptation. `car` is stationary engine
/// hum over low-frequency rumble; `mall` is dense babble.
pub const ENVIRONMENT_KINDS: [&str; 2] = ["car", "mall"];

/// Recording `index` of environment `kind`. Recordings of one environment
/// share its character (drawn from `env_seed`) and differ in realisation.
pub fn synth_environment(kind: &str, env_seed: u64, index: u64, duration_s: f64) -> Result<Waveform> {
    let n = (duration_s * SR) as usize;
    let mut env = ChaCha8Rng::seed_from_u64(env_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(env_seed ^ (index.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut x = match kind {
        "car" => {
            let f_engine = env.random_range(60.0..110.0) * rng.random_range(0.97..1.03);
            let pole = env.random_range(0.95..0.99);
            let mut x = coloured_noise(n, pole, &mut rng);
            normalise_rms(&mut x, 1.0);
            let harmonics: Vec<(f64, f64, f64)> = (1..=25)
                .map(|h| {
                    let amp = env.random_range(0.3..1.0) / (h as f64).sqrt();
                    (h as f64 * f_engine, amp, rng.random_range(0.0..2.0 * PI))
                })
                .collect();
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / SR;
                *v += harmonics.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum::<f64>();
            }
            x
        }
        "mall" => babble(n, 8, &mut rng),
        other => return Err(Error::InvalidConfig(format!("unknown environment kind {other:?}"))),
    };
    normalise_rms(&mut x, 0.1);
    Waveform::new(x)
}

/// `count` exponentially decaying impulse responses with T60 spread over
/// [0.2, 0.8] s. The direct path is tap 0 with amplitude 1.
pub fn synth_ir_bank(seed: u64, count: usize) -> Result<Vec<ImpulseResponse>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..count.max(2))
        .map(|i| {
            let frac = (i as f64 + rng.random_range(0.0..1.0)) / count.max(2) as f64;
            let t60 = 0.2 + 0.6 * frac;
            let len = (t60 * SR) as usize;
            let mut h: Vec<f64> = (0..len)
                .map(|k| {
                    let t = k as f64 / SR;
                    if t < 0.004 {
                        0.0
                    } else {
                        0.12 * normal.sample(&mut rng) * (-6.91 * t / t60).exp()
                    }
                })
                .collect();
            for _ in 0..6 {
                let k = rng.random_range((0.004 * SR) as usize..(0.04 * SR) as usize);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                h[k] += sign * rng.random_range(0.2..0.5);
            }
            h[0] = 1.0;
            ImpulseResponse::new(h, SAMPLE_RATE, format!("ir{i}_t60_{:.2}", t60))
        })
        .collect()
}
