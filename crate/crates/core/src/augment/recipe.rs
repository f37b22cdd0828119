use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::audio::{decode_wav, encode_wav, AugmentInfo, Condition, Manifest, ManifestEntry};
use crate::error::{Error, Result};

use super::{convolve_rir, mix_at_snr, ImpulseResponse, NoiseBank};

pub const TEST_SNR_GRID: [f64; 4] = [5.0, 10.0, 15.0, 20.0];

/// One clean, one reverberant and one noisy copy per noise tag, SNR drawn
/// uniformly from `[snr_low_db, snr_high_db]`. The validation recipe is the
/// same without the clean copy.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecipe {
    pub snr_low_db: f64,
    pub snr_high_db: f64,
    pub noise_tags: Vec<String>,
    pub include_clean: bool,
    pub seed: u64,
}

impl TrainRecipe {
    pub fn new(noise_tags: Vec<String>, seed: u64) -> Self {
        Self {
            snr_low_db: 0.0,
            snr_high_db: 20.0,
            noise_tags,
            include_clean: true,
            seed,
        }
    }

    pub fn validation(noise_tags: Vec<String>, seed: u64) -> Self {
        Self {
            include_clean: false,
            ..Self::new(noise_tags, seed)
        }
    }
}

/// One clean, one reverberant and one noisy copy per (tag, SNR) on
/// [`TEST_SNR_GRID`].
#[derive(Clone, Debug, PartialEq)]
pub struct TestRecipe {
    pub noise_tags: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Recipe {
    Train(TrainRecipe),
    Test(TestRecipe),
}

impl Recipe {
    pub fn seed(&self) -> u64 {
        match self {
            Recipe::Train(r) => r.seed,
            Recipe::Test(r) => r.seed,
        }
    }

    fn noise_tags(&self) -> &[String] {
        match self {
            Recipe::Train(r) => &r.noise_tags,
            Recipe::Test(r) => &r.noise_tags,
        }
    }

    pub fn versions_per_utterance(&self) -> usize {
        match self {
            Recipe::Train(r) => usize::from(r.include_clean) + 1 + r.noise_tags.len(),
            Recipe::Test(r) => 2 + r.noise_tags.len() * TEST_SNR_GRID.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_tags().is_empty() {
            return Err(Error::InvalidRecipe("no noise tags".into()));
        }
        if let Recipe::Train(r) = self {
            if !(r.snr_low_db < r.snr_high_db) || !r.snr_low_db.is_finite() || !r.snr_high_db.is_finite() {
                return Err(Error::InvalidRecipe(format!(
                    "need snr_low < snr_high, got {} and {}",
                    r.snr_low_db, r.snr_high_db
                )));
            }
        }
        Ok(())
    }
}

/// Generator for one utterance, keyed by the corpus seed and the utterance id
/// so results do not depend on processing order.
pub fn utterance_rng(seed: u64, utt_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(utt_id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

struct Planned {
    entry: ManifestEntry,
    bytes: Vec<u8>,
}

fn augment_one(
    src: &ManifestEntry,
    recipe: &Recipe,
    noise: &NoiseBank,
    irs: &[ImpulseResponse],
) -> Result<Vec<Planned>> {
    let raw = std::fs::read(&src.wav_path).map_err(|e| Error::io(&src.wav_path, e))?;
    let clean = decode_wav(&raw)?;
    let mut rng = utterance_rng(recipe.seed(), &src.id);
    let mut out = Vec::new();
    let info = |aug_type: &str, noise_tag: Option<&str>, snr: Option<f64>, ir: Option<&str>, rescaled: bool| AugmentInfo {
        source_utt_id: src.id.clone(),
        aug_type: aug_type.into(),
        noise_tag: noise_tag.map(str::to_string),
        snr_db: snr,
        ir_tag: ir.map(str::to_string),
        rescaled,
    };
    let file = |suffix: &str| format!("{}__{suffix}.wav", src.id);

    let include_clean = match recipe {
        Recipe::Train(r) => r.include_clean,
        Recipe::Test(_) => true,
    };
    if include_clean {
        let name = file("clean");
        let mut e = ManifestEntry::new(format!("{}__clean", src.id), name, Condition::Clean);
        e.augment = Some(info("clean", None, None, None, false));
        out.push(Planned { entry: e, bytes: raw.clone() });
    }

    let ir = &irs[rng.random_range(0..irs.len())];
    let rev = convolve_rir(&clean, ir)?;
    let mut e = ManifestEntry::new(format!("{}__reverb", src.id), file("reverb"), Condition::Reverb);
    e.augment = Some(info("reverb", None, None, Some(&ir.tag), false));
    out.push(Planned {
        entry: e,
        bytes: encode_wav(&rev)?,
    });

    let mut add_noise = |tag: &str, snr: f64, suffix: String, rng: &mut ChaCha8Rng| -> Result<()> {
        let source = noise.get(tag)?;
        let m = mix_at_snr(&clean, &source.waveform, snr, rng)?;
        let cond = Condition::Noise {
            source_tag: tag.to_string(),
            snr_db: snr,
        };
        let mut e = ManifestEntry::new(format!("{}__{suffix}", src.id), file(&suffix), cond);
        e.augment = Some(info("noise", Some(tag), Some(snr), None, m.rescaled));
        out.push(Planned {
            entry: e,
            bytes: encode_wav(&m.waveform)?,
        });
        Ok(())
    };
    match recipe {
        Recipe::Train(r) => {
            for tag in &r.noise_tags {
                let snr = rng.random_range(r.snr_low_db..=r.snr_high_db);
                add_noise(tag, snr, format!("noise_{tag}"), &mut rng)?;
            }
        }
        Recipe::Test(r) => {
            for tag in &r.noise_tags {
                for snr in TEST_SNR_GRID {
                    add_noise(tag, snr, format!("noise_{tag}_{snr}"), &mut rng)?;
                }
            }
        }
    }
    Ok(out)
}

/// Materialises a recipe for every clean record of `manifest`. WAV files go
/// to `out_dir`; the returned manifest holds paths relative to `out_dir`.
pub fn augment_corpus(
    manifest: &Manifest,
    recipe: &Recipe,
    noise: &NoiseBank,
    irs: &[ImpulseResponse],
    out_dir: &Path,
) -> Result<Manifest> {
    recipe.validate()?;
    if irs.is_empty() {
        return Err(Error::InvalidRecipe("empty impulse-response bank".into()));
    }
    for tag in recipe.noise_tags() {
        noise.get(tag)?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let planned: Vec<Vec<Planned>> = manifest
        .entries
        .par_iter()
        .map(|src| augment_one(src, recipe, noise, irs))
        .collect::<Result<_>>()?;
    let mut entries = Vec::new();
    for p in planned.into_iter().flatten() {
        let path = out_dir.join(&p.entry.wav_path);
        std::fs::write(&path, &p.bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(p.entry);
    }
    Ok(Manifest { entries })
}
