//! Flat `section.key = value` configuration. `#` starts a comment; blank
//! lines are ignored; every key is optional except `run.seed`.

use std::path::Path;

use crate::denoiser::{DenoiserConfig, EncoderKind, Variant};
use crate::error::{Error, Result};
use crate::pseudo_ssl::PseudoEncoderConfig;
use crate::substrate::ScheduleConfig;

trait Value: Sized {
    fn show(&self) -> String;
    fn read(key: &str, raw: &str) -> Result<Self>;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn show(&self) -> String {
                self.to_string()
            }
            fn read(key: &str, raw: &str) -> Result<Self> {
                raw.parse().map_err(|_| Error::config(key, format!("cannot parse {raw:?}")))
            }
        }
    )*};
}

from_str_value!(u64, usize, String);

impl Value for f64 {
    fn show(&self) -> String {
        self.to_string()
    }
    fn read(key: &str, raw: &str) -> Result<Self> {
        let v: f64 = raw.parse().map_err(|_| Error::config(key, format!("cannot parse {raw:?}")))?;
        if !v.is_finite() {
            return Err(Error::config(key, "must be finite"));
        }
        Ok(v)
    }
}

impl Value for Option<f64> {
    fn show(&self) -> String {
        self.map_or_else(|| "none".into(), |v| v.to_string())
    }
    fn read(key: &str, raw: &str) -> Result<Self> {
        if raw == "none" {
            Ok(None)
        } else {
            f64::read(key, raw).map(Some)
        }
    }
}

impl Value for Vec<String> {
    fn show(&self) -> String {
        self.join(",")
    }
    fn read(_: &str, raw: &str) -> Result<Self> {
        Ok(raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect())
    }
}

impl Value for Variant {
    fn show(&self) -> String {
        self.to_string()
    }
    fn read(key: &str, raw: &str) -> Result<Self> {
        raw.parse().map_err(|_| Error::config(key, format!("expected external or adapter, got {raw:?}")))
    }
}

impl Value for EncoderKind {
    fn show(&self) -> String {
        self.to_string()
    }
    fn read(key: &str, raw: &str) -> Result<Self> {
        raw.parse().map_err(|_| Error::config(key, format!("expected none or transformer, got {raw:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSection {
    pub num_utterances: usize,
    pub num_unit_types: usize,
    pub min_units: usize,
    pub max_units: usize,
    pub num_valid: usize,
    pub num_test: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSection {
    pub snr_low_db: f64,
    pub snr_high_db: f64,
    pub noise_duration_s: f64,
    pub num_irs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizerSection {
    pub k: usize,
    pub layer_index: usize,
    pub subset_fraction: f64,
    pub max_iters: usize,
    pub restarts: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: ScheduleConfig,
    pub clip_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeSection {
    pub beam_size: usize,
    pub ctc_weight: f64,
    pub valid_beam_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptSection {
    pub environment: String,
    pub max_recordings: usize,
    pub recording_len_s: f64,
    pub utterances_per_recording: usize,
    pub snr_low_db: f64,
    pub snr_high_db: f64,
    pub eval_snr_db: f64,
    /// Held-out mixtures per test utterance.
    pub eval_mixtures: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: CorpusSection,
    pub augment: AugmentSection,
    pub ssl: PseudoEncoderConfig,
    pub quantizer: QuantizerSection,
    pub denoiser: DenoiserConfig,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub adapt: AdaptSection,
    pub ablate_variants: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: CorpusSection {
                num_utterances: 200,
                num_unit_types: 8,
                min_units: 5,
                max_units: 8,
                num_valid: 20,
                num_test: 20,
            },
            augment: AugmentSection {
                snr_low_db: 0.0,
                snr_high_db: 20.0,
                noise_duration_s: 10.0,
                num_irs: 8,
            },
            ssl: PseudoEncoderConfig::default(),
            quantizer: QuantizerSection {
                k: 16,
                layer_index: 4,
                subset_fraction: 0.3,
                max_iters: 100,
                restarts: 3,
            },
            denoiser: DenoiserConfig::default(),
            train: TrainSection {
                epochs: 20,
                batch_size: 16,
                schedule: ScheduleConfig {
                    peak_lr: 2e-3,
                    warmup_steps: 50,
                    decay: 0.9995,
                },
                clip_norm: Some(5.0),
            },
            decode: DecodeSection {
                beam_size: 4,
                ctc_weight: 0.3,
                valid_beam_size: 1,
            },
            adapt: AdaptSection {
                environment: "car".into(),
                max_recordings: 5,
                recording_len_s: 30.0,
                utterances_per_recording: 100,
                snr_low_db: 0.0,
                snr_high_db: 20.0,
                eval_snr_db: 5.0,
                eval_mixtures: 4,
                epochs: 1,
                lr: 2e-4,
                batch_size: 16,
            },
            ablate_variants: vec!["encoder_only".into(), "encoder_decoder".into()],
        }
    }
}

macro_rules! fields {
    ($($key:literal => $($f:ident).+ : $t:ty),* $(,)?) => {
        impl PipelineConfig {
            /// Every recognised key in serialisation order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, <$t as Value>::show(&self.$($f).+))),*]
            }

            fn set(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $($key => self.$($f).+ = <$t as Value>::read(key, raw)?,)*
                    _ => return Err(Error::config(key, "unknown key")),
                }
                Ok(())
            }
        }
    };
}

fields! {
    "run.seed" => seed: u64,
    "corpus.num_utterances" => corpus.num_utterances: usize,
    "corpus.num_unit_types" => corpus.num_unit_types: usize,
    "corpus.min_units" => corpus.min_units: usize,
    "corpus.max_units" => corpus.max_units: usize,
    "corpus.num_valid" => corpus.num_valid: usize,
    "corpus.num_test" => corpus.num_test: usize,
    "augment.snr_low_db" => augment.snr_low_db: f64,
    "augment.snr_high_db" => augment.snr_high_db: f64,
    "augment.noise_duration_s" => augment.noise_duration_s: f64,
    "augment.num_irs" => augment.num_irs: usize,
    "ssl.num_layers" => ssl.num_layers: usize,
    "ssl.dim" => ssl.dim: usize,
    "ssl.n_mels" => ssl.n_mels: usize,
    "ssl.window_ms" => ssl.window_ms: f64,
    "ssl.hop_ms" => ssl.hop_ms: f64,
    "ssl.seed" => ssl.seed: u64,
    "quantizer.k" => quantizer.k: usize,
    "quantizer.layer_index" => quantizer.layer_index: usize,
    "quantizer.subset_fraction" => quantizer.subset_fraction: f64,
    "quantizer.max_iters" => quantizer.max_iters: usize,
    "quantizer.restarts" => quantizer.restarts: usize,
    "denoiser.variant" => denoiser.variant: Variant,
    "denoiser.encoder_kind" => denoiser.encoder_kind: EncoderKind,
    "denoiser.encoder_layers" => denoiser.encoder_layers: usize,
    "denoiser.decoder_layers" => denoiser.decoder_layers: usize,
    "denoiser.model_dim" => denoiser.model_dim: usize,
    "denoiser.heads" => denoiser.heads: usize,
    "denoiser.ffn_dim" => denoiser.ffn_dim: usize,
    "denoiser.ctc_weight" => denoiser.ctc_weight: f64,
    "denoiser.dropout" => denoiser.dropout: f64,
    "denoiser.adapter_bottleneck" => denoiser.adapter_bottleneck: usize,
    "train.epochs" => train.epochs: usize,
    "train.batch_size" => train.batch_size: usize,
    "train.peak_lr" => train.schedule.peak_lr: f64,
    "train.warmup_steps" => train.schedule.warmup_steps: u64,
    "train.decay" => train.schedule.decay: f64,
    "train.clip_norm" => train.clip_norm: Option<f64>,
    "decode.beam_size" => decode.beam_size: usize,
    "decode.ctc_weight" => decode.ctc_weight: f64,
    "decode.valid_beam_size" => decode.valid_beam_size: usize,
    "adapt.environment" => adapt.environment: String,
    "adapt.max_recordings" => adapt.max_recordings: usize,
    "adapt.recording_len_s" => adapt.recording_len_s: f64,
    "adapt.utterances_per_recording" => adapt.utterances_per_recording: usize,
    "adapt.snr_low_db" => adapt.snr_low_db: f64,
    "adapt.snr_high_db" => adapt.snr_high_db: f64,
    "adapt.eval_snr_db" => adapt.eval_snr_db: f64,
    "adapt.eval_mixtures" => adapt.eval_mixtures: usize,
    "adapt.epochs" => adapt.epochs: usize,
    "adapt.lr" => adapt.lr: f64,
    "adapt.batch_size" => adapt.batch_size: usize,
    "ablate.variants" => ablate_variants: Vec<String>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", i + 1), "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "duplicate key"));
            }
            cfg.set(key, value)?;
        }
        if !seen.contains("run.seed") {
            return Err(Error::config("run.seed", "missing (seeds are mandatory)"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let s = key.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = s;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serialised values of every key under the given sections.
    pub fn section_text(&self, sections: &[&str]) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, _)| sections.iter().any(|s| k.split('.').next() == Some(s)))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Denoiser configuration completed with the shapes implied by the
    /// feature encoder and codebook.
    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            num_units: self.quantizer.k,
            input_layers: self.ssl.num_layers + 1,
            input_dim: self.ssl.dim,
            seed: self.seed.wrapping_add(401),
            ssl: (self.denoiser.variant == Variant::Adapter).then(|| self.ssl.clone()),
            ..self.denoiser.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.num_valid == 0 || c.num_test == 0 || c.num_valid + c.num_test >= c.num_utterances {
            return Err(Error::config(
                "corpus.num_utterances",
                "need room for train, validation and test utterances",
            ));
        }
        let a = &self.augment;
        if !(a.snr_low_db < a.snr_high_db) {
            return Err(Error::config("augment.snr_low_db", "must be below augment.snr_high_db"));
        }
        if a.noise_duration_s < 1.0 {
            return Err(Error::config("augment.noise_duration_s", "noise sources must last at least 1 s"));
        }
        if a.num_irs == 0 {
            return Err(Error::config("augment.num_irs", "must be positive"));
        }
        self.ssl.validate().map_err(|e| Error::config("ssl", e.to_string()))?;
        let q = &self.quantizer;
        if q.layer_index > self.ssl.num_layers {
            return Err(Error::config("quantizer.layer_index", format!("must be <= ssl.num_layers ({})", self.ssl.num_layers)));
        }
        if !(q.subset_fraction > 0.0 && q.subset_fraction <= 1.0) {
            return Err(Error::config("quantizer.subset_fraction", "must lie in (0, 1]"));
        }
        if q.k < 2 || q.restarts == 0 || q.max_iters == 0 {
            return Err(Error::config("quantizer.k", "need k >= 2, restarts >= 1, max_iters >= 1"));
        }
        self.denoiser_config().validate().map_err(|e| Error::config("denoiser", e.to_string()))?;
        self.train.schedule.validate().map_err(|e| Error::config("train", e.to_string()))?;
        if self.train.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.decode.beam_size == 0 || self.decode.valid_beam_size == 0 {
            return Err(Error::config("decode.beam_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.decode.ctc_weight) {
            return Err(Error::config("decode.ctc_weight", "must lie in [0, 1]"));
        }
        let ad = &self.adapt;
        if !crate::augment::ENVIRONMENT_KINDS.contains(&ad.environment.as_str()) {
            return Err(Error::config(
                "adapt.environment",
                format!("expected one of {:?}", crate::augment::ENVIRONMENT_KINDS),
            ));
        }
        if ad.max_recordings == 0 || ad.utterances_per_recording == 0 || ad.eval_mixtures == 0 || ad.batch_size == 0 || ad.recording_len_s < 1.0 {
            return Err(Error::config("adapt", "recordings, utterances, batch size must be positive; recordings >= 1 s"));
        }
        if !(ad.snr_low_db < ad.snr_high_db) || !(ad.lr > 0.0) {
            return Err(Error::config("adapt.snr_low_db", "need snr_low < snr_high and lr > 0"));
        }
        for v in &self.ablate_variants {
            if !crate::denoiser::ABLATION_VARIANTS.contains(&v.as_str()) {
                return Err(Error::config("ablate.variants", format!("unknown variant {v:?}")));
            }
        }
        Ok(())
    }
}
