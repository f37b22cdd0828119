use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pseudo_ssl::PseudoEncoderConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Consumes precomputed layer features.
    External,
    /// Trains residual adapters inside the frozen feature encoder.
    Adapter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    None,
    Transformer,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::External => "external",
            Variant::Adapter => "adapter",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "external" => Ok(Variant::External),
            "adapter" => Ok(Variant::Adapter),
            _ => Err(Error::InvalidConfig(format!("unknown variant {s:?}"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::None => "none",
            EncoderKind::Transformer => "transformer",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EncoderKind::None),
            "transformer" => Ok(EncoderKind::Transformer),
            _ => Err(Error::InvalidConfig(format!("unknown encoder kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub variant: Variant,
    pub encoder_kind: EncoderKind,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Training weight λ of the CTC term.
    pub ctc_weight: f64,
    pub dropout: f64,
    /// Number of discrete units K.
    pub num_units: usize,
    /// Number of input layers `L + 1`.
    pub input_layers: usize,
    pub input_dim: usize,
    pub adapter_bottleneck: usize,
    pub seed: u64,
    /// Frozen encoder settings, needed by the adapter variant to recompute
    /// layer states.
    pub ssl: Option<PseudoEncoderConfig>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            variant: Variant::External,
            encoder_kind: EncoderKind::Transformer,
            encoder_layers: 2,
            decoder_layers: 2,
            model_dim: 64,
            heads: 4,
            ffn_dim: 128,
            ctc_weight: 0.3,
            dropout: 0.1,
            num_units: 16,
            input_layers: 7,
            input_dim: 64,
            adapter_bottleneck: 16,
            seed: 0,
            ssl: None,
        }
    }
}

impl DenoiserConfig {
    pub fn vocab_size(&self) -> usize {
        self.num_units + 4
    }

    pub fn blank(&self) -> usize {
        self.num_units
    }

    pub fn sos(&self) -> usize {
        self.num_units + 1
    }

    pub fn eos(&self) -> usize {
        self.num_units + 2
    }

    pub fn pad(&self) -> usize {
        self.num_units + 3
    }

    pub fn has_encoder(&self) -> bool {
        self.encoder_kind == EncoderKind::Transformer && self.encoder_layers > 0
    }

    pub fn has_decoder(&self) -> bool {
        self.decoder_layers > 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return bad(format!("ctc_weight {} outside [0, 1]", self.ctc_weight));
        }
        if self.decoder_layers == 0 && self.ctc_weight != 1.0 {
            return bad("a model without decoder must train with ctc_weight = 1".into());
        }
        if self.encoder_kind == EncoderKind::Transformer && self.encoder_layers == 0 {
            return bad("transformer encoder needs encoder_layers >= 1".into());
        }
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return bad(format!("model_dim {} not divisible by heads {}", self.model_dim, self.heads));
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.num_units < 2 {
            return bad(format!("need at least 2 units, got {}", self.num_units));
        }
        if self.input_layers == 0 || self.input_dim == 0 {
            return bad("input layers and dim must be positive".into());
        }
        if self.variant == Variant::Adapter {
            let Some(ssl) = &self.ssl else {
                return bad("adapter variant needs the frozen encoder settings".into());
            };
            ssl.validate()?;
            if ssl.num_layers + 1 != self.input_layers || ssl.dim != self.input_dim {
                return bad("adapter variant: encoder settings disagree with input shape".into());
            }
            if self.adapter_bottleneck == 0 {
                return bad("adapter bottleneck must be positive".into());
            }
        }
        Ok(())
    }

    /// Key/value pairs stored in checkpoints.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = vec![
            ("variant".into(), self.variant.to_string()),
            ("encoder_kind".into(), self.encoder_kind.to_string()),
            ("encoder_layers".into(), self.encoder_layers.to_string()),
            ("decoder_layers".into(), self.decoder_layers.to_string()),
            ("model_dim".into(), self.model_dim.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("ffn_dim".into(), self.ffn_dim.to_string()),
            ("ctc_weight".into(), self.ctc_weight.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("num_units".into(), self.num_units.to_string()),
            ("input_layers".into(), self.input_layers.to_string()),
            ("input_dim".into(), self.input_dim.to_string()),
            ("adapter_bottleneck".into(), self.adapter_bottleneck.to_string()),
            ("seed".into(), self.seed.to_string()),
        ];
        if let Some(s) = &self.ssl {
            v.extend([
                ("ssl.num_layers".into(), s.num_layers.to_string()),
                ("ssl.dim".into(), s.dim.to_string()),
                ("ssl.n_mels".into(), s.n_mels.to_string()),
                ("ssl.window_ms".into(), s.window_ms.to_string()),
                ("ssl.hop_ms".into(), s.hop_ms.to_string()),
                ("ssl.seed".into(), s.seed.to_string()),
            ]);
        }
        v
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::InvalidConfig(format!("checkpoint config lacks {k:?}")))
        };
        fn num<T: FromStr>(k: &str, s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::InvalidConfig(format!("bad value {s:?} for {k:?}")))
        }
        let ssl = if pairs.iter().any(|(k, _)| k == "ssl.num_layers") {
            Some(PseudoEncoderConfig {
                num_layers: num("ssl.num_layers", get("ssl.num_layers")?)?,
                dim: num("ssl.dim", get("ssl.dim")?)?,
                n_mels: num("ssl.n_mels", get("ssl.n_mels")?)?,
                window_ms: num("ssl.window_ms", get("ssl.window_ms")?)?,
                hop_ms: num("ssl.hop_ms", get("ssl.hop_ms")?)?,
                seed: num("ssl.seed", get("ssl.seed")?)?,
            })
        } else {
            None
        };
        let cfg = Self {
            variant: get("variant")?.parse()?,
            encoder_kind: get("encoder_kind")?.parse()?,
            encoder_layers: num("encoder_layers", get("encoder_layers")?)?,
            decoder_layers: num("decoder_layers", get("decoder_layers")?)?,
            model_dim: num("model_dim", get("model_dim")?)?,
            heads: num("heads", get("heads")?)?,
            ffn_dim: num("ffn_dim", get("ffn_dim")?)?,
            ctc_weight: num("ctc_weight", get("ctc_weight")?)?,
            dropout: num("dropout", get("dropout")?)?,
            num_units: num("num_units", get("num_units")?)?,
            input_layers: num("input_layers", get("input_layers")?)?,
            input_dim: num("input_dim", get("input_dim")?)?,
            adapter_bottleneck: num("adapter_bottleneck", get("adapter_bottleneck")?)?,
            seed: num("seed", get("seed")?)?,
            ssl,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
