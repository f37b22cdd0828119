//! Frozen, seeded, layered feature encoder with optional residual adapters,
//! and the SSLF feature-dump format shared with external extractors.
//!
//! The frontend computes log mel energies on a 25 ms / 20 ms Hann-windowed
//! magnitude spectrum and projects them to `D` dimensions (layer 0). Each of
//! the `L` layers is `x ← x + tanh(x·W + b)` with `‖W‖₂ = 0.9`.

mod frontend;
mod sslf;

pub use frontend::{mel_filterbank, LogMel};
pub use sslf::{dump_features, features_from_bytes, features_to_bytes, load_features, SSLF_MAGIC, SSLF_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::substrate::{randn, tensor, ParamId, ParamStore, Tape, Tensor, Var};

/// Largest singular value of every frozen layer weight.
pub const SPECTRAL_NORM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoEncoderConfig {
    pub num_layers: usize,
    pub dim: usize,
    pub n_mels: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub seed: u64,
}

impl Default for PseudoEncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 6,
            dim: 64,
            n_mels: 40,
            window_ms: 25.0,
            hop_ms: 20.0,
            seed: 0,
        }
    }
}

impl PseudoEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return Err(Error::InvalidConfig(format!("num_layers must be >= 2, got {}", self.num_layers)));
        }
        if self.dim < 8 {
            return Err(Error::InvalidConfig(format!("dim must be >= 8, got {}", self.dim)));
        }
        if self.n_mels < 2 {
            return Err(Error::InvalidConfig(format!("n_mels must be >= 2, got {}", self.n_mels)));
        }
        if !(self.hop_ms > 0.0 && self.window_ms >= self.hop_ms) {
            return Err(Error::InvalidConfig("need window_ms >= hop_ms > 0".into()));
        }
        Ok(())
    }

    /// Default clustering layer, two below the top.
    pub fn default_cluster_layer(&self) -> usize {
        self.num_layers - 2
    }
}

/// Hidden states of all `L + 1` layers, each `T × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStackFeatures {
    layers: Vec<Tensor>,
}

impl LayerStackFeatures {
    pub fn new(layers: Vec<Tensor>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::InvalidDimensions("no layers".into()))?;
        if first.shape().len() != 2 {
            return Err(Error::InvalidDimensions(format!("layer shape {:?}", first.shape())));
        }
        let (t, d) = first.dims2();
        if t == 0 {
            return Err(Error::EmptyFrames);
        }
        if d == 0 {
            return Err(Error::InvalidDimensions("D = 0".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.shape() != [t, d] {
                return Err(Error::InvalidDimensions(format!("layer {i} is {:?}, expected [{t}, {d}]", l.shape())));
            }
            if !l.is_finite() {
                return Err(Error::NonFinite("layer features"));
            }
        }
        Ok(Self { layers })
    }

    /// `L + 1`.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn frames(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Tensor> {
        self.layers
    }
}

pub fn select_layer(features: &LayerStackFeatures, layer_index: usize) -> Result<&Tensor> {
    features.layers.get(layer_index).ok_or(Error::LayerOutOfRange {
        index: layer_index,
        max: features.layers.len() - 1,
    })
}

/// Parameter handles of one bottleneck adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdapterBlock {
    pub down: ParamId,
    pub bias_b: ParamId,
    pub up: ParamId,
    pub bias_d: ParamId,
}

/// One adapter per encoder layer. The up-projection and its bias start at
/// zero, so a fresh set leaves every layer state unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapters {
    pub blocks: Vec<AdapterBlock>,
    pub bottleneck: usize,
}

impl Adapters {
    pub fn register(store: &mut ParamStore, num_layers: usize, dim: usize, bottleneck: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = (1.0 / dim as f64).sqrt();
        let blocks = (1..=num_layers)
            .map(|i| AdapterBlock {
                down: store.register(format!("adapter.{i}.down"), randn(&[dim, bottleneck], std, &mut rng)),
                bias_b: store.register(format!("adapter.{i}.bias_b"), Tensor::zeros(&[bottleneck])),
                up: store.register(format!("adapter.{i}.up"), Tensor::zeros(&[bottleneck, dim])),
                bias_d: store.register(format!("adapter.{i}.bias_d"), Tensor::zeros(&[dim])),
            })
            .collect();
        Self { blocks, bottleneck }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.blocks
            .iter()
            .flat_map(|b| [b.down, b.bias_b, b.up, b.bias_d])
            .collect()
    }
}

/// Frozen encoder weights derived from the config seed.
#[derive(Clone, Debug)]
pub struct PseudoEncoder {
    config: PseudoEncoderConfig,
    logmel: LogMel,
    proj_w: Tensor,
    proj_b: Tensor,
    layers: Vec<(Tensor, Tensor)>,
}

fn spectral_norm(w: &Tensor) -> f64 {
    let (r, c) = w.dims2();
    let m = nalgebra::DMatrix::from_row_slice(r, c, w.data());
    m.singular_values().max()
}

impl PseudoEncoder {
    pub fn new(config: PseudoEncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dim;
        let logmel = LogMel::new(config.n_mels, config.window_ms, config.hop_ms);
        let proj_w = randn(&[config.n_mels, d], (1.0 / config.n_mels as f64).sqrt(), &mut rng);
        let proj_b = randn(&[d], 0.1, &mut rng);
        let layers = (0..config.num_layers)
            .map(|_| {
                let mut w = randn(&[d, d], 1.0, &mut rng);
                let s = spectral_norm(&w);
                w.scale_assign(SPECTRAL_NORM / s);
                (w, randn(&[d], 0.2, &mut rng))
            })
            .collect();
        Ok(Self {
            config,
            logmel,
            proj_w,
            proj_b,
            layers,
        })
    }

    pub fn config(&self) -> &PseudoEncoderConfig {
        &self.config
    }

    pub fn layer_weight(&self, i: usize) -> &Tensor {
        &self.layers[i].0
    }

    /// Layer 0: log mel energies projected to `D`.
    pub fn frontend(&self, waveform: &Waveform) -> Result<Tensor> {
        let mel = self.logmel.compute(waveform)?;
        if mel.rows() == 0 {
            return Err(Error::EmptyFrames);
        }
        let x = tensor::matmul(&mel, &self.proj_w, false, false)?;
        tensor::add_row(&x, &self.proj_b)
    }

    /// Runs the frozen layers (and adapters when given) on `tape`, starting
    /// from a layer-0 node. Returns all `L + 1` layer states. Frozen weights
    /// enter as constants and receive no gradient.
    pub fn layers_on_tape(&self, tape: &mut Tape<'_>, layer0: Var, adapters: Option<&Adapters>) -> Result<Vec<Var>> {
        if let Some(a) = adapters {
            if a.blocks.len() != self.layers.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} adapters for {} encoder layers",
                    a.blocks.len(),
                    self.layers.len()
                )));
            }
        }
        let mut states = vec![layer0];
        let mut x = layer0;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wv = tape.constant(w.clone());
            let bv = tape.constant(b.clone());
            let h = tape.matmul(x, wv)?;
            let h = tape.add_row(h, bv)?;
            let h = tape.tanh(h);
            x = tape.add(x, h)?;
            if let Some(a) = adapters {
                let blk = a.blocks[i];
                let (down, bb, up, bd) = (tape.param(blk.down), tape.param(blk.bias_b), tape.param(blk.up), tape.param(blk.bias_d));
                let z = tape.matmul(x, down)?;
                let z = tape.add_row(z, bb)?;
                let z = tape.gelu(z);
                let z = tape.matmul(z, up)?;
                let z = tape.add_row(z, bd)?;
                x = tape.add(x, z)?;
            }
            states.push(x);
        }
        Ok(states)
    }

    /// All-layer features of `waveform`. With adapters, their parameters are
    /// read from `store`.
    pub fn extract(&self, waveform: &Waveform, adapters: Option<(&ParamStore, &Adapters)>) -> Result<LayerStackFeatures> {
        let layer0 = self.frontend(waveform)?;
        self.extract_from_layer0(layer0, adapters)
    }

    pub fn extract_from_layer0(&self, layer0: Tensor, adapters: Option<(&ParamStore, &Adapters)>) -> Result<LayerStackFeatures> {
        if layer0.shape().len() != 2 || layer0.cols() != self.config.dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                got: layer0.shape().last().copied().unwrap_or(0),
            });
        }
        let (store, a) = match adapters {
            Some((s, a)) => (Some(s), Some(a)),
            None => (None, None),
        };
        let mut tape = match store {
            Some(s) => Tape::new(s),
            None => Tape::detached(),
        };
        let x = tape.constant(layer0);
        let states = self.layers_on_tape(&mut tape, x, a)?;
        let vals = states.iter().map(|&v| tape.value(v).clone()).collect();
        LayerStackFeatures::new(vals)
    }
}
