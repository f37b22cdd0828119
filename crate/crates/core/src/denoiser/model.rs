use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pseudo_ssl::{Adapters, LayerStackFeatures, PseudoEncoder};
use crate::substrate::tensor::sinusoidal_positions;
use crate::substrate::{randn, xavier, Checkpoint, ParamId, ParamStore, Tape, Tensor, Var};

use super::config::{DenoiserConfig, Variant};
use super::ctc::ctc_loss_and_grad;

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e30;

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Copy, Debug)]
struct Ffn {
    up: Linear,
    down: Linear,
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    ffn: Ffn,
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    ln1: Norm,
    self_attn: Attention,
    ln2: Norm,
    cross: Attention,
    ln3: Norm,
    ffn: Ffn,
}

#[derive(Clone, Debug)]
struct Decoder {
    embed: ParamId,
    layers: Vec<DecoderLayer>,
    ln: Norm,
    out: Linear,
}

#[derive(Clone, Debug)]
struct Ids {
    ws_logits: ParamId,
    proj: Linear,
    encoder: Vec<EncoderLayer>,
    encoder_ln: Option<Norm>,
    ctc_head: Linear,
    decoder: Option<Decoder>,
}

struct Registrar<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Registrar<'_> {
    fn linear(&mut self, name: &str, i: usize, o: usize) -> Linear {
        let w = xavier(i, o, &mut self.rng);
        Linear {
            w: self.store.register(format!("{name}.w"), w),
            b: self.store.register(format!("{name}.b"), Tensor::zeros(&[o])),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.store.register(format!("{name}.g"), Tensor::filled(&[d], 1.0)),
            b: self.store.register(format!("{name}.b"), Tensor::zeros(&[d])),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, h: usize) -> Ffn {
        Ffn {
            up: self.linear(&format!("{name}.up"), d, h),
            down: self.linear(&format!("{name}.down"), h, d),
        }
    }
}

/// Cross-attention keys and values of every decoder layer, computed once per
/// utterance.
#[derive(Clone, Debug)]
pub struct Memory {
    kv: Vec<(Var, Var)>,
}

/// Evaluation-mode encoder outputs.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub states: Tensor,
    pub ctc_log_probs: Tensor,
}

/// Weighted layer sum, projection, optional transformer encoder, CTC head
/// and optional attention decoder. Parameters live in an owned store.
#[derive(Clone, Debug)]
pub struct DenoiserModel {
    config: DenoiserConfig,
    store: ParamStore,
    ids: Ids,
    ssl: Option<PseudoEncoder>,
    adapters: Option<Adapters>,
}

fn adapter_seed(seed: u64) -> u64 {
    seed ^ 0xada9_7e55
}

impl DenoiserModel {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (m, v, f) = (config.model_dim, config.vocab_size(), config.ffn_dim);
        let mut r = Registrar {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let ws_logits = r.store.register("ws_logits", Tensor::zeros(&[config.input_layers]));
        let proj = r.linear("proj", config.input_dim, m);
        let mut encoder = Vec::new();
        let mut encoder_ln = None;
        if config.has_encoder() {
            for i in 0..config.encoder_layers {
                let p = format!("enc.{i}");
                encoder.push(EncoderLayer {
                    ln1: r.norm(&format!("{p}.ln1"), m),
                    attn: r.attention(&format!("{p}.attn"), m),
                    ln2: r.norm(&format!("{p}.ln2"), m),
                    ffn: r.ffn(&format!("{p}.ffn"), m, f),
                });
            }
            encoder_ln = Some(r.norm("enc.ln", m));
        }
        let ctc_head = r.linear("ctc", m, v);
        let decoder = if config.has_decoder() {
            let embed = randn(&[v, m], 1.0, &mut r.rng);
            let embed = r.store.register("dec.embed", embed);
            let layers = (0..config.decoder_layers)
                .map(|i| {
                    let p = format!("dec.{i}");
                    DecoderLayer {
                        ln1: r.norm(&format!("{p}.ln1"), m),
                        self_attn: r.attention(&format!("{p}.self"), m),
                        ln2: r.norm(&format!("{p}.ln2"), m),
                        cross: r.attention(&format!("{p}.cross"), m),
                        ln3: r.norm(&format!("{p}.ln3"), m),
                        ffn: r.ffn(&format!("{p}.ffn"), m, f),
                    }
                })
                .collect();
            let ln = r.norm("dec.ln", m);
            let out = r.linear("dec.out", m, v);
            Some(Decoder { embed, layers, ln, out })
        } else {
            None
        };
        let (ssl, adapters) = match config.variant {
            Variant::External => (None, None),
            Variant::Adapter => {
                let sc = config.ssl.clone().expect("validated");
                let enc = PseudoEncoder::new(sc.clone())?;
                let a = Adapters::register(&mut store, sc.num_layers, sc.dim, config.adapter_bottleneck, adapter_seed(config.seed));
                (Some(enc), Some(a))
            }
        };
        Ok(Self {
            config,
            store,
            ids: Ids {
                ws_logits,
                proj,
                encoder,
                encoder_ln,
                ctc_head,
                decoder,
            },
            ssl,
            adapters,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn adapters(&self) -> Option<&Adapters> {
        self.adapters.as_ref()
    }

    /// Current softmax layer weights.
    pub fn layer_weights(&self) -> Vec<f64> {
        crate::substrate::tensor::softmax(self.store.get(self.ids.ws_logits), 0).into_data()
    }

    /// Parameters updated by [`super::finetune_encoder`]: layer weights,
    /// projection, encoder and adapters.
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.ids.ws_logits, self.ids.proj.w, self.ids.proj.b];
        let norm = |n: &Norm| [n.g, n.b];
        let lin = |l: &Linear| [l.w, l.b];
        for layer in &self.ids.encoder {
            ids.extend(norm(&layer.ln1));
            for l in [layer.attn.q, layer.attn.k, layer.attn.v, layer.attn.o] {
                ids.extend(lin(&l));
            }
            ids.extend(norm(&layer.ln2));
            ids.extend(lin(&layer.ffn.up));
            ids.extend(lin(&layer.ffn.down));
        }
        if let Some(n) = &self.ids.encoder_ln {
            ids.extend(norm(n));
        }
        if let Some(a) = &self.adapters {
            ids.extend(a.param_ids());
        }
        ids
    }

    fn linear(&self, tape: &mut Tape<'_>, x: Var, l: Linear) -> Result<Var> {
        let (w, b) = (tape.param(l.w), tape.param(l.b));
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    fn norm(&self, tape: &mut Tape<'_>, x: Var, n: Norm) -> Result<Var> {
        let (g, b) = (tape.param(n.g), tape.param(n.b));
        tape.layer_norm_affine(x, g, b, LN_EPS)
    }

    fn ffn(&self, tape: &mut Tape<'_>, x: Var, f: Ffn) -> Result<Var> {
        let h = self.linear(tape, x, f.up)?;
        let h = tape.gelu(h);
        self.linear(tape, h, f.down)
    }

    /// Multi-head attention of queries `x` over precomputed keys and values.
    fn attend(&self, tape: &mut Tape<'_>, x: Var, k: Var, v: Var, a: Attention, mask: Option<Var>) -> Result<Var> {
        let q = self.linear(tape, x, a.q)?;
        let heads = self.config.heads;
        let dh = self.config.model_dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice(q, 1, h * dh, dh)?;
            let kh = tape.slice(k, 1, h * dh, dh)?;
            let vh = tape.slice(v, 1, h * dh, dh)?;
            let s = tape.matmul_t(qh, kh, false, true)?;
            let mut s = tape.scale(s, scale);
            if let Some(m) = mask {
                s = tape.add(s, m)?;
            }
            let p = tape.softmax(s, 1)?;
            outs.push(tape.matmul(p, vh)?);
        }
        let cat = if heads == 1 { outs[0] } else { tape.concat(&outs, 1)? };
        self.linear(tape, cat, a.o)
    }

    fn self_attention(&self, tape: &mut Tape<'_>, x: Var, a: Attention, mask: Option<Var>) -> Result<Var> {
        let k = self.linear(tape, x, a.k)?;
        let v = self.linear(tape, x, a.v)?;
        self.attend(tape, x, k, v, a, mask)
    }

    fn layer_states(&self, tape: &mut Tape<'_>, features: &LayerStackFeatures) -> Result<Vec<Var>> {
        if features.num_layers() != self.config.input_layers || features.dim() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_layers * self.config.input_dim,
                got: features.num_layers() * features.dim(),
            });
        }
        match (&self.ssl, &self.adapters) {
            (Some(enc), Some(a)) => {
                let x0 = tape.constant(features.layers()[0].clone());
                enc.layers_on_tape(tape, x0, Some(a))
            }
            _ => Ok(features.layers().iter().map(|l| tape.constant(l.clone())).collect()),
        }
    }

    /// Encoder states (`T × model_dim`) and CTC log-probabilities
    /// (`T × vocab`). Frame count is preserved.
    pub fn forward_encode(&self, tape: &mut Tape<'_>, features: &LayerStackFeatures) -> Result<(Var, Var)> {
        let layers = self.layer_states(tape, features)?;
        let ws = tape.param(self.ids.ws_logits);
        let w = tape.softmax(ws, 0)?;
        let x = tape.weighted_sum(w, &layers)?;
        let mut x = self.linear(tape, x, self.ids.proj)?;
        if self.config.has_encoder() {
            let pe = tape.constant(sinusoidal_positions(features.frames(), self.config.model_dim));
            x = tape.add(x, pe)?;
            x = tape.dropout(x, self.config.dropout);
            for layer in &self.ids.encoder {
                let h = self.norm(tape, x, layer.ln1)?;
                let h = self.self_attention(tape, h, layer.attn, None)?;
                let h = tape.dropout(h, self.config.dropout);
                x = tape.add(x, h)?;
                let h = self.norm(tape, x, layer.ln2)?;
                let h = self.ffn(tape, h, layer.ffn)?;
                let h = tape.dropout(h, self.config.dropout);
                x = tape.add(x, h)?;
            }
            x = self.norm(tape, x, self.ids.encoder_ln.expect("encoder has final norm"))?;
        }
        let logits = self.linear(tape, x, self.ids.ctc_head)?;
        let lp = tape.log_softmax(logits, 1)?;
        Ok((x, lp))
    }

    pub fn encode(&self, features: &LayerStackFeatures) -> Result<EncoderOutput> {
        let mut tape = Tape::new(&self.store);
        let (s, lp) = self.forward_encode(&mut tape, features)?;
        Ok(EncoderOutput {
            states: tape.value(s).clone(),
            ctc_log_probs: tape.value(lp).clone(),
        })
    }

    pub fn memory(&self, tape: &mut Tape<'_>, states: Var) -> Result<Memory> {
        let dec = self.ids.decoder.as_ref().ok_or(Error::MissingDecoder)?;
        let mut kv = Vec::with_capacity(dec.layers.len());
        for layer in &dec.layers {
            let k = self.linear(tape, states, layer.cross.k)?;
            let v = self.linear(tape, states, layer.cross.v)?;
            kv.push((k, v));
        }
        Ok(Memory { kv })
    }

    /// Next-token log-probabilities (`inputs.len() × vocab`) for decoder
    /// inputs `inputs`, which start with sos.
    pub fn decoder_log_probs(&self, tape: &mut Tape<'_>, memory: &Memory, inputs: &[usize]) -> Result<Var> {
        let dec = self.ids.decoder.as_ref().ok_or(Error::MissingDecoder)?;
        let n = inputs.len();
        if n == 0 {
            return Err(Error::shape("decoder", "empty input sequence"));
        }
        let table = tape.param(dec.embed);
        let e = tape.embedding(table, inputs)?;
        let pe = tape.constant(sinusoidal_positions(n, self.config.model_dim));
        let mut x = tape.add(e, pe)?;
        x = tape.dropout(x, self.config.dropout);
        let mask = (n > 1).then(|| {
            let mut m = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for j in i + 1..n {
                    m.row_mut(i)[j] = MASKED;
                }
            }
            tape.constant(m)
        });
        for (layer, &(k, v)) in dec.layers.iter().zip(&memory.kv) {
            let h = self.norm(tape, x, layer.ln1)?;
            let h = self.self_attention(tape, h, layer.self_attn, mask)?;
            let h = tape.dropout(h, self.config.dropout);
            x = tape.add(x, h)?;
            let h = self.norm(tape, x, layer.ln2)?;
            let h = self.attend(tape, h, k, v, layer.cross, None)?;
            let h = tape.dropout(h, self.config.dropout);
            x = tape.add(x, h)?;
            let h = self.norm(tape, x, layer.ln3)?;
            let h = self.ffn(tape, h, layer.ffn)?;
            let h = tape.dropout(h, self.config.dropout);
            x = tape.add(x, h)?;
        }
        let x = self.norm(tape, x, dec.ln)?;
        let logits = self.linear(tape, x, dec.out)?;
        tape.log_softmax(logits, 1)
    }

    /// Teacher-forced cross-entropy of `target + [eos]` given `[sos] + target`,
    /// averaged over the `|target| + 1` positions.
    pub fn decoder_ce_loss(&self, tape: &mut Tape<'_>, states: Var, target: &[usize]) -> Result<Var> {
        self.check_target(target)?;
        let memory = self.memory(tape, states)?;
        let mut inputs = vec![self.config.sos()];
        inputs.extend_from_slice(target);
        let mut outputs = target.to_vec();
        outputs.push(self.config.eos());
        let lp = self.decoder_log_probs(tape, &memory, &inputs)?;
        tape.nll(lp, &outputs)
    }

    /// CTC negative log-likelihood (summed over frames) recorded on the tape.
    pub fn ctc_loss(&self, tape: &mut Tape<'_>, ctc_log_probs: Var, target: &[usize]) -> Result<Var> {
        self.check_target(target)?;
        let (loss, grad) = ctc_loss_and_grad(tape.value(ctc_log_probs), target, self.config.blank())?;
        tape.scalar_loss(ctc_log_probs, loss, grad)
    }

    fn check_target(&self, target: &[usize]) -> Result<()> {
        match target.iter().find(|&&u| u >= self.config.num_units) {
            Some(&u) => Err(Error::shape("target", format!("unit {u} outside 0..{}", self.config.num_units))),
            None => Ok(()),
        }
    }

    /// `λ · ctc + (1 − λ) · ce`. Terms with zero weight are skipped.
    pub fn hybrid_loss(&self, tape: &mut Tape<'_>, features: &LayerStackFeatures, target: &[usize], lambda: f64) -> Result<Var> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!("ctc weight {lambda} outside [0, 1]")));
        }
        if lambda < 1.0 && self.ids.decoder.is_none() {
            return Err(Error::MissingDecoder);
        }
        let (states, lp) = self.forward_encode(tape, features)?;
        let ctc = if lambda > 0.0 {
            let l = self.ctc_loss(tape, lp, target)?;
            Some(tape.scale(l, lambda))
        } else {
            None
        };
        let ce = if lambda < 1.0 {
            let l = self.decoder_ce_loss(tape, states, target)?;
            Some(tape.scale(l, 1.0 - lambda))
        } else {
            None
        };
        match (ctc, ce) {
            (Some(a), Some(b)) => tape.add(a, b),
            (Some(a), None) | (None, Some(a)) => Ok(a),
            (None, None) => unreachable!("lambda lies in [0, 1]"),
        }
    }

    /// Hybrid loss at the configured training weight.
    pub fn loss(&self, tape: &mut Tape<'_>, features: &LayerStackFeatures, target: &[usize]) -> Result<Var> {
        self.hybrid_loss(tape, features, target, self.config.ctc_weight)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.to_pairs(),
            tensors: self.store.named_tensors(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = DenoiserConfig::from_pairs(&ck.config)?;
        let mut model = Self::new(config)?;
        model.store.load_from(&ck.tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
