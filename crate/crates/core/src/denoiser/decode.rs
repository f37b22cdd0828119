use crate::error::{Error, Result};
use crate::pseudo_ssl::LayerStackFeatures;
use crate::substrate::Tape;

use super::ctc::{greedy_collapse, PrefixScorer, PrefixState};
use super::model::DenoiserModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamOptions {
    pub beam_size: usize,
    /// Weight α of the CTC prefix score.
    pub ctc_weight: f64,
    /// Defaults to twice the frame count.
    pub max_len: Option<usize>,
}

impl Default for BeamOptions {
    fn default() -> Self {
        Self {
            beam_size: 4,
            ctc_weight: 0.3,
            max_len: None,
        }
    }
}

#[derive(Clone, Debug)]
struct Hyp {
    tokens: Vec<usize>,
    att: f64,
    ctc: f64,
    score: f64,
    state: Option<PrefixState>,
}

/// A finished hypothesis with its score components.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub units: Vec<usize>,
    pub score: f64,
    pub att_score: f64,
    pub ctc_score: f64,
}

/// Joint attention/CTC beam search. Models without a decoder fall back to
/// greedy CTC collapse.
pub fn beam_search_decode(model: &DenoiserModel, features: &LayerStackFeatures, opts: &BeamOptions) -> Result<Vec<usize>> {
    decode_detailed(model, features, opts).map(|d| d.units)
}

pub fn decode_detailed(model: &DenoiserModel, features: &LayerStackFeatures, opts: &BeamOptions) -> Result<Decoded> {
    if opts.beam_size == 0 {
        return Err(Error::InvalidConfig("beam size must be at least 1".into()));
    }
    let alpha = opts.ctc_weight;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("ctc weight {alpha} outside [0, 1]")));
    }
    let cfg = model.config();
    let mut tape = Tape::new(model.store());
    let (states, ctc_lp) = model.forward_encode(&mut tape, features)?;
    let ctc_lp = tape.value(ctc_lp).clone();
    if !cfg.has_decoder() {
        let units = greedy_collapse(&ctc_lp, cfg.num_units);
        return Ok(Decoded {
            units,
            score: f64::NAN,
            att_score: 0.0,
            ctc_score: f64::NAN,
        });
    }
    let alpha = if alpha > 0.0 && ctc_lp.rows() > 0 { alpha } else { 0.0 };
    let memory = model.memory(&mut tape, states)?;
    let mark = tape.len();
    let scorer = PrefixScorer::new(&ctc_lp, cfg.blank());
    let max_len = opts.max_len.unwrap_or(2 * features.frames());
    let (k, eos) = (cfg.num_units, cfg.eos());

    let mut active = vec![Hyp {
        tokens: Vec::new(),
        att: 0.0,
        ctc: 0.0,
        score: 0.0,
        state: (alpha > 0.0).then(|| scorer.initial()),
    }];
    let mut ended: Vec<Hyp> = Vec::new();
    let mut len = 0;
    loop {
        let force_end = len >= max_len;
        let mut cand: Vec<(f64, usize, usize, f64, f64, Option<PrefixState>)> = Vec::new();
        for (hi, h) in active.iter().enumerate() {
            let mut inputs = vec![cfg.sos()];
            inputs.extend_from_slice(&h.tokens);
            let lp = model.decoder_log_probs(&mut tape, &memory, &inputs)?;
            let row = tape.value(lp).row(inputs.len() - 1).to_vec();
            tape.truncate(mark);
            let choices: Vec<usize> = if force_end {
                vec![eos]
            } else {
                (0..k).filter(|&c| h.tokens.last() != Some(&c)).chain([eos]).collect()
            };
            for c in choices {
                let att = h.att + row[c];
                let (ctc, state) = match &h.state {
                    None => (0.0, None),
                    Some(st) if c == eos => (scorer.finish(st), None),
                    Some(st) => {
                        let (next, psi) = scorer.extend(st, c);
                        (psi, Some(next))
                    }
                };
                let score = (1.0 - alpha) * att + alpha * ctc;
                cand.push((score, hi, c, att, ctc, state));
            }
        }
        // Stable order: score, then parent rank, then token.
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cand.truncate(opts.beam_size);
        let mut next = Vec::new();
        for (score, hi, c, att, ctc, state) in cand {
            if !score.is_finite() && score != f64::NEG_INFINITY {
                return Err(Error::Numerical(format!("decoder score {score}")));
            }
            let parent = &active[hi];
            if c == eos {
                ended.push(Hyp {
                    tokens: parent.tokens.clone(),
                    att,
                    ctc,
                    score,
                    state: None,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(c);
                next.push(Hyp {
                    tokens,
                    att,
                    ctc,
                    score,
                    state,
                });
            }
        }
        active = next;
        len += 1;
        let best_ended = ended.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        let best_active = active.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        // Scores never increase with length, so no active hypothesis can
        // overtake the best finished one.
        if active.is_empty() || (!ended.is_empty() && best_ended >= best_active) {
            break;
        }
    }
    let best = ended
        .into_iter()
        .reduce(|a, b| if b.score > a.score { b } else { a })
        .ok_or_else(|| Error::Numerical("beam search produced no hypothesis".into()))?;
    Ok(Decoded {
        units: best.tokens,
        score: best.score,
        att_score: best.att,
        ctc_score: best.ctc,
    })
}
