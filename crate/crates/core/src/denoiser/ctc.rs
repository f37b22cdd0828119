//! Connectionist temporal classification: loss with gradient, greedy
//! collapse and incremental prefix scoring.

use crate::error::{Error, Result};
use crate::substrate::tensor::log_add;
use crate::substrate::Tensor;

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Smallest frame count that can emit `target`: one frame per label plus a
/// separating blank between equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_inputs(log_probs: &Tensor, target: &[usize], blank: usize) -> Result<(usize, usize)> {
    if log_probs.shape().len() != 2 || log_probs.rows() == 0 {
        return Err(Error::EmptyFrames);
    }
    let (t, v) = log_probs.dims2();
    if blank >= v {
        return Err(Error::shape("ctc", format!("blank {blank} outside vocab {v}")));
    }
    if let Some(&bad) = target.iter().find(|&&k| k >= v || k == blank) {
        return Err(Error::shape("ctc", format!("target label {bad} invalid for vocab {v}, blank {blank}")));
    }
    let required = min_frames(target);
    if t < required {
        return Err(Error::TargetTooLong {
            target_len: target.len(),
            required,
            frames: t,
        });
    }
    Ok((t, v))
}

fn extended(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &k in target {
        ext.push(k);
        ext.push(blank);
    }
    ext
}

fn lse3(a: f64, b: f64, c: f64) -> f64 {
    log_add(log_add(a, b), c)
}

/// `-log p(target | log_probs)` and its gradient with respect to the
/// `T × V` log-probability matrix.
pub fn ctc_loss_and_grad(log_probs: &Tensor, target: &[usize], blank: usize) -> Result<(f64, Tensor)> {
    let (t_len, v) = check_inputs(log_probs, target, blank)?;
    let ext = extended(target, blank);
    let s_len = ext.len();
    let y = |t: usize, s: usize| log_probs.get2(t, ext[s]);
    let skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let mut alpha = vec![NEG_INF; t_len * s_len];
    alpha[0] = y(0, 0);
    if s_len > 1 {
        alpha[1] = y(0, 1);
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let a = prev[s];
            let b = if s >= 1 { prev[s - 1] } else { NEG_INF };
            let c = if skip(s) { prev[s - 2] } else { NEG_INF };
            cur[s] = lse3(a, b, c) + y(t, s);
        }
    }
    let last = (t_len - 1) * s_len;
    let log_p = if s_len > 1 {
        log_add(alpha[last + s_len - 1], alpha[last + s_len - 2])
    } else {
        alpha[last]
    };
    if !log_p.is_finite() {
        return Err(Error::Numerical(format!("ctc likelihood is {log_p}")));
    }

    let mut beta = vec![NEG_INF; t_len * s_len];
    beta[last + s_len - 1] = y(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = y(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let a = next[s];
            let b = if s + 1 < s_len { next[s + 1] } else { NEG_INF };
            let c = if s + 2 < s_len && skip(s + 2) { next[s + 2] } else { NEG_INF };
            cur[s] = lse3(a, b, c) + y(t, s);
        }
    }

    let mut grad = Tensor::zeros(&[t_len, v]);
    for t in 0..t_len {
        let row = grad.row_mut(t);
        for s in 0..s_len {
            let lp = alpha[t * s_len + s] + beta[t * s_len + s] - y(t, s) - log_p;
            if lp > NEG_INF {
                row[ext[s]] -= lp.exp();
            }
        }
    }
    Ok((-log_p, grad))
}

pub fn ctc_loss(log_probs: &Tensor, target: &[usize], blank: usize) -> Result<f64> {
    ctc_loss_and_grad(log_probs, target, blank).map(|(l, _)| l)
}

/// Best path: per-frame argmax over the first `num_units + 1` symbols
/// (units and blank), blanks removed and repeats merged. Repeats separated by
/// a blank are merged as well, since targets are deduplicated.
pub fn greedy_collapse(log_probs: &Tensor, num_units: usize) -> Vec<usize> {
    let blank = num_units;
    let mut out: Vec<usize> = Vec::new();
    for t in 0..log_probs.rows() {
        let row = &log_probs.row(t)[..=blank];
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if best != blank && out.last() != Some(&best) {
            out.push(best);
        }
    }
    out
}

/// Forward variables of one prefix: log probability that the first `t + 1`
/// frames emit the prefix and end in a non-blank (`nonblank[t]`) or blank
/// (`blank[t]`) symbol.
#[derive(Clone, Debug)]
pub struct PrefixState {
    pub nonblank: Vec<f64>,
    pub blank: Vec<f64>,
    pub last: Option<usize>,
}

/// Incremental CTC prefix probabilities over a fixed log-probability matrix.
pub struct PrefixScorer<'a> {
    log_probs: &'a Tensor,
    blank: usize,
}

impl<'a> PrefixScorer<'a> {
    pub fn new(log_probs: &'a Tensor, blank: usize) -> Self {
        Self { log_probs, blank }
    }

    /// State of the empty prefix.
    pub fn initial(&self) -> PrefixState {
        let t_len = self.log_probs.rows();
        let mut blank = Vec::with_capacity(t_len);
        let mut acc = 0.0;
        for t in 0..t_len {
            acc += self.log_probs.get2(t, self.blank);
            blank.push(acc);
        }
        PrefixState {
            nonblank: vec![NEG_INF; t_len],
            blank,
            last: None,
        }
    }

    /// Extends `state` by label `c`. Returns the new state and the log
    /// probability that the full output starts with the extended prefix.
    pub fn extend(&self, state: &PrefixState, c: usize) -> (PrefixState, f64) {
        let t_len = self.log_probs.rows();
        let x = |t: usize, k: usize| self.log_probs.get2(t, k);
        let mut nb = vec![NEG_INF; t_len];
        let mut bl = vec![NEG_INF; t_len];
        if state.last.is_none() {
            nb[0] = x(0, c);
        }
        let mut psi = nb[0];
        for t in 1..t_len {
            let phi = if state.last == Some(c) {
                state.blank[t - 1]
            } else {
                log_add(state.blank[t - 1], state.nonblank[t - 1])
            };
            nb[t] = log_add(nb[t - 1], phi) + x(t, c);
            bl[t] = log_add(bl[t - 1], nb[t - 1]) + x(t, self.blank);
            psi = log_add(psi, phi + x(t, c));
        }
        (
            PrefixState {
                nonblank: nb,
                blank: bl,
                last: Some(c),
            },
            psi,
        )
    }

    /// Log probability that the output is exactly the prefix.
    pub fn finish(&self, state: &PrefixState) -> f64 {
        let t = self.log_probs.rows() - 1;
        log_add(state.nonblank[t], state.blank[t])
    }
}
