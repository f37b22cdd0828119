//! Reverse-mode vs. central-difference gradient comparison.

use crate::error::Result;

use super::{ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub entries: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_err))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tol
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !(p.max_rel_err < self.tol))
    }
}

/// Options for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    pub tol: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
    /// Check at most this many entries per parameter (evenly strided).
    pub max_entries_per_param: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-5,
            floor: 1e-6,
            max_entries_per_param: usize::MAX,
        }
    }
}

/// Compares the tape gradient of the scalar produced by `f` with central
/// differences for every trainable parameter. `f` must be deterministic
/// (evaluation tapes only).
pub fn grad_check<F>(f: F, params: &mut ParamStore, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        Ok(tape.value(loss).item())
    };

    let ids: Vec<ParamId> = params.ids().filter(|&id| params.is_trainable(id)).collect();
    let mut report = GradCheckReport {
        params: Vec::new(),
        tol: opts.tol,
    };
    for id in ids {
        let n = params.get(id).len();
        let stride = n.div_ceil(opts.max_entries_per_param.max(1)).max(1);
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            entries: 0,
        };
        for i in (0..n).step_by(stride) {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + opts.h;
            let plus = eval(params)?;
            params.get_mut(id).data_mut()[i] = orig - opts.h;
            let minus = eval(params)?;
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = analytic.get(id).data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            check.max_abs_err = check.max_abs_err.max(abs);
            check.max_rel_err = if rel.is_nan() { f64::INFINITY } else { check.max_rel_err.max(rel) };
            check.entries += 1;
        }
        report.params.push(check);
    }
    Ok(report)
}
