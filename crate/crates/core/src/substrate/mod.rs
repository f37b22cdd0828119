//! Dense tensors, a recording tape for reverse-mode gradients, Adam with a
//! warmup/decay schedule, finite-difference gradient checks and the
//! named-tensor checkpoint format.

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_HEADER};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use optim::{adam_step, lr_at_step, AdamConfig, AdamState, ScheduleConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Gaussian-initialised tensor with standard deviation `std`.
pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("shape product")
}

/// Xavier/Glorot-style init for a `fan_in × fan_out` matrix.
pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    randn(&[fan_in, fan_out], (2.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}
