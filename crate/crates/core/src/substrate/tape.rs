//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records one forward pass as an arena of nodes. Parameters are
//! read from a borrowed [`ParamStore`]; frozen parameters and constants do
//! not propagate gradients. [`Tape::backward`] walks the arena in reverse and
//! may run once per tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::tensor::{self, Tensor};
use super::{Gradients, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Tanh(Var),
    Gelu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Dropout { x: Var, mask: Vec<f64> },
    WeightedSum { weights: Var, xs: Vec<Var> },
    Nll { x: Var, targets: Vec<usize> },
    ScalarLoss { x: Var, grad: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_cache: Vec<Option<Var>>,
    dropout_rng: Option<ChaCha8Rng>,
    consumed: bool,
}

impl<'p> Tape<'p> {
    /// Evaluation tape: dropout is the identity.
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            param_cache: vec![None; params.len()],
            dropout_rng: None,
            consumed: false,
        }
    }

    /// Training tape: dropout masks are drawn from a generator seeded with `seed`.
    pub fn training(params: &'p ParamStore, seed: u64) -> Self {
        let mut t = Self::new(params);
        t.dropout_rng = Some(ChaCha8Rng::seed_from_u64(seed));
        t
    }

    /// Tape without a parameter store (constants only).
    pub fn detached() -> Tape<'static> {
        Tape {
            params: None,
            nodes: Vec::new(),
            param_cache: Vec::new(),
            dropout_rng: None,
            consumed: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after `mark` (obtained from [`Tape::len`]).
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        for slot in &mut self.param_cache {
            if matches!(slot, Some(v) if v.0 >= mark) {
                *slot = None;
            }
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Some(t) => t,
            None => match self.nodes[v.0].op {
                Op::Param(id) => self.params.expect("param node without store").get(id),
                _ => unreachable!("only parameter nodes borrow their value"),
            },
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_cache[id.0] {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: store.is_trainable(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_cache[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a)·op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b), ta, tb)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(Error::shape("add", format!("{:?} + {:?}", x.shape(), y.shape())));
        }
        let out = x.zip_map(y, |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(Error::shape("mul", format!("{:?} * {:?}", x.shape(), y.shape())));
        }
        let out = x.zip_map(y, |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds a vector to every row.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = tensor::add_row(self.value(x), self.value(row))?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    /// Multiplies every row elementwise by a vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let (r, c) = xv.dims2();
        if rv.len() != c {
            return Err(Error::shape("mul_row", format!("{:?} * {:?}", xv.shape(), rv.shape())));
        }
        let mut out = xv.clone();
        for i in 0..r {
            for (o, g) in out.row_mut(i).iter_mut().zip(rv.data()) {
                *o *= g;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, Op::MulRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let nd = self.value(x).shape().len();
        if axis >= nd.max(1) || nd > 2 {
            return Err(Error::shape(op, format!("axis {axis} for shape {:?}", self.value(x).shape())));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let out = tensor::softmax(self.value(x), axis);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax(x, axis), rg))
    }

    /// Numerically stable (max-subtracted) log-softmax.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let out = tensor::log_softmax(self.value(x), axis);
        let rg = self.rg(x);
        Ok(self.push(out, Op::LogSoftmax(x, axis), rg))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(tensor::gelu);
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Row-wise normalisation without affine terms.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let (out, inv_std) = tensor::layer_norm(self.value(x), eps);
        let rg = self.rg(x);
        self.push(out, Op::LayerNorm { x, inv_std }, rg)
    }

    /// Normalisation followed by a learned gain and bias.
    pub fn layer_norm_affine(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.layer_norm(x, eps);
        let g = self.mul_row(n, gain)?;
        self.add_row(g, bias)
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, dim) = t.dims2();
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("embedding", format!("id {bad} >= table rows {rows}")));
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(ids.len(), dim, data)?;
        let rg = self.rg(table);
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    /// Concatenates 2-D tensors along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::shape("concat", format!("{} parts, axis {axis}", parts.len())));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.value(p).dims2()).collect();
        let out = if axis == 0 {
            let c = dims[0].1;
            if dims.iter().any(|d| d.1 != c) {
                return Err(Error::shape("concat", format!("column counts {dims:?}")));
            }
            let mut data = Vec::new();
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::matrix(dims.iter().map(|d| d.0).sum(), c, data)?
        } else {
            let r = dims[0].0;
            if dims.iter().any(|d| d.0 != r) {
                return Err(Error::shape("concat", format!("row counts {dims:?}")));
            }
            let total: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r * total);
            for i in 0..r {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(i));
                }
            }
            Tensor::matrix(r, total, data)?
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    /// Rows (`axis = 0`) or columns (`axis = 1`) `start..start + len`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2();
        let limit = if axis == 0 { r } else { c };
        if axis > 1 || start + len > limit {
            return Err(Error::shape("slice", format!("{start}+{len} on axis {axis} of {:?}", t.shape())));
        }
        let out = if axis == 0 {
            Tensor::matrix(len, c, t.data()[start * c..(start + len) * c].to_vec())?
        } else {
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&t.row(i)[start..start + len]);
            }
            Tensor::matrix(r, len, data)?
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Slice { x, axis, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(out, Op::Transpose(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(x);
        self.push(out, Op::Mean(x), rg)
    }

    /// Inverted dropout; the identity on evaluation tapes or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if self.dropout_rng.is_none() || p <= 0.0 {
            return x;
        }
        let n = self.value(x).len();
        let keep = 1.0 - p;
        let rng = self.dropout_rng.as_mut().expect("training tape");
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let xv = self.value(x);
        let out = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        )
        .expect("mask matches input");
        let rg = self.rg(x);
        self.push(out, Op::Dropout { x, mask }, rg)
    }

    /// `Σ_l weights[l] · xs[l]` for a weight vector and equally shaped inputs.
    pub fn weighted_sum(&mut self, weights: Var, xs: &[Var]) -> Result<Var> {
        let w = self.value(weights);
        if w.len() != xs.len() || xs.is_empty() {
            return Err(Error::shape("weighted_sum", format!("{} weights for {} inputs", w.len(), xs.len())));
        }
        let w = w.data().to_vec();
        let first = self.value(xs[0]).shape().to_vec();
        let mut out = Tensor::zeros(&first);
        for (&x, &wl) in xs.iter().zip(&w) {
            let xv = self.value(x);
            if xv.shape() != first.as_slice() {
                return Err(Error::shape("weighted_sum", format!("{:?} vs {first:?}", xv.shape())));
            }
            for (o, v) in out.data_mut().iter_mut().zip(xv.data()) {
                *o += wl * v;
            }
        }
        let rg = self.rg(weights) || xs.iter().any(|&x| self.rg(x));
        Ok(self.push(out, Op::WeightedSum { weights, xs: xs.to_vec() }, rg))
    }

    /// Mean negative log-likelihood of `targets[i]` under row `i` of a
    /// log-probability matrix.
    pub fn nll(&mut self, log_probs: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(log_probs);
        let (r, c) = t.dims2();
        if r != targets.len() || targets.iter().any(|&k| k >= c) || r == 0 {
            return Err(Error::shape("nll", format!("{:?} with {} targets", t.shape(), targets.len())));
        }
        let loss = -targets.iter().enumerate().map(|(i, &k)| t.get2(i, k)).sum::<f64>() / r as f64;
        let rg = self.rg(log_probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll { x: log_probs, targets: targets.to_vec() },
            rg,
        ))
    }

    /// Records an externally computed scalar `value` of `x` whose gradient
    /// with respect to `x` is `grad`.
    pub fn scalar_loss(&mut self, x: Var, value: f64, grad: Tensor) -> Result<Var> {
        if !grad.same_shape(self.value(x)) {
            return Err(Error::shape("scalar_loss", format!("grad {:?} for {:?}", grad.shape(), self.value(x).shape())));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(value), Op::ScalarLoss { x, grad }, rg))
    }

    /// Reverse pass from a scalar `loss`. Consumes the recording.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeReused);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let seed_shape = lv.shape().to_vec();
        self.consumed = true;
        let store = self.params;
        let mut out = match store {
            Some(s) => Gradients::zeros_like(s),
            None => Gradients::zeros_like(&ParamStore::new()),
        };
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(&seed_shape, 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.as_ref();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.get_mut(*id).add_assign(&g),
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let da = if *ta {
                        tensor::matmul(bv, &g, *tb, true)?
                    } else {
                        tensor::matmul(&g, bv, false, !*tb)?
                    };
                    self.acc(grads, *a, da);
                }
                if self.rg(*b) {
                    let db = if *tb {
                        tensor::matmul(&g, av, true, *ta)?
                    } else {
                        tensor::matmul(av, &g, !*ta, false)?
                    };
                    self.acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    self.acc(grads, *b, g);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = g.zip_map(self.value(*b), |p, q| p * q);
                    self.acc(grads, *a, d);
                }
                if self.rg(*b) {
                    let d = g.zip_map(self.value(*a), |p, q| p * q);
                    self.acc(grads, *b, d);
                }
            }
            Op::AddRow(x, row) => {
                if self.rg(*row) {
                    let (r, c) = g.dims2();
                    let mut d = vec![0.0; c];
                    for i in 0..r {
                        for (acc, v) in d.iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    self.acc(grads, *row, Tensor::new(shape, d)?);
                }
                if self.rg(*x) {
                    self.acc(grads, *x, g);
                }
            }
            Op::MulRow(x, row) => {
                let (xv, rv) = (self.value(*x), self.value(*row));
                let (r, c) = g.dims2();
                if self.rg(*row) {
                    let mut d = vec![0.0; c];
                    for i in 0..r {
                        for ((acc, gv), xv) in d.iter_mut().zip(g.row(i)).zip(xv.row(i)) {
                            *acc += gv * xv;
                        }
                    }
                    self.acc(grads, *row, Tensor::new(rv.shape().to_vec(), d)?);
                }
                if self.rg(*x) {
                    let mut d = g;
                    for i in 0..r {
                        for (dv, s) in d.row_mut(i).iter_mut().zip(rv.data()) {
                            *dv *= s;
                        }
                    }
                    self.acc(grads, *x, d);
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.acc(grads, *x, g.map(|v| v * s));
            }
            Op::Softmax(x, axis) => {
                let y = y.expect("softmax value");
                let mut d = Tensor::zeros(g.shape());
                for_each_lane_pair(y, &g, *axis, &mut d, |yl, gl, o| {
                    let n = yl.len();
                    let dot: f64 = yl.iter().zip(gl).map(|(a, b)| a * b).sum();
                    for i in 0..n {
                        o[i] = yl[i] * (gl[i] - dot);
                    }
                });
                self.acc(grads, *x, d);
            }
            Op::LogSoftmax(x, axis) => {
                let y = y.expect("log_softmax value");
                let mut d = Tensor::zeros(g.shape());
                for_each_lane_pair(y, &g, *axis, &mut d, |yl, gl, o| {
                    let n = yl.len();
                    let total: f64 = gl.iter().sum();
                    for i in 0..n {
                        o[i] = gl[i] - yl[i].exp() * total;
                    }
                });
                self.acc(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = g.zip_map(y.expect("tanh value"), |gv, t| gv * (1.0 - t * t));
                self.acc(grads, *x, d);
            }
            Op::Gelu(x) => {
                let d = g.zip_map(self.value(*x), |gv, v| gv * tensor::gelu_grad(v));
                self.acc(grads, *x, d);
            }
            Op::LayerNorm { x, inv_std } => {
                let y = y.expect("layer_norm value");
                let (r, c) = g.dims2();
                let mut d = Tensor::zeros(g.shape());
                for i in 0..r {
                    let (gr, yr) = (g.row(i), y.row(i));
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = inv_std[i] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::Embedding { table, ids } => {
                let mut d = Tensor::zeros(self.value(*table).shape());
                for (i, &id) in ids.iter().enumerate() {
                    for (o, v) in d.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                self.acc(grads, *table, d);
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.value(p).dims2();
                    let shape = self.value(p).shape().to_vec();
                    if self.rg(p) {
                        let data = if *axis == 0 {
                            g.data()[offset * pc..(offset + pr) * pc].to_vec()
                        } else {
                            (0..pr).flat_map(|i| g.row(i)[offset..offset + pc].to_vec()).collect()
                        };
                        self.acc(grads, p, Tensor::new(shape, data)?);
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.value(*x);
                let mut d = Tensor::zeros(xs.shape());
                let (gr, gc) = g.dims2();
                if *axis == 0 {
                    let c = xs.cols();
                    d.data_mut()[start * c..(start + gr) * c].copy_from_slice(g.data());
                } else {
                    for i in 0..gr {
                        d.row_mut(i)[*start..*start + gc].copy_from_slice(g.row(i));
                    }
                }
                self.acc(grads, *x, d);
            }
            Op::Transpose(x) => {
                let d = g.transpose().reshape(self.value(*x).shape().to_vec())?;
                self.acc(grads, *x, d);
            }
            Op::Sum(x) => {
                let s = g.item();
                self.acc(grads, *x, Tensor::filled(self.value(*x).shape(), s));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let s = g.item() / xv.len() as f64;
                self.acc(grads, *x, Tensor::filled(xv.shape(), s));
            }
            Op::Dropout { x, mask } => {
                let mut d = g;
                for (v, m) in d.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                self.acc(grads, *x, d);
            }
            Op::WeightedSum { weights, xs } => {
                let w = self.value(*weights).data().to_vec();
                if self.rg(*weights) {
                    let d: Vec<f64> = xs
                        .iter()
                        .map(|&x| {
                            self.value(x).data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
                        })
                        .collect();
                    let shape = self.value(*weights).shape().to_vec();
                    self.acc(grads, *weights, Tensor::new(shape, d)?);
                }
                for (&x, &wl) in xs.iter().zip(&w) {
                    if self.rg(x) {
                        self.acc(grads, x, g.map(|v| v * wl));
                    }
                }
            }
            Op::Nll { x, targets } => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                let s = -g.item() / targets.len() as f64;
                let c = d.cols();
                for (i, &k) in targets.iter().enumerate() {
                    d.data_mut()[i * c + k] += s;
                }
                self.acc(grads, *x, d);
            }
            Op::ScalarLoss { x, grad } => {
                let s = g.item();
                self.acc(grads, *x, grad.map(|v| v * s));
            }
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot => *slot = Some(d),
        }
    }
}

/// Walks matching lanes of `y` and `g` along `axis`, writing into `out`.
fn for_each_lane_pair(
    y: &Tensor,
    g: &Tensor,
    axis: usize,
    out: &mut Tensor,
    mut f: impl FnMut(&[f64], &[f64], &mut [f64]),
) {
    let (r, c) = y.dims2();
    if axis == 1 || y.shape().len() == 1 {
        for i in 0..r {
            let span = i * c..(i + 1) * c;
            f(&y.data()[span.clone()], &g.data()[span.clone()], &mut out.data_mut()[span]);
        }
    } else {
        let (mut yl, mut gl, mut ol) = (vec![0.0; r], vec![0.0; r], vec![0.0; r]);
        for j in 0..c {
            for i in 0..r {
                yl[i] = y.data()[i * c + j];
                gl[i] = g.data()[i * c + j];
            }
            f(&yl, &gl, &mut ol);
            for i in 0..r {
                out.data_mut()[i * c + j] = ol[i];
            }
        }
    }
}
