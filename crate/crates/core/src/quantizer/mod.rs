//! Offline K-means over frame features, nearest-centroid assignment and
//! run-length deduplication into discrete unit sequences.

mod io;

pub use io::{
    codebook_from_bytes, codebook_to_bytes, load_codebook, load_units, parse_units, save_codebook,
    save_units, units_to_text, DEDUP_UNITS_SUFFIX, KMNS_MAGIC, UNITS_SUFFIX,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::substrate::Tensor;

/// Mean centroid shift below which Lloyd iterations stop.
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub iterations: usize,
    /// Inertia under nearest assignment at the start of every Lloyd
    /// iteration, followed by the inertia of the final centroids.
    pub inertia_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    centroids: Tensor,
    layer_index: usize,
    pub meta: Option<TrainingMeta>,
}

impl Codebook {
    /// Validates `K >= 2`, finiteness and pairwise-distinct centroids.
    pub fn new(centroids: Tensor, layer_index: usize) -> Result<Self> {
        if centroids.shape().len() != 2 {
            return Err(Error::InvalidCodebook(format!("centroids must be K×D, got {:?}", centroids.shape())));
        }
        let (k, d) = centroids.dims2();
        if k < 2 || d == 0 {
            return Err(Error::InvalidCodebook(format!("need K >= 2 and D >= 1, got K={k} D={d}")));
        }
        if !centroids.is_finite() {
            return Err(Error::NonFinite("codebook"));
        }
        for i in 0..k {
            for j in i + 1..k {
                if centroids.row(i) == centroids.row(j) {
                    return Err(Error::InvalidCodebook(format!("centroids {i} and {j} coincide")));
                }
            }
        }
        Ok(Self {
            centroids,
            layer_index,
            meta: None,
        })
    }

    pub fn centroids(&self) -> &Tensor {
        &self.centroids
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    /// Nearest centroid and its squared distance; ties go to the smaller index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        nearest(&self.centroids, x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitSequence {
    pub utt_id: String,
    pub units: Vec<usize>,
    pub deduplicated: bool,
}

impl UnitSequence {
    pub fn new(utt_id: impl Into<String>, units: Vec<usize>) -> Self {
        Self {
            utt_id: utt_id.into(),
            units,
            deduplicated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Tensor, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..centroids.rows() {
        let d = sq_dist(x, centroids.row(k));
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn inertia_of(features: &Tensor, centroids: &Tensor) -> f64 {
    (0..features.rows()).map(|i| nearest(centroids, features.row(i)).1).sum()
}

/// Sum of squared distances from every row to its nearest centroid.
pub fn inertia(features: &Tensor, codebook: &Codebook) -> Result<f64> {
    check_dim(features, codebook)?;
    Ok(inertia_of(features, &codebook.centroids))
}

fn check_dim(features: &Tensor, codebook: &Codebook) -> Result<()> {
    if features.shape().len() != 2 || features.cols() != codebook.dim() {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim(),
            got: features.shape().last().copied().unwrap_or(0),
        });
    }
    Ok(())
}

fn kmeans_pp(features: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let n = features.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(features.row(i), features.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateData { k });
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
        }
        while d2[pick] <= 0.0 {
            pick -= 1;
        }
        chosen.push(pick);
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(features.row(i), features.row(pick)));
        }
    }
    Ok(chosen)
}

/// K-means++ initialisation followed by Lloyd iterations until the mean
/// centroid shift drops below [`SHIFT_TOLERANCE`] or `max_iters` is reached.
/// Empty clusters are re-seeded with the point farthest from its centroid.
pub fn train_kmeans(features: &Tensor, k: usize, max_iters: usize, seed: u64, layer_index: usize) -> Result<Codebook> {
    if features.shape().len() != 2 {
        return Err(Error::shape("train_kmeans", format!("features must be N×D, got {:?}", features.shape())));
    }
    let (n, d) = features.dims2();
    if k < 2 {
        return Err(Error::InvalidCodebook(format!("K must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::TooFewPoints { n, k });
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("k-means features"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_pp(features, k, &mut rng)?;
    let mut centroids = Tensor::zeros(&[k, d]);
    for (c, &i) in init.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(features.row(i));
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0; n];
    while iterations < max_iters {
        let mut total = 0.0;
        for i in 0..n {
            let (a, dd) = nearest(&centroids, features.row(i));
            assign[i] = a;
            dist[i] = dd;
            total += dd;
        }
        trace.push(total);
        iterations += 1;

        let mut sums = Tensor::zeros(&[k, d]);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums.row_mut(assign[i]).iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        let mut shift = 0.0;
        for c in 0..k {
            let new: Vec<f64> = if counts[c] > 0 {
                sums.row(c).iter().map(|s| s / counts[c] as f64).collect()
            } else {
                // farthest point not already used for another empty cluster
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dist[b] >= dist[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("n >= k");
                taken[far] = true;
                dist[far] = 0.0;
                features.row(far).to_vec()
            };
            shift += sq_dist(&new, centroids.row(c)).sqrt();
            centroids.row_mut(c).copy_from_slice(&new);
        }
        if shift / (k as f64) < SHIFT_TOLERANCE {
            break;
        }
    }
    trace.push(inertia_of(features, &centroids));

    let mut cb = Codebook::new(centroids, layer_index)?;
    cb.meta = Some(TrainingMeta {
        seed,
        iterations,
        inertia_trace: trace,
    });
    Ok(cb)
}

/// Runs [`train_kmeans`] with `restarts` derived seeds and keeps the
/// codebook with the lowest final inertia (earliest restart on ties).
pub fn train_kmeans_best_of(
    features: &Tensor,
    k: usize,
    max_iters: usize,
    seed: u64,
    restarts: usize,
    layer_index: usize,
) -> Result<Codebook> {
    let mut best: Option<(f64, Codebook)> = None;
    let mut last_err = None;
    for r in 0..restarts.max(1) {
        match train_kmeans(features, k, max_iters, seed.wrapping_add(r as u64), layer_index) {
            Ok(cb) => {
                let fin = *cb.meta.as_ref().unwrap().inertia_trace.last().unwrap();
                if best.as_ref().is_none_or(|(b, _)| fin < *b) {
                    best = Some((fin, cb));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((_, cb)) => Ok(cb),
        None => Err(last_err.expect("at least one restart")),
    }
}

/// `argmin_k ‖x_t − c_k‖²` for every row; ties go to the smallest index.
pub fn assign(features: &Tensor, codebook: &Codebook) -> Result<Vec<usize>> {
    check_dim(features, codebook)?;
    Ok((0..features.rows()).map(|t| codebook.nearest(features.row(t)).0).collect())
}

/// Assignment with the layer guard used by the pipeline.
pub fn assign_layer(features: &Tensor, layer_index: usize, codebook: &Codebook) -> Result<Vec<usize>> {
    if layer_index != codebook.layer_index {
        return Err(Error::LayerMismatch {
            expected: codebook.layer_index,
            got: layer_index,
        });
    }
    assign(features, codebook)
}

/// Collapses runs of equal adjacent units.
pub fn dedup_units(units: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(units.len());
    for &u in units {
        if out.last() != Some(&u) {
            out.push(u);
        }
    }
    out
}

pub fn deduplicate(seq: &UnitSequence) -> UnitSequence {
    UnitSequence {
        utt_id: seq.utt_id.clone(),
        units: dedup_units(&seq.units),
        deduplicated: true,
    }
}
