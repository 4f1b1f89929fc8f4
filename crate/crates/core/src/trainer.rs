//! Triplet hinge loss over Wasserstein distances and its minimization.
//!
//! For a triplet `(i, j, k)` the loss is
//! `max(W(X_i, X_j) - W(X_j, X_k) + alpha, 0)`, where `W` is the exact
//! Wasserstein distance under the current low-rank Mahalanobis ground metric.
//! The total objective adds `lambda * R(W)` with a Frobenius or L1 penalty.
//! Gradients differentiate through the optimal transport plan held fixed,
//! and minibatches of triplets drive Adam.
//!
//! Within a batch each distinct distribution pair is solved once, in
//! parallel, and results are reduced in triplet order so outputs do not
//! depend on the number of threads.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::{EmpiricalDistribution, LabeledDataset};
use crate::error::{Error, Result};
use crate::metric::LowRankMahalanobis;
use crate::optim::Adam;
use crate::ot::{self, ProjectedDistribution};
use crate::rng::{self, streams};
use crate::triplets::{validate_triplets, Triplet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Regularizer {
    /// Squared Frobenius norm of `W`.
    #[default]
    Frobenius,
    /// Entrywise L1 norm of `W`; subgradient uses `sign(0) = 0`.
    L1,
}

impl Regularizer {
    pub fn value(self, w: &Array2<f64>) -> f64 {
        match self {
            Self::Frobenius => w.iter().map(|v| v * v).sum(),
            Self::L1 => w.iter().map(|v| v.abs()).sum(),
        }
    }

    pub fn gradient(self, w: &Array2<f64>) -> Array2<f64> {
        match self {
            Self::Frobenius => w * 2.0,
            Self::L1 => w.mapv(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Init {
    /// First `k` rows of the identity, so training starts from the Euclidean
    /// metric restricted to the first `k` features.
    #[default]
    IdentityTruncated,
    /// Gaussian entries with standard deviation `1/sqrt(D)`.
    RandomGaussian,
    /// All zeros; every distance vanishes and no gradient flows.
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub regularizer: Regularizer,
    pub rank_k: usize,
    pub neighbor_t: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            lambda: 0.5,
            regularizer: Regularizer::L1,
            rank_k: 2,
            neighbor_t: 5,
            batch_size: 128,
            learning_rate: 0.01,
            epochs: 40,
            seed: 0,
            init: Init::IdentityTruncated,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dimension: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.rank_k == 0 || self.rank_k > dimension {
            return fail(format!("rank_k must be in [1, {dimension}], got {}", self.rank_k));
        }
        if self.neighbor_t == 0 {
            return fail("neighbor_t must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }

    /// Starting parameters for a `dimension`-dimensional dataset.
    pub fn initial_params(&self, dimension: usize) -> LowRankMahalanobis {
        match self.init {
            Init::IdentityTruncated => LowRankMahalanobis::identity_truncated(self.rank_k, dimension),
            Init::RandomGaussian => {
                LowRankMahalanobis::random_gaussian(self.rank_k, dimension, &mut rng::stream(self.seed, streams::INIT))
            }
            Init::Zeros => LowRankMahalanobis::zeros(self.rank_k, dimension),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Total loss before the first update.
    pub initial_loss: f64,
    /// Total loss at the end of each epoch.
    pub loss_trace: Vec<f64>,
    pub final_params: LowRankMahalanobis,
    pub epochs_run: usize,
    pub wall_time: Duration,
}

/// `max(W(X_i, X_j) - W(X_j, X_k) + alpha, 0)`.
pub fn triplet_term(
    params: &LowRankMahalanobis,
    x_i: &EmpiricalDistribution,
    x_j: &EmpiricalDistribution,
    x_k: &EmpiricalDistribution,
    alpha: f64,
) -> Result<f64> {
    let metric = crate::metric::GroundMetric::LowRankMahalanobis(params.clone());
    let (same, _) = ot::wasserstein(&metric, x_i, x_j)?;
    let (other, _) = ot::wasserstein(&metric, x_j, x_k)?;
    Ok(hinge(same, other, alpha))
}

fn hinge(same: f64, other: f64, alpha: f64) -> f64 {
    (same - other + alpha).max(0.0)
}

/// Unordered distribution pair.
fn pair(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

type Pair = (usize, usize);

/// Distinct pairs needed by `triplets`, in first-use order.
fn distinct_pairs(triplets: &[Triplet]) -> (Vec<Pair>, HashMap<Pair, usize>) {
    let mut order = Vec::new();
    let mut index = HashMap::new();
    for t in triplets {
        for p in [pair(t.i, t.j), pair(t.j, t.k)] {
            index.entry(p).or_insert_with(|| {
                order.push(p);
                order.len() - 1
            });
        }
    }
    (order, index)
}

/// Projects every distribution referenced by `pairs`.
fn project_all(
    params: &LowRankMahalanobis,
    dataset: &LabeledDataset,
    pairs: &[(usize, usize)],
) -> HashMap<usize, Array2<f64>> {
    let mut needed: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    needed.sort_unstable();
    needed.dedup();
    needed
        .into_par_iter()
        .map(|idx| (idx, params.project(dataset.get(idx).points())))
        .collect()
}

fn pair_values(params: &LowRankMahalanobis, dataset: &LabeledDataset, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let projected = project_all(params, dataset, pairs);
    pairs
        .par_iter()
        .map(|&(a, b)| {
            let x = ProjectedDistribution { raw: dataset.get(a), projected: projected[&a].view() };
            let y = ProjectedDistribution { raw: dataset.get(b), projected: projected[&b].view() };
            ot::projected_wasserstein(&x, &y)
        })
        .collect()
}

fn pair_gradients(
    params: &LowRankMahalanobis,
    dataset: &LabeledDataset,
    pairs: &[(usize, usize)],
) -> Result<Vec<(f64, Array2<f64>)>> {
    let projected = project_all(params, dataset, pairs);
    pairs
        .par_iter()
        .map(|&(a, b)| {
            let x = ProjectedDistribution { raw: dataset.get(a), projected: projected[&a].view() };
            let y = ProjectedDistribution { raw: dataset.get(b), projected: projected[&b].view() };
            ot::projected_wasserstein_gradient(&x, &y)
        })
        .collect()
}

fn check_inputs(params: &LowRankMahalanobis, dataset: &LabeledDataset, triplets: &[Triplet]) -> Result<()> {
    if params.dimension() != dataset.dimension() {
        return Err(Error::DimensionMismatch { expected: dataset.dimension(), actual: params.dimension() });
    }
    validate_triplets(dataset, triplets)
}

/// Per-triplet hinge values, in triplet order.
pub fn triplet_terms(params: &LowRankMahalanobis, dataset: &LabeledDataset, triplets: &[Triplet], alpha: f64) -> Result<Vec<f64>> {
    check_inputs(params, dataset, triplets)?;
    let (pairs, index) = distinct_pairs(triplets);
    let values = pair_values(params, dataset, &pairs)?;
    Ok(triplets
        .iter()
        .map(|t| hinge(values[index[&pair(t.i, t.j)]], values[index[&pair(t.j, t.k)]], alpha))
        .collect())
}

/// Sum of hinge terms without the regularizer.
pub fn unregularized_loss(params: &LowRankMahalanobis, dataset: &LabeledDataset, triplets: &[Triplet], alpha: f64) -> Result<f64> {
    Ok(triplet_terms(params, dataset, triplets, alpha)?.iter().sum())
}

/// Sum of hinge terms plus `lambda * R(W)`.
pub fn total_loss(
    params: &LowRankMahalanobis,
    dataset: &LabeledDataset,
    triplets: &[Triplet],
    config: &TrainConfig,
) -> Result<f64> {
    let hinge_sum = unregularized_loss(params, dataset, triplets, config.alpha)?;
    Ok(hinge_sum + regularization(params, config))
}

pub fn regularization(params: &LowRankMahalanobis, config: &TrainConfig) -> f64 {
    if config.lambda == 0.0 {
        0.0
    } else {
        config.lambda * config.regularizer.value(&params.matrix().to_owned())
    }
}

/// Loss over `batch` (hinge sum plus regularizer) and its gradient.
pub fn loss_and_gradient(
    params: &LowRankMahalanobis,
    dataset: &LabeledDataset,
    batch: &[Triplet],
    config: &TrainConfig,
) -> Result<(f64, Array2<f64>)> {
    check_inputs(params, dataset, batch)?;
    let (pairs, index) = distinct_pairs(batch);
    let results = pair_gradients(params, dataset, &pairs)?;
    let w = params.matrix().to_owned();
    let mut grad = Array2::zeros(w.dim());
    let mut loss = 0.0;
    for t in batch {
        let (same, same_grad) = &results[index[&pair(t.i, t.j)]];
        let (other, other_grad) = &results[index[&pair(t.j, t.k)]];
        let term = same - other + config.alpha;
        if term > 0.0 {
            loss += term;
            grad += same_grad;
            grad -= other_grad;
        }
    }
    if config.lambda != 0.0 {
        loss += config.lambda * config.regularizer.value(&w);
        grad.scaled_add(config.lambda, &config.regularizer.gradient(&w));
    }
    Ok((loss, grad))
}

/// Gradient of the batch loss with respect to `W`. Triplets with a
/// nonpositive hinge contribute nothing.
pub fn loss_gradient(
    params: &LowRankMahalanobis,
    dataset: &LabeledDataset,
    batch: &[Triplet],
    config: &TrainConfig,
) -> Result<Array2<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("gradient requested for an empty batch".into()));
    }
    Ok(loss_and_gradient(params, dataset, batch, config)?.1)
}

/// Minimizes the total loss with Adam over shuffled minibatches.
pub fn train(dataset: &LabeledDataset, triplets: &[Triplet], config: &TrainConfig) -> Result<TrainReport> {
    train_from(config.initial_params(dataset.dimension()), dataset, triplets, config)
}

/// [`train`] starting from explicit parameters.
pub fn train_from(
    initial: LowRankMahalanobis,
    dataset: &LabeledDataset,
    triplets: &[Triplet],
    config: &TrainConfig,
) -> Result<TrainReport> {
    let start = Instant::now();
    config.validate(dataset.dimension())?;
    if triplets.is_empty() {
        return Err(Error::InvalidConfig("no triplets to train on".into()));
    }
    if initial.rank() != config.rank_k {
        return Err(Error::InvalidConfig(format!(
            "initial parameters have rank {} but rank_k is {}",
            initial.rank(),
            config.rank_k
        )));
    }
    check_inputs(&initial, dataset, triplets)?;

    let mut params = initial;
    let initial_loss = total_loss(&params, dataset, triplets, config)?;
    let mut adam = Adam::new(config.learning_rate, params.matrix().dim());
    let mut shuffle_rng = rng::stream(config.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Triplet> = chunk.iter().map(|&i| triplets[i]).collect();
            let (loss, grad) = loss_and_gradient(&params, dataset, &batch, config)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_index });
            }
            let mut w = params.into_matrix();
            adam.step(&mut w, &grad);
            params = LowRankMahalanobis::new(w).map_err(|_| Error::NonFiniteLoss { epoch, batch: batch_index })?;
        }
        let loss = total_loss(&params, dataset, triplets, config)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: order.len().div_ceil(config.batch_size) });
        }
        loss_trace.push(loss);
    }

    Ok(TrainReport {
        initial_loss,
        epochs_run: loss_trace.len(),
        loss_trace,
        final_params: params,
        wall_time: start.elapsed(),
    })
}

/// Outcome of checking whether every triplet is separated by the margin.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginCheck {
    /// `W(X_j, X_k) - W(X_i, X_j) >= alpha` for every triplet.
    pub separated: bool,
    /// Indices of triplets failing the margin.
    pub violating: Vec<usize>,
    /// Sum of hinge terms, zero exactly when `separated` holds.
    pub unregularized_loss: f64,
}

pub fn margin_separation_check(
    params: &LowRankMahalanobis,
    dataset: &LabeledDataset,
    triplets: &[Triplet],
    alpha: f64,
) -> Result<MarginCheck> {
    check_inputs(params, dataset, triplets)?;
    let (pairs, index) = distinct_pairs(triplets);
    let values = pair_values(params, dataset, &pairs)?;
    let mut violating = Vec::new();
    let mut loss = 0.0;
    for (idx, t) in triplets.iter().enumerate() {
        let same = values[index[&pair(t.i, t.j)]];
        let other = values[index[&pair(t.j, t.k)]];
        if other - same < alpha {
            violating.push(idx);
        }
        loss += hinge(same, other, alpha);
    }
    Ok(MarginCheck { separated: violating.is_empty(), violating, unregularized_loss: loss })
}
