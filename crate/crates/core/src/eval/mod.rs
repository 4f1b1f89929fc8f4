//! Evaluation of ground metrics: distance matrices, weighted kNN
//! classification over repeated group splits, agglomerative clustering and
//! partition agreement scores.

mod cluster;
mod knn;

pub use cluster::{agglomerative_cluster, canonical_labels, clustering_metrics, ClusterTarget, ClusteringScores, Linkage};
pub use knn::{accuracy, knn_classify, WEIGHT_EPSILON};

use std::collections::HashSet;
use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};

use crate::dataset::{group_shuffle_split, LabeledDataset};
use crate::error::{Error, Result};
use crate::metric::GroundMetric;
use crate::ot;
use crate::trainer::{self, TrainConfig};
use crate::triplets::{build_triplets, NeighborSource};

/// Square, symmetric distance matrix with one identifier per row.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    values: Array2<f64>,
}

impl DistanceMatrix {
    pub fn new(ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let n = ids.len();
        if values.dim() != (n, n) {
            return Err(Error::ShapeMismatch(format!("{n} ids for a {:?} matrix", values.dim())));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("distance matrix entries"));
        }
        for i in 0..n {
            if values[[i, i]] != 0.0 {
                return Err(Error::InvalidDataset(format!("nonzero diagonal at {i}")));
            }
            for j in i + 1..n {
                if (values[[i, j]] - values[[j, i]]).abs() > 1e-9 {
                    return Err(Error::InvalidDataset(format!("asymmetric entries at ({i}, {j})")));
                }
            }
        }
        Ok(Self { ids, values })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Header `id,<ids...>`, then one row per item.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend(self.ids.iter().cloned());
        csv.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(self.values.rows()) {
            let mut record = vec![id.clone()];
            record.extend(row.iter().map(|v| v.to_string()));
            csv.write_record(&record)?;
        }
        csv.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
        Ok(())
    }
}

/// Wasserstein distances between all distributions of `dataset`.
pub fn pairwise_wasserstein(dataset: &LabeledDataset, metric: &GroundMetric) -> Result<DistanceMatrix> {
    if dataset.len() < 2 {
        return Err(Error::InvalidDataset("need at least 2 distributions".into()));
    }
    let values = ot::pairwise_wasserstein_matrix(dataset, metric)?;
    DistanceMatrix::new(dataset.ids(), values)
}

/// Ground distances between all points of `dataset`, identified as
/// `<distribution id>#<row>`.
pub fn pairwise_ground(dataset: &LabeledDataset, metric: &GroundMetric) -> Result<DistanceMatrix> {
    let (points, _) = stacked_points(dataset);
    pairwise_ground_points(points.view(), point_ids(dataset), metric)
}

/// Ground distances between the rows of `points`.
pub fn pairwise_ground_points(points: ArrayView2<'_, f64>, ids: Vec<String>, metric: &GroundMetric) -> Result<DistanceMatrix> {
    if points.nrows() < 2 {
        return Err(Error::InvalidDataset("need at least 2 points".into()));
    }
    let mut values = metric.pairwise(points, points)?;
    let n = values.nrows();
    for i in 0..n {
        values[[i, i]] = 0.0;
        for j in i + 1..n {
            let v = 0.5 * (values[[i, j]] + values[[j, i]]);
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    DistanceMatrix::new(ids, values)
}

/// `<distribution id>#<row>` for every point, in stacking order.
pub fn point_ids(dataset: &LabeledDataset) -> Vec<String> {
    dataset
        .distributions()
        .iter()
        .flat_map(|d| (0..d.len()).map(move |r| format!("{}#{r}", d.id())))
        .collect()
}

/// All points of `dataset` stacked row-wise, with each point's class index.
pub fn stacked_points(dataset: &LabeledDataset) -> (Array2<f64>, Vec<usize>) {
    let views: Vec<_> = dataset.distributions().iter().map(|d| d.points()).collect();
    let points = ndarray::concatenate(Axis(0), &views).expect("equal dimensions");
    let classes = dataset.class_indices();
    let labels = dataset
        .distributions()
        .iter()
        .zip(classes)
        .flat_map(|(d, c)| std::iter::repeat_n(c, d.len()))
        .collect();
    (points, labels)
}

/// Writes `id,cluster`.
pub fn write_cluster_labels_csv<W: Write>(ids: &[String], labels: &[usize], writer: W) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} ids for {} labels", ids.len(), labels.len())));
    }
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["id", "cluster"])?;
    for (id, label) in ids.iter().zip(labels) {
        csv.write_record([id.as_str(), &label.to_string()])?;
    }
    csv.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}

/// How distances are obtained for a benchmark.
#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    /// A fixed ground metric.
    Fixed(GroundMetric),
    /// A low-rank Mahalanobis metric trained on each split's training part.
    Learned { config: TrainConfig, neighbors: NeighborSource },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Fixed(metric) => metric.name(),
            Self::Learned { .. } => "learned",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Level {
    /// Classify whole distributions by Wasserstein distance.
    #[default]
    Distribution,
    /// Classify individual points by ground distance.
    Point,
}

impl Level {
    pub fn default_k(self) -> usize {
        match self {
            Self::Distribution => 5,
            Self::Point => 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EvalPartition {
    #[default]
    Test,
    Validation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub level: Level,
    pub splits: usize,
    /// Defaults to [`Level::default_k`]; clamped to the training size.
    pub k: Option<usize>,
    pub test_fraction: f64,
    /// Fraction of the non-test part withheld for validation.
    pub validation_fraction: f64,
    pub evaluate_on: EvalPartition,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            level: Level::Distribution,
            splits: 10,
            k: None,
            test_fraction: 0.5,
            validation_fraction: 0.2,
            evaluate_on: EvalPartition::Test,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkResult {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population variance of the per-split accuracies.
    pub variance: f64,
    pub split_seeds: Vec<u64>,
}

impl BenchmarkResult {
    fn from_accuracies(accuracies: Vec<f64>, split_seeds: Vec<u64>) -> Self {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let variance = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        Self { accuracies, mean, variance, split_seeds }
    }

    /// `split,accuracy` rows followed by `mean` and `variance` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["split", "accuracy"])?;
        for (i, acc) in self.accuracies.iter().enumerate() {
            csv.write_record([i.to_string(), acc.to_string()])?;
        }
        csv.write_record(["mean".to_string(), self.mean.to_string()])?;
        csv.write_record(["variance".to_string(), self.variance.to_string()])?;
        csv.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
        Ok(())
    }
}

/// Repeated split / (train) / kNN evaluation.
///
/// Split `s` uses seed `config.seed + s` for both the partition and, for
/// learned methods, the trainer.
pub fn classification_benchmark(dataset: &LabeledDataset, method: &Method, config: &BenchmarkConfig) -> Result<BenchmarkResult> {
    if dataset.classes().len() < 2 {
        return Err(Error::InvalidDataset("classification needs at least 2 classes".into()));
    }
    if config.splits == 0 {
        return Err(Error::InvalidConfig("splits must be at least 1".into()));
    }
    if config.k == Some(0) {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let mut accuracies = Vec::with_capacity(config.splits);
    let mut seeds = Vec::with_capacity(config.splits);
    for s in 0..config.splits {
        let seed = config.seed.wrapping_add(s as u64);
        accuracies.push(evaluate_split(dataset, method, config, seed)?);
        seeds.push(seed);
    }
    Ok(BenchmarkResult::from_accuracies(accuracies, seeds))
}

/// Accuracy of `method` on one split drawn with `seed`.
pub fn evaluate_split(dataset: &LabeledDataset, method: &Method, config: &BenchmarkConfig, seed: u64) -> Result<f64> {
    let split = group_shuffle_split(dataset, config.test_fraction, config.validation_fraction, seed)?;
    let held_out = match config.evaluate_on {
        EvalPartition::Test => &split.test,
        EvalPartition::Validation => &split.validation,
    };
    if held_out.is_empty() {
        return Err(Error::InvalidConfig("evaluation partition is empty".into()));
    }
    let train_ids: HashSet<&str> = split.train.distributions().iter().map(|d| d.id()).collect();
    if held_out.distributions().iter().any(|d| train_ids.contains(d.id())) {
        return Err(Error::InvalidDataset("training and evaluation partitions share distributions".into()));
    }

    let metric = match method {
        Method::Fixed(metric) => metric.clone(),
        Method::Learned { config: train_config, neighbors } => {
            let train_config = TrainConfig { seed, ..train_config.clone() };
            let triplets = build_triplets(&split.train, train_config.neighbor_t, *neighbors, seed)?;
            let report = trainer::train(&split.train, &triplets.triplets, &train_config)?;
            GroundMetric::LowRankMahalanobis(report.final_params)
        }
    };

    let k_default = config.k.unwrap_or(config.level.default_k());
    match config.level {
        Level::Distribution => {
            let distances = ot::cross_wasserstein_matrix(held_out, &split.train, &metric)?;
            let k = k_default.min(split.train.len());
            let predicted = knn_classify(distances.view(), &split.train.class_indices(), k)?;
            accuracy(&predicted, &held_out.class_indices())
        }
        Level::Point => {
            let (train_points, train_labels) = stacked_points(&split.train);
            let (eval_points, eval_labels) = stacked_points(held_out);
            let distances = metric.pairwise(eval_points.view(), train_points.view())?;
            let k = k_default.min(train_points.nrows());
            let predicted = knn_classify(distances.view(), &train_labels, k)?;
            accuracy(&predicted, &eval_labels)
        }
    }
}

/// Fraction of splits in which each point was classified correctly by
/// point-level kNN under a fixed `metric`, in stacking order. `None` for
/// points never held out.
pub fn point_hit_rates(dataset: &LabeledDataset, metric: &GroundMetric, config: &BenchmarkConfig) -> Result<Vec<Option<f64>>> {
    let offsets: Vec<usize> = dataset
        .distributions()
        .iter()
        .scan(0, |acc, d| {
            let start = *acc;
            *acc += d.len();
            Some(start)
        })
        .collect();
    let position: std::collections::HashMap<&str, usize> =
        dataset.distributions().iter().enumerate().map(|(i, d)| (d.id(), i)).collect();
    let mut hits = vec![0usize; dataset.point_count()];
    let mut seen = vec![0usize; dataset.point_count()];
    for s in 0..config.splits {
        let seed = config.seed.wrapping_add(s as u64);
        let split = group_shuffle_split(dataset, config.test_fraction, config.validation_fraction, seed)?;
        let held_out = match config.evaluate_on {
            EvalPartition::Test => &split.test,
            EvalPartition::Validation => &split.validation,
        };
        let (train_points, train_labels) = stacked_points(&split.train);
        let (eval_points, eval_labels) = stacked_points(held_out);
        let distances = metric.pairwise(eval_points.view(), train_points.view())?;
        let k = config.k.unwrap_or(Level::Point.default_k()).min(train_points.nrows());
        let predicted = knn_classify(distances.view(), &train_labels, k)?;
        let mut row = 0;
        for d in held_out.distributions() {
            let start = offsets[position[d.id()]];
            for p in 0..d.len() {
                seen[start + p] += 1;
                if predicted[row] == eval_labels[row] {
                    hits[start + p] += 1;
                }
                row += 1;
            }
        }
    }
    Ok(hits.iter().zip(&seen).map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64)).collect())
}
