//! Option groups shared by the subcommands. Each group is both a set of
//! command-line flags and a set of top-level keys in a TOML config file; a
//! flag given on the command line wins over the file.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use groundmetric::eval::{BenchmarkConfig, EvalPartition, Level, Linkage};
use groundmetric::trainer::{Init, Regularizer, TrainConfig};
use groundmetric::triplets::NeighborSource;
use serde::{Deserialize, Serialize};

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct SeedOpts {
    /// Seed for every random choice made by the command.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct DataOpts {
    /// Dataset CSV (`dist_id,label,<features...>`).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct OutOpts {
    /// Output path. Without it, results go to stdout and no manifest is written.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct OutDirOpts {
    /// Directory receiving `params.csv`, `loss.csv` and `manifest.toml`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct SynthOpts {
    /// Number of features.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub distributions_per_class: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Shift of the class-specific mode along feature 0, per class.
    #[arg(long)]
    pub class_offset: Option<f64>,
    /// Standard deviation on the non-signal features (10 in 2D, 1 otherwise).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Standard deviation on the signal feature.
    #[arg(long)]
    pub signal_noise: Option<f64>,
    /// Distance scale of the two shared corner modes.
    #[arg(long)]
    pub corner: Option<f64>,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerArg {
    Frobenius,
    L1,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    Identity,
    Random,
    Zeros,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborArg {
    Wasserstein,
    Random,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct TrainOpts {
    /// Triplet margin.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Regularization weight.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub regularizer: Option<RegularizerArg>,
    /// Rank of the learned projection.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Neighbors per distribution used to form triplets.
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long, value_enum)]
    pub neighbor_source: Option<NeighborArg>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
}

impl TrainOpts {
    pub fn complete(self) -> Self {
        let d = TrainConfig::default();
        Self {
            alpha: self.alpha.or(Some(d.alpha)),
            lambda: self.lambda.or(Some(d.lambda)),
            regularizer: self.regularizer.or(Some(match d.regularizer {
                Regularizer::Frobenius => RegularizerArg::Frobenius,
                Regularizer::L1 => RegularizerArg::L1,
            })),
            rank: self.rank.or(Some(d.rank_k)),
            neighbors: self.neighbors.or(Some(d.neighbor_t)),
            neighbor_source: self.neighbor_source.or(Some(NeighborArg::Wasserstein)),
            batch_size: self.batch_size.or(Some(d.batch_size)),
            learning_rate: self.learning_rate.or(Some(d.learning_rate)),
            epochs: self.epochs.or(Some(d.epochs)),
            init: self.init.or(Some(InitArg::Identity)),
        }
    }

    /// Expects a completed group.
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha.unwrap(),
            lambda: self.lambda.unwrap(),
            regularizer: match self.regularizer.unwrap() {
                RegularizerArg::Frobenius => Regularizer::Frobenius,
                RegularizerArg::L1 => Regularizer::L1,
            },
            rank_k: self.rank.unwrap(),
            neighbor_t: self.neighbors.unwrap(),
            batch_size: self.batch_size.unwrap(),
            learning_rate: self.learning_rate.unwrap(),
            epochs: self.epochs.unwrap(),
            seed,
            init: match self.init.unwrap() {
                InitArg::Identity => Init::IdentityTruncated,
                InitArg::Random => Init::RandomGaussian,
                InitArg::Zeros => Init::Zeros,
            },
        }
    }

    pub fn neighbor_source(&self) -> NeighborSource {
        match self.neighbor_source.unwrap() {
            NeighborArg::Wasserstein => NeighborSource::WassersteinEuclidean,
            NeighborArg::Random => NeighborSource::Random,
        }
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    Euclidean,
    Manhattan,
    Cosine,
    /// Fixed low-rank Mahalanobis metric read from `--params`.
    Mahalanobis,
    /// Train a metric on each split (eval-classify only).
    Learned,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct MetricOpts {
    /// Ground metric; defaults to `mahalanobis` when `--params` is given.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Parameter CSV written by `train`.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

impl MetricOpts {
    pub fn complete(self) -> Self {
        let metric = self
            .metric
            .or(Some(if self.params.is_some() { MetricArg::Mahalanobis } else { MetricArg::Euclidean }));
        Self { metric, ..self }
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum LevelArg {
    Distribution,
    Point,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionArg {
    Test,
    Validation,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct BenchOpts {
    #[arg(long, value_enum)]
    pub level: Option<LevelArg>,
    /// Number of random group splits.
    #[arg(long)]
    pub splits: Option<usize>,
    /// Neighbors for kNN (5 for distributions, 100 for points).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Fraction of the non-test part withheld for validation.
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Partition that is classified.
    #[arg(long, value_enum)]
    pub evaluate_on: Option<PartitionArg>,
}

impl BenchOpts {
    pub fn complete(self, evaluate_on: PartitionArg) -> Self {
        let d = BenchmarkConfig::default();
        let level = self.level.unwrap_or(LevelArg::Distribution);
        Self {
            level: Some(level),
            splits: self.splits.or(Some(d.splits)),
            k: self.k.or(Some(level_of(level).default_k())),
            test_fraction: self.test_fraction.or(Some(d.test_fraction)),
            validation_fraction: self.validation_fraction.or(Some(d.validation_fraction)),
            evaluate_on: self.evaluate_on.or(Some(evaluate_on)),
        }
    }

    /// Expects a completed group.
    pub fn config(&self, seed: u64) -> BenchmarkConfig {
        BenchmarkConfig {
            level: level_of(self.level.unwrap()),
            splits: self.splits.unwrap(),
            k: self.k,
            test_fraction: self.test_fraction.unwrap(),
            validation_fraction: self.validation_fraction.unwrap(),
            evaluate_on: match self.evaluate_on.unwrap() {
                PartitionArg::Test => EvalPartition::Test,
                PartitionArg::Validation => EvalPartition::Validation,
            },
            seed,
        }
    }
}

fn level_of(level: LevelArg) -> Level {
    match level {
        LevelArg::Distribution => Level::Distribution,
        LevelArg::Point => Level::Point,
    }
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum LinkageArg {
    Average,
    Complete,
    Single,
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Average => Linkage::Average,
            LinkageArg::Complete => Linkage::Complete,
            LinkageArg::Single => Linkage::Single,
        }
    }
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct ClusterOpts {
    #[arg(long, value_enum)]
    pub linkage: Option<LinkageArg>,
    /// Number of clusters; defaults to the number of classes.
    #[arg(long, conflicts_with = "median_threshold")]
    pub clusters: Option<usize>,
    /// Stop merging once the merge distance exceeds the median pairwise distance.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub median_threshold: Option<bool>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct PointFilterOpts {
    /// Point level only: keep points whose kNN hit rate over the splits is at
    /// least this value.
    #[arg(long)]
    pub min_point_accuracy: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct ImportanceOpts {
    /// Feature names, one per line; defaults to the parameter CSV header.
    #[arg(long)]
    pub names: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, Default)]
pub struct GridOpts {
    /// Comma-separated margins.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub alphas: Option<Vec<f64>>,
    /// Comma-separated regularization weights.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lambdas: Option<Vec<f64>>,
}
