//! Labeled collections of empirical distributions.
//!
//! A [`LabeledDataset`] holds one [`EmpiricalDistribution`] per sample group
//! (for single-cell data, one patient), each a weighted point cloud in a
//! shared feature space with a class label. The module also covers CSV
//! ingestion, the synthetic three-mode generator and group-aware splitting.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// A weighted point cloud with an identifier and a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalDistribution {
    id: String,
    label: String,
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl EmpiricalDistribution {
    /// Builds a distribution with uniform weights `1/n`.
    pub fn new(id: impl Into<String>, label: impl Into<String>, points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        let weights = Array1::from_elem(n, 1.0 / n.max(1) as f64);
        Self::with_weights(id, label, points, weights)
    }

    pub fn with_weights(
        id: impl Into<String>,
        label: impl Into<String>,
        points: Array2<f64>,
        weights: Array1<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if points.nrows() == 0 {
            return Err(Error::InvalidDataset(format!("distribution {id:?} has no points")));
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidDataset(format!("distribution {id:?} has zero-dimensional points")));
        }
        if weights.len() != points.nrows() {
            return Err(Error::InvalidDataset(format!(
                "distribution {id:?} has {} points but {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point features"));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidDataset(format!("distribution {id:?} has a negative or non-finite weight")));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidDataset(format!("weights of distribution {id:?} sum to {total}, not 1")));
        }
        Ok(Self { id, label: label.into(), points, weights })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Points as rows of an `n x D` matrix.
    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, index: usize) -> ArrayView1<'_, f64> {
        self.points.row(index)
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dimension(&self) -> usize {
        self.points.ncols()
    }
}

/// A set of labeled distributions sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    distributions: Vec<EmpiricalDistribution>,
    dimension: usize,
    classes: Vec<String>,
    feature_names: Option<Vec<String>>,
}

impl LabeledDataset {
    /// Validates and wraps `distributions`. Requires at least two classes,
    /// unique ids and a common dimension.
    pub fn new(distributions: Vec<EmpiricalDistribution>) -> Result<Self> {
        let classes: Vec<String> = distributions
            .iter()
            .map(|d| d.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if classes.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "fewer than 2 classes (found {})",
                classes.len()
            )));
        }
        Self::with_classes(distributions, classes)
    }

    /// Builds a dataset over an explicit class list. Used for partitions of a
    /// larger dataset, which keep the parent's classes even when some are
    /// absent (or the partition is empty).
    fn with_classes(distributions: Vec<EmpiricalDistribution>, classes: Vec<String>) -> Result<Self> {
        let dimension = distributions.first().map_or(0, EmpiricalDistribution::dimension);
        let mut seen = HashSet::with_capacity(distributions.len());
        for dist in &distributions {
            if dist.dimension() != dimension {
                return Err(Error::DimensionMismatch { expected: dimension, actual: dist.dimension() });
            }
            if !seen.insert(dist.id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate distribution id {:?}", dist.id)));
            }
            if classes.binary_search(&dist.label).is_err() {
                return Err(Error::InvalidDataset(format!("label {:?} is not a known class", dist.label)));
            }
        }
        Ok(Self { distributions, dimension, classes, feature_names: None })
    }

    /// Attaches feature names (one per dimension).
    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, actual: names.len() });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn distributions(&self) -> &[EmpiricalDistribution] {
        &self.distributions
    }

    pub fn get(&self, index: usize) -> &EmpiricalDistribution {
        &self.distributions[index]
    }

    pub fn len(&self) -> usize {
        self.distributions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distributions.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Sorted distinct class labels.
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Feature names, falling back to `f0, f1, ...`.
    pub fn feature_names_or_default(&self) -> Vec<String> {
        self.feature_names
            .clone()
            .unwrap_or_else(|| (0..self.dimension).map(|f| format!("f{f}")).collect())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(label)).ok()
    }

    /// Class index of every distribution, in dataset order.
    pub fn class_indices(&self) -> Vec<usize> {
        self.distributions
            .iter()
            .map(|d| self.class_index(&d.label).expect("label validated at construction"))
            .collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.distributions.iter().map(|d| d.id.clone()).collect()
    }

    /// Total number of points across all distributions.
    pub fn point_count(&self) -> usize {
        self.distributions.iter().map(EmpiricalDistribution::len).sum()
    }

    /// Sub-dataset made of the distributions at `indices`, keeping the class
    /// list and feature names of `self`.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let distributions = indices.iter().map(|&i| self.distributions[i].clone()).collect();
        let mut out = Self::with_classes(distributions, self.classes.clone())
            .expect("a subset of a valid dataset is valid");
        if out.distributions.is_empty() {
            out.dimension = self.dimension;
        }
        out.feature_names = self.feature_names.clone();
        out
    }

    /// Reads the `dist_id,label,f0,...` CSV format from `path`.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::read_csv(file)
    }

    /// Parses the CSV format from any reader. Rows sharing a `dist_id` form
    /// one distribution; distributions appear in first-seen order and row
    /// order within a distribution is preserved.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let header = csv.headers()?.clone();
        if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
            return Err(Error::Parse { line: 1, message: "empty file".into() });
        }
        if header.get(0).map(str::trim) != Some("dist_id") {
            return Err(Error::Parse { line: 1, message: "first column must be `dist_id`".into() });
        }
        if header.get(1).map(str::trim) != Some("label") {
            return Err(Error::Parse { line: 1, message: "missing `label` column".into() });
        }
        let dim = header.len() - 2;
        if dim == 0 {
            return Err(Error::Parse { line: 1, message: "no feature columns".into() });
        }
        let feature_names: Vec<String> = header.iter().skip(2).map(|s| s.trim().to_string()).collect();

        struct Group {
            id: String,
            label: String,
            values: Vec<f64>,
        }
        let mut groups: Vec<Group> = Vec::new();
        let mut by_id: HashMap<String, usize> = HashMap::new();

        for record in csv.records() {
            let record = record?;
            let line = record.position().map_or(0, csv::Position::line);
            if record.len() != dim + 2 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} columns, found {}", dim + 2, record.len()),
                });
            }
            let id = record[0].trim().to_string();
            let label = record[1].trim().to_string();
            if id.is_empty() || label.is_empty() {
                return Err(Error::Parse { line, message: "empty dist_id or label".into() });
            }
            let slot = *by_id.entry(id.clone()).or_insert_with(|| {
                groups.push(Group { id: id.clone(), label: label.clone(), values: Vec::new() });
                groups.len() - 1
            });
            let group = &mut groups[slot];
            if group.label != label {
                return Err(Error::Parse {
                    line,
                    message: format!("distribution {id:?} has conflicting labels {:?} and {label:?}", group.label),
                });
            }
            for (col, field) in record.iter().enumerate().skip(2) {
                let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("non-numeric value {field:?} in column {:?}", &header[col]),
                })?;
                if !value.is_finite() {
                    return Err(Error::Parse { line, message: format!("non-finite value {field:?}") });
                }
                group.values.push(value);
            }
        }
        if groups.is_empty() {
            return Err(Error::Parse { line: 1, message: "empty file: no data rows".into() });
        }

        let distributions = groups
            .into_iter()
            .map(|g| {
                let n = g.values.len() / dim;
                let points = Array2::from_shape_vec((n, dim), g.values).expect("row lengths checked");
                EmpiricalDistribution::new(g.id, g.label, points)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(distributions)?.with_feature_names(feature_names)
    }

    /// Writes the dataset in the `dist_id,label,f0,...` CSV format.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["dist_id".to_string(), "label".to_string()];
        header.extend(self.feature_names_or_default());
        csv.write_record(&header)?;
        for dist in &self.distributions {
            for row in dist.points.rows() {
                let mut record = Vec::with_capacity(row.len() + 2);
                record.push(dist.id.clone());
                record.push(dist.label.clone());
                record.extend(row.iter().map(|v| v.to_string()));
                csv.write_record(&record)?;
            }
        }
        csv.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
        Ok(())
    }
}

/// Parameters of the synthetic three-mode dataset.
///
/// Every distribution mixes three Gaussian modes with equal weight: two
/// corner modes that are identical for all classes and a center mode whose
/// mean moves along `signal_axis` by `class_index * class_offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub dimension: usize,
    pub distributions_per_class: usize,
    pub points_per_distribution: usize,
    pub class_count: usize,
    pub signal_axis: usize,
    pub class_offset: f64,
    /// Means of the two corner modes.
    pub mode_offsets: [Vec<f64>; 2],
    /// Per-axis standard deviation of every mode.
    pub noise_scales: Vec<f64>,
    pub seed: u64,
}

impl SynthConfig {
    /// Two-dimensional variant with strong noise on axis 1.
    pub fn two_dimensional() -> Self {
        let mut cfg = Self::isotropic(2);
        cfg.noise_scales = vec![Self::SIGNAL_NOISE, 10.0];
        cfg
    }

    /// High-dimensional variant with identically scaled noise on every
    /// non-signal axis.
    pub fn isotropic(dimension: usize) -> Self {
        let mut noise_scales = vec![1.0; dimension];
        if let Some(signal) = noise_scales.first_mut() {
            *signal = Self::SIGNAL_NOISE;
        }
        Self {
            dimension,
            distributions_per_class: 10,
            points_per_distribution: 50,
            class_count: 3,
            signal_axis: 0,
            class_offset: 1.0,
            mode_offsets: Self::diagonal_corners(dimension, 4.0),
            noise_scales,
            seed: 0,
        }
    }

    /// Default spread of the center mode along the signal axis.
    pub const SIGNAL_NOISE: f64 = 0.1;

    /// Corner modes at `+c` and `-c` along the diagonal, scaled so their
    /// Euclidean norm matches the 2D point `(c, c)` at any dimension.
    pub fn diagonal_corners(dimension: usize, c: f64) -> [Vec<f64>; 2] {
        let coord = c * (2.0 / dimension.max(1) as f64).sqrt();
        [vec![coord; dimension], vec![-coord; dimension]]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dimension < 2 {
            return fail(format!("dimension must be at least 2, got {}", self.dimension));
        }
        if self.distributions_per_class == 0 || self.points_per_distribution == 0 {
            return fail("distributions_per_class and points_per_distribution must be positive".into());
        }
        if self.class_count < 2 {
            return fail(format!("class_count must be at least 2, got {}", self.class_count));
        }
        if self.signal_axis >= self.dimension {
            return fail(format!("signal_axis {} out of range for dimension {}", self.signal_axis, self.dimension));
        }
        if !(self.class_offset.is_finite() && self.class_offset >= 0.0) {
            return fail(format!("class_offset must be finite and nonnegative, got {}", self.class_offset));
        }
        if self.noise_scales.len() != self.dimension {
            return fail(format!("{} noise scales for dimension {}", self.noise_scales.len(), self.dimension));
        }
        if self.noise_scales.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return fail("noise scales must be positive".into());
        }
        for corner in &self.mode_offsets {
            if corner.len() != self.dimension || corner.iter().any(|v| !v.is_finite()) {
                return fail("corner mode offsets must be finite with one entry per dimension".into());
            }
        }
        Ok(())
    }
}

/// Samples the synthetic dataset described by `config`.
///
/// Points are assigned to modes round-robin so each mode holds an equal share
/// (up to one point). Ids are `c{class}_d{index}` and labels `class{class}`.
/// The output depends only on `config`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<LabeledDataset> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, streams::SYNTH);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let dim = config.dimension;
    let n = config.points_per_distribution;

    let mut distributions = Vec::with_capacity(config.class_count * config.distributions_per_class);
    for class in 0..config.class_count {
        let mut center = vec![0.0; dim];
        center[config.signal_axis] = class as f64 * config.class_offset;
        let modes = [&config.mode_offsets[0], &config.mode_offsets[1], &center];
        for d in 0..config.distributions_per_class {
            let mut points = Array2::zeros((n, dim));
            for (p, mut row) in points.rows_mut().into_iter().enumerate() {
                let mean = modes[p % 3];
                for f in 0..dim {
                    row[f] = mean[f] + config.noise_scales[f] * noise.sample(&mut rng);
                }
            }
            distributions.push(EmpiricalDistribution::new(
                format!("c{class}_d{d}"),
                format!("class{class}"),
                points,
            )?);
        }
    }
    LabeledDataset::new(distributions)
}

/// Train/test/validation partition at distribution level.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub validation: LabeledDataset,
}

/// Partitions whole distributions into train, test and validation sets,
/// stratified per class.
///
/// For a class with `n` members, `round(n * test_fraction)` (at least one,
/// at most `n - 1`) go to test; of the remainder, `round(rest *
/// validation_fraction)` go to validation and the rest to train.
pub fn group_shuffle_split(
    dataset: &LabeledDataset,
    test_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<Split> {
    split_with_rng(dataset, test_fraction, validation_fraction, &mut rng::stream(seed, streams::SPLIT))
}

/// [`group_shuffle_split`] for the `index`-th of several repeated splits.
pub fn group_shuffle_split_indexed(
    dataset: &LabeledDataset,
    test_fraction: f64,
    validation_fraction: f64,
    seed: u64,
    index: u64,
) -> Result<Split> {
    let mut rng = rng::indexed_stream(seed, streams::SPLIT, index);
    split_with_rng(dataset, test_fraction, validation_fraction, &mut rng)
}

fn split_with_rng<R: rand::Rng>(
    dataset: &LabeledDataset,
    test_fraction: f64,
    validation_fraction: f64,
    rng: &mut R,
) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test_fraction must be in (0, 1), got {test_fraction}")));
    }
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::InvalidConfig(format!(
            "validation_fraction must be in [0, 1), got {validation_fraction}"
        )));
    }
    let class_of = dataset.class_indices();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut validation = Vec::new();
    for (class, label) in dataset.classes().iter().enumerate() {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| class_of[i] == class).collect();
        let n = members.len();
        if n < 2 {
            return Err(Error::InvalidDataset(format!(
                "class {label:?} has {n} distribution(s); at least 2 are required to split"
            )));
        }
        members.shuffle(rng);
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let rest = n - n_test;
        let n_val = (rest as f64 * validation_fraction).round() as usize;
        if n_val >= rest {
            return Err(Error::InvalidConfig(format!(
                "fractions leave class {label:?} empty in the train partition"
            )));
        }
        test.extend_from_slice(&members[..n_test]);
        validation.extend_from_slice(&members[n_test..n_test + n_val]);
        train.extend_from_slice(&members[n_test + n_val..]);
    }
    for part in [&mut train, &mut test, &mut validation] {
        part.sort_unstable();
    }
    Ok(Split {
        train: dataset.subset(&train),
        test: dataset.subset(&test),
        validation: dataset.subset(&validation),
    })
}
