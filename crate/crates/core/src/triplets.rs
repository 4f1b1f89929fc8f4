//! Training constraints `(i, j, k)`: `i` and `j` share a class, `k` does not.
//!
//! For every anchor `j` up to `t` same-class neighbors and up to `t`
//! neighbors from each other class are selected, and their Cartesian product
//! forms the anchor's triplets, so the set grows as `n * t^2 * (C - 1)`.

use std::io::Write;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::metric::GroundMetric;
use crate::ot;
use crate::rng::{self, streams};

/// Indices into a dataset: `i` and `j` share a class, `k` belongs to another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

/// How neighbors of an anchor are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NeighborSource {
    /// Nearest under the Wasserstein distance with Euclidean ground metric,
    /// computed once up front.
    #[default]
    WassersteinEuclidean,
    /// Uniform sample without replacement.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub t: usize,
    /// Fingerprint of the ids and labels of the dataset the indices refer to.
    pub dataset_fingerprint: u64,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Writes `i,j,k` as distribution ids.
    pub fn write_csv<W: Write>(&self, dataset: &LabeledDataset, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["i", "j", "k"])?;
        for t in &self.triplets {
            csv.write_record([dataset.get(t.i).id(), dataset.get(t.j).id(), dataset.get(t.k).id()])?;
        }
        csv.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
        Ok(())
    }
}

pub fn dataset_fingerprint(dataset: &LabeledDataset) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    for d in dataset.distributions() {
        for byte in d.id().bytes().chain([0]).chain(d.label().bytes()).chain([0]) {
            hash = (hash ^ u64::from(byte)).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

/// Builds the triplet set for `dataset` with neighbor budget `t`.
pub fn build_triplets(dataset: &LabeledDataset, t: usize, source: NeighborSource, seed: u64) -> Result<TripletSet> {
    match source {
        NeighborSource::WassersteinEuclidean => {
            check_preconditions(dataset, t)?;
            let distances = ot::pairwise_wasserstein_matrix(dataset, &GroundMetric::Euclidean)?;
            build_triplets_from_distances(dataset, t, distances.view())
        }
        NeighborSource::Random => {
            check_preconditions(dataset, t)?;
            let mut rng = rng::stream(seed, streams::TRIPLETS);
            build(dataset, t, |_anchor, candidates| {
                candidates.shuffle(&mut rng);
            })
        }
    }
}

/// Builds triplets choosing neighbors by a precomputed distance matrix
/// (ties broken by index).
pub fn build_triplets_from_distances(dataset: &LabeledDataset, t: usize, distances: ArrayView2<'_, f64>) -> Result<TripletSet> {
    check_preconditions(dataset, t)?;
    if distances.dim() != (dataset.len(), dataset.len()) {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix is {:?} for {} distributions",
            distances.dim(),
            dataset.len()
        )));
    }
    build(dataset, t, |anchor, candidates| {
        candidates.sort_by(|&a, &b| distances[[anchor, a]].total_cmp(&distances[[anchor, b]]).then(a.cmp(&b)));
    })
}

fn check_preconditions(dataset: &LabeledDataset, t: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidConfig("neighbor budget t must be at least 1".into()));
    }
    let classes = dataset.class_indices();
    for (c, label) in dataset.classes().iter().enumerate() {
        let count = classes.iter().filter(|&&x| x == c).count();
        if count == 1 {
            return Err(Error::InvalidDataset(format!(
                "class {label:?} has a single distribution, so its anchor has no same-class neighbor"
            )));
        }
    }
    Ok(())
}

/// Shared construction: `order` arranges candidate lists so that the first
/// `t` entries are the chosen neighbors.
fn build(dataset: &LabeledDataset, t: usize, mut order: impl FnMut(usize, &mut Vec<usize>)) -> Result<TripletSet> {
    let classes = dataset.class_indices();
    let class_count = dataset.classes().len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (idx, &c) in classes.iter().enumerate() {
        members[c].push(idx);
    }

    let mut triplets = Vec::new();
    for (j, &own) in classes.iter().enumerate() {
        let mut same: Vec<usize> = members[own].iter().copied().filter(|&i| i != j).collect();
        order(j, &mut same);
        same.truncate(t);

        let mut others = Vec::new();
        for (c, group) in members.iter().enumerate() {
            if c == own {
                continue;
            }
            let mut candidates = group.clone();
            order(j, &mut candidates);
            candidates.truncate(t);
            others.extend(candidates);
        }

        for &i in &same {
            for &k in &others {
                triplets.push(Triplet { i, j, k });
            }
        }
    }
    Ok(TripletSet { triplets, t, dataset_fingerprint: dataset_fingerprint(dataset) })
}

/// The full label-consistent set: every `(i, j, k)` with `c_i = c_j != c_k`
/// and `i != j`.
pub fn all_triplets(dataset: &LabeledDataset) -> Vec<Triplet> {
    let classes = dataset.class_indices();
    let n = dataset.len();
    let mut out = Vec::new();
    for j in 0..n {
        for i in (0..n).filter(|&i| i != j && classes[i] == classes[j]) {
            for k in (0..n).filter(|&k| classes[k] != classes[j]) {
                out.push(Triplet { i, j, k });
            }
        }
    }
    out
}

/// Checks that every triplet is label-consistent and in range.
pub fn validate_triplets(dataset: &LabeledDataset, triplets: &[Triplet]) -> Result<()> {
    let classes = dataset.class_indices();
    let n = dataset.len();
    for t in triplets {
        if t.i >= n || t.j >= n || t.k >= n {
            return Err(Error::InvalidConfig(format!("triplet {t:?} is out of range for {n} distributions")));
        }
        if t.i == t.j || classes[t.i] != classes[t.j] || classes[t.j] == classes[t.k] {
            return Err(Error::InvalidConfig(format!("triplet {t:?} is not label-consistent")));
        }
    }
    Ok(())
}
