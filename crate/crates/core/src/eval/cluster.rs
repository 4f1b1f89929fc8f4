use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterTarget {
    /// Merge until this many clusters remain.
    Count(usize),
    /// Merge while the next merge distance does not exceed the median of all
    /// pairwise distances.
    MedianThreshold,
}

/// Agglomerative clustering of a symmetric distance matrix.
///
/// At each step the closest pair of clusters merges (ties go to the pair
/// with the smallest indices). Returned labels are numbered by first
/// appearance in item order.
pub fn agglomerative_cluster(distances: ArrayView2<'_, f64>, linkage: Linkage, target: ClusterTarget) -> Result<Vec<usize>> {
    let n = distances.nrows();
    if distances.ncols() != n {
        return Err(Error::ShapeMismatch(format!("distance matrix is {:?}", distances.dim())));
    }
    if n < 2 {
        return Err(Error::InvalidConfig("clustering needs at least 2 items".into()));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("clustering distances"));
    }
    let (stop_count, threshold) = match target {
        ClusterTarget::Count(c) if c == 0 || c > n => {
            return Err(Error::InvalidConfig(format!("cannot form {c} clusters from {n} items")));
        }
        ClusterTarget::Count(c) => (c, f64::INFINITY),
        ClusterTarget::MedianThreshold => (1, median_off_diagonal(distances)),
    };

    let mut d: Array2<f64> = distances.to_owned();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut assignment: Vec<usize> = (0..n).collect();
    let mut remaining = n;

    while remaining > stop_count {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in (0..n).filter(|&a| active[a]) {
            for b in (a + 1..n).filter(|&b| active[b]) {
                if best.is_none_or(|(v, _, _)| d[[a, b]] < v) {
                    best = Some((d[[a, b]], a, b));
                }
            }
        }
        let (value, a, b) = best.expect("at least two active clusters");
        if value > threshold {
            break;
        }
        for c in (0..n).filter(|&c| active[c] && c != a && c != b) {
            let (da, db) = (d[[a, c]], d[[b, c]]);
            let merged = match linkage {
                Linkage::Single => da.min(db),
                Linkage::Complete => da.max(db),
                Linkage::Average => (size[a] as f64 * da + size[b] as f64 * db) / (size[a] + size[b]) as f64,
            };
            d[[a, c]] = merged;
            d[[c, a]] = merged;
        }
        size[a] += size[b];
        active[b] = false;
        for slot in assignment.iter_mut().filter(|s| **s == b) {
            *slot = a;
        }
        remaining -= 1;
    }
    Ok(canonical_labels(&assignment))
}

fn median_off_diagonal(d: ArrayView2<'_, f64>) -> f64 {
    let n = d.nrows();
    let mut values: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| d[[i, j]])).collect();
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Renumbers labels `0, 1, ...` in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(p) => p,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect()
}

/// Agreement between two partitions, in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusteringScores {
    pub mi: f64,
    pub ari: f64,
    pub vi: f64,
}

/// Mutual information, adjusted Rand index and variation of information
/// between `predicted` and `truth`.
pub fn clustering_metrics(predicted: &[usize], truth: &[usize]) -> Result<ClusteringScores> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted labels for {} true labels", predicted.len(), truth.len())));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidConfig("clustering metrics need at least one item".into()));
    }
    let u = canonical_labels(predicted);
    let v = canonical_labels(truth);
    let ru = u.iter().max().unwrap() + 1;
    let rv = v.iter().max().unwrap() + 1;
    let mut table = Array2::<f64>::zeros((ru, rv));
    for (&a, &b) in u.iter().zip(&v) {
        table[[a, b]] += 1.0;
    }
    let n = u.len() as f64;
    let row_sums = table.sum_axis(ndarray::Axis(1));
    let col_sums = table.sum_axis(ndarray::Axis(0));

    let entropy = |counts: &ndarray::Array1<f64>| -> f64 {
        counts.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).ln()).sum()
    };
    let mut mi = 0.0;
    for ((i, j), &c) in table.indexed_iter() {
        if c > 0.0 {
            mi += (c / n) * (c * n / (row_sums[i] * col_sums[j])).ln();
        }
    }
    let mi = mi.max(0.0);
    let vi = (entropy(&row_sums) + entropy(&col_sums) - 2.0 * mi).max(0.0);

    let pairs = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = table.iter().map(|&c| pairs(c)).sum();
    let sum_rows: f64 = row_sums.iter().map(|&c| pairs(c)).sum();
    let sum_cols: f64 = col_sums.iter().map(|&c| pairs(c)).sum();
    let expected = sum_rows * sum_cols / pairs(n).max(f64::MIN_POSITIVE);
    let max_index = 0.5 * (sum_rows + sum_cols);
    let ari = if max_index == expected { 1.0 } else { (index - expected) / (max_index - expected) };
    Ok(ClusteringScores { mi, ari, vi })
}
