use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Guard added to distances before inverting them into vote weights.
pub const WEIGHT_EPSILON: f64 = 1e-12;

/// Weighted k-nearest-neighbor vote.
///
/// `distances` has one row per query and one column per training item;
/// `train_labels` are class indices. Each of the `k` nearest items votes for
/// its label with weight `1 / (d + 1e-12)`. Ties on total weight go to the
/// label whose voters have the smaller summed distance, then to the smaller
/// label. Neighbors at equal distance are taken in column order.
pub fn knn_classify(distances: ArrayView2<'_, f64>, train_labels: &[usize], k: usize) -> Result<Vec<usize>> {
    let (queries, train) = distances.dim();
    if train == 0 {
        return Err(Error::InvalidConfig("kNN needs at least one training item".into()));
    }
    if train_labels.len() != train {
        return Err(Error::ShapeMismatch(format!("{} labels for {train} training columns", train_labels.len())));
    }
    if k == 0 || k > train {
        return Err(Error::InvalidConfig(format!("k must be in [1, {train}], got {k}")));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::NonFinite("kNN distances"));
    }
    let label_count = train_labels.iter().max().map_or(0, |m| m + 1);

    let mut out = Vec::with_capacity(queries);
    let mut order: Vec<usize> = Vec::with_capacity(train);
    for row in distances.rows() {
        order.clear();
        order.extend(0..train);
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let mut weight = vec![0.0; label_count];
        let mut total = vec![0.0; label_count];
        let mut voted = vec![false; label_count];
        for &idx in &order[..k] {
            let label = train_labels[idx];
            weight[label] += 1.0 / (row[idx] + WEIGHT_EPSILON);
            total[label] += row[idx];
            voted[label] = true;
        }
        let best = (0..label_count)
            .filter(|&l| voted[l])
            .reduce(|best, l| {
                let better = weight[l] > weight[best] || (weight[l] == weight[best] && total[l] < total[best]);
                if better {
                    l
                } else {
                    best
                }
            })
            .expect("k >= 1 voters");
        out.push(best);
    }
    Ok(out)
}

/// Fraction of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}
