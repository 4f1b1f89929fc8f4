//! Ground metrics between points.
//!
//! The learnable metric is a low-rank Mahalanobis distance
//! `d(x, y) = ||W (x - y)||` with `W` of shape `k x D`, which keeps the implied
//! matrix `M = W^T W` positive semi-definite by construction. Fixed baselines
//! (Euclidean, Manhattan, cosine) share the same [`GroundMetric`] interface.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Learnable `k x D` projection defining `d(x, y) = ||W x - W y||`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankMahalanobis {
    w: Array2<f64>,
}

impl LowRankMahalanobis {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!("projection must be non-empty, got {:?}", w.dim())));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metric parameters"));
        }
        Ok(Self { w })
    }

    /// First `rank` rows of the `dimension x dimension` identity.
    pub fn identity_truncated(rank: usize, dimension: usize) -> Self {
        let mut w = Array2::zeros((rank, dimension));
        for r in 0..rank.min(dimension) {
            w[[r, r]] = 1.0;
        }
        Self { w }
    }

    pub fn zeros(rank: usize, dimension: usize) -> Self {
        Self { w: Array2::zeros((rank, dimension)) }
    }

    /// Entries drawn i.i.d. from `N(0, 1/D)`.
    pub fn random_gaussian<R: Rng + ?Sized>(rank: usize, dimension: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0 / (dimension as f64).sqrt()).expect("positive scale");
        Self { w: Array2::from_shape_simple_fn((rank, dimension), || normal.sample(rng)) }
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.w
    }

    pub fn rank(&self) -> usize {
        self.w.nrows()
    }

    pub fn dimension(&self) -> usize {
        self.w.ncols()
    }

    /// Maps every row of `points` (`n x D`) into the `k`-dimensional
    /// subspace, returning `n x k`.
    pub fn project(&self, points: ArrayView2<'_, f64>) -> Array2<f64> {
        points.dot(&self.w.t())
    }

    pub fn distance(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
        mahalanobis_distance(self, x, y)
    }

    /// Writes `W` as CSV: a header of feature names then one row per
    /// subspace axis.
    pub fn write_csv<W: Write>(&self, writer: W, feature_names: Option<&[String]>) -> Result<()> {
        let names = feature_names_or_default(feature_names, self.dimension())?;
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(&names)?;
        for row in self.w.rows() {
            csv.write_record(row.iter().map(|v| v.to_string()))?;
        }
        csv.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
        Ok(())
    }

    /// Reads parameters written by [`Self::write_csv`], returning them with
    /// the header's feature names.
    pub fn read_csv<R: Read>(reader: R) -> Result<(Self, Vec<String>)> {
        let mut csv = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let names: Vec<String> = csv.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let dim = names.len();
        let mut values = Vec::new();
        let mut rows = 0;
        for record in csv.records() {
            let record = record?;
            let line = record.position().map_or(0, csv::Position::line);
            if record.len() != dim {
                return Err(Error::Parse { line, message: format!("expected {dim} columns, found {}", record.len()) });
            }
            for field in record.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse { line, message: format!("non-numeric value {field:?}") })?;
                values.push(v);
            }
            rows += 1;
        }
        if rows == 0 || dim == 0 {
            return Err(Error::Parse { line: 1, message: "parameter file has no rows".into() });
        }
        let w = Array2::from_shape_vec((rows, dim), values).expect("row lengths checked");
        Ok((Self::new(w)?, names))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::read_csv(file)
    }
}

/// Full `D x D` Mahalanobis matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MahalanobisMatrix {
    m: Array2<f64>,
}

impl MahalanobisMatrix {
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.m.view()
    }

    pub fn diagonal(&self) -> Array1<f64> {
        self.m.diag().to_owned()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.m.nrows();
        (0..n).all(|i| (0..i).all(|j| (self.m[[i, j]] - self.m[[j, i]]).abs() <= tol))
    }

    /// True when every eigenvalue is at least `-tol`, tested by a Cholesky
    /// factorization of `M + tol * I`.
    pub fn is_psd(&self, tol: f64) -> bool {
        let n = self.m.nrows();
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.m[[i, j]];
                if i == j {
                    sum += tol;
                }
                for k in 0..j {
                    sum -= l[[i, k]] * l[[j, k]];
                }
                if i == j {
                    if sum <= 0.0 {
                        return false;
                    }
                    l[[i, i]] = sum.sqrt();
                } else {
                    l[[i, j]] = sum / l[[j, j]];
                }
            }
        }
        true
    }

    pub fn write_csv<W: Write>(&self, writer: W, feature_names: Option<&[String]>) -> Result<()> {
        let names = feature_names_or_default(feature_names, self.m.nrows())?;
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["feature".to_string()];
        header.extend(names.iter().cloned());
        csv.write_record(&header)?;
        for (name, row) in names.iter().zip(self.m.rows()) {
            let mut record = vec![name.clone()];
            record.extend(row.iter().map(|v| v.to_string()));
            csv.write_record(&record)?;
        }
        csv.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
        Ok(())
    }
}

/// Ground metric used to build transport costs.
#[derive(Clone, Debug, PartialEq)]
pub enum GroundMetric {
    Euclidean,
    Manhattan,
    /// `1 - cos(x, y)`; undefined for zero vectors.
    Cosine,
    LowRankMahalanobis(LowRankMahalanobis),
}

impl GroundMetric {
    pub fn distance(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
        match self {
            Self::LowRankMahalanobis(params) => mahalanobis_distance(params, x, y),
            other => baseline_distance(other, x, y),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Euclidean => "euclidean",
            Self::Manhattan => "manhattan",
            Self::Cosine => "cosine",
            Self::LowRankMahalanobis(_) => "low_rank_mahalanobis",
        }
    }

    /// Pairwise distances between the rows of `xs` (`n x D`) and `ys`
    /// (`m x D`).
    pub fn pairwise(&self, xs: ArrayView2<'_, f64>, ys: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if xs.ncols() != ys.ncols() {
            return Err(Error::DimensionMismatch { expected: xs.ncols(), actual: ys.ncols() });
        }
        match self {
            Self::LowRankMahalanobis(params) => {
                check_dim(params.dimension(), xs.ncols())?;
                let px = params.project(xs);
                let py = params.project(ys);
                Ok(euclidean_pairwise(px.view(), py.view()))
            }
            Self::Euclidean => Ok(euclidean_pairwise(xs, ys)),
            other => {
                let mut out = Array2::zeros((xs.nrows(), ys.nrows()));
                for (a, x) in xs.rows().into_iter().enumerate() {
                    for (b, y) in ys.rows().into_iter().enumerate() {
                        out[[a, b]] = baseline_distance(other, x, y)?;
                    }
                }
                Ok(out)
            }
        }
    }
}

fn euclidean_pairwise(xs: ArrayView2<'_, f64>, ys: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((xs.nrows(), ys.nrows()));
    for (a, x) in xs.rows().into_iter().enumerate() {
        for (b, y) in ys.rows().into_iter().enumerate() {
            out[[a, b]] = x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        }
    }
    out
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// `||W x - W y||`.
pub fn mahalanobis_distance(params: &LowRankMahalanobis, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    check_dim(params.dimension(), x.len())?;
    check_dim(params.dimension(), y.len())?;
    let delta = &x - &y;
    Ok(params.w.dot(&delta).iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Gradient of `||W (x - y)||` with respect to `W`: the `k x D` matrix
/// `(W delta) delta^T / ||W delta||`.
///
/// Fails with [`Error::NondifferentiablePoint`] when the distance is zero.
pub fn mahalanobis_gradient(
    params: &LowRankMahalanobis,
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<Array2<f64>> {
    check_dim(params.dimension(), x.len())?;
    check_dim(params.dimension(), y.len())?;
    let delta = &x - &y;
    let projected = params.w.dot(&delta);
    let norm = projected.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::NondifferentiablePoint);
    }
    let mut grad = Array2::zeros(params.w.dim());
    accumulate_outer(&mut grad, projected.view(), delta.view(), 1.0 / norm);
    Ok(grad)
}

/// `grad += scale * a b^T`.
pub(crate) fn accumulate_outer(grad: &mut Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, scale: f64) {
    for (mut row, &ar) in grad.rows_mut().into_iter().zip(a.iter()) {
        let coef = scale * ar;
        row.iter_mut().zip(b.iter()).for_each(|(g, &bv)| *g += coef * bv);
    }
}

/// Euclidean, Manhattan or cosine distance.
pub fn baseline_distance(kind: &GroundMetric, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    let pairs = x.iter().zip(y.iter());
    match kind {
        GroundMetric::Euclidean => Ok(pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()),
        GroundMetric::Manhattan => Ok(pairs.map(|(a, b)| (a - b).abs()).sum()),
        GroundMetric::Cosine => {
            let nx = x.dot(&x).sqrt();
            let ny = y.dot(&y).sqrt();
            if nx == 0.0 || ny == 0.0 {
                return Err(Error::ZeroVector);
            }
            let cos = (x.dot(&y) / (nx * ny)).clamp(-1.0, 1.0);
            Ok((1.0 - cos).max(0.0))
        }
        GroundMetric::LowRankMahalanobis(params) => mahalanobis_distance(params, x, y),
    }
}

/// `M = W^T W`.
pub fn reconstruct_mahalanobis(params: &LowRankMahalanobis) -> MahalanobisMatrix {
    let mut m = params.w.t().dot(&params.w);
    // Exact symmetry regardless of summation order.
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
    MahalanobisMatrix { m }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImportance {
    pub index: usize,
    pub feature: String,
    pub importance: f64,
}

/// Diagonal of `W^T W`, sorted descending (ties by feature index).
pub fn feature_importance(params: &LowRankMahalanobis, feature_names: Option<&[String]>) -> Result<Vec<FeatureImportance>> {
    let names = feature_names_or_default(feature_names, params.dimension())?;
    let diag = params.w.map(|v| v * v).sum_axis(Axis(0));
    let mut ranked: Vec<FeatureImportance> = names
        .into_iter()
        .zip(diag.iter())
        .enumerate()
        .map(|(index, (feature, &importance))| FeatureImportance { index, feature, importance })
        .collect();
    ranked.sort_by(|a, b| b.importance.total_cmp(&a.importance).then(a.index.cmp(&b.index)));
    Ok(ranked)
}

pub fn write_importance_csv<W: Write>(ranked: &[FeatureImportance], writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["rank", "feature", "importance"])?;
    for (rank, item) in ranked.iter().enumerate() {
        csv.write_record([(rank + 1).to_string(), item.feature.clone(), item.importance.to_string()])?;
    }
    csv.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}

fn feature_names_or_default(names: Option<&[String]>, dim: usize) -> Result<Vec<String>> {
    match names {
        Some(names) => {
            check_dim(dim, names.len())?;
            Ok(names.to_vec())
        }
        None => Ok((0..dim).map(|f| format!("f{f}")).collect()),
    }
}

/// Convex combination of square distance matrices over the same items.
pub fn blend_distance_matrices(matrices: &[ArrayView2<'_, f64>], weights: &[f64]) -> Result<Array2<f64>> {
    if matrices.is_empty() {
        return Err(Error::ShapeMismatch("no matrices to blend".into()));
    }
    if matrices.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!("{} matrices but {} weights", matrices.len(), weights.len())));
    }
    if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
        return Err(Error::InvalidConfig("blend weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("blend weights sum to {total}, not 1")));
    }
    let shape = matrices[0].dim();
    if shape.0 != shape.1 {
        return Err(Error::ShapeMismatch(format!("distance matrix must be square, got {shape:?}")));
    }
    let mut out = Array2::zeros(shape);
    for (m, &w) in matrices.iter().zip(weights) {
        if m.dim() != shape {
            return Err(Error::ShapeMismatch(format!("expected {shape:?}, got {:?}", m.dim())));
        }
        if w != 0.0 {
            out.scaled_add(w, m);
        }
    }
    // Keep exact zeros on the diagonal and exact symmetry.
    let n = shape.0;
    for i in 0..n {
        out[[i, i]] = 0.0;
        for j in 0..i {
            let avg = 0.5 * (out[[i, j]] + out[[j, i]]);
            out[[i, j]] = avg;
            out[[j, i]] = avg;
        }
    }
    Ok(out)
}

/// Averages the reconstructed matrices of several metrics.
pub fn blend_mahalanobis(params: &[&LowRankMahalanobis], weights: &[f64]) -> Result<MahalanobisMatrix> {
    let mats: Vec<MahalanobisMatrix> = params.iter().map(|p| reconstruct_mahalanobis(p)).collect();
    let views: Vec<ArrayView2<'_, f64>> = mats.iter().map(MahalanobisMatrix::matrix).collect();
    if let Some(first) = views.first() {
        if views.iter().any(|v| v.dim() != first.dim()) {
            return Err(Error::ShapeMismatch("metrics have different dimensions".into()));
        }
    }
    let mut blended = blend_distance_matrices(&views, weights)?;
    // Diagonal of M is not a distance; restore it.
    for i in 0..blended.nrows() {
        blended[[i, i]] = views.iter().zip(weights).map(|(v, w)| w * v[[i, i]]).sum();
    }
    Ok(MahalanobisMatrix { m: blended })
}
