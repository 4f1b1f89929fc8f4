//! Exact optimal transport between empirical distributions.
//!
//! [`emd`] solves the transportation linear program exactly with a network
//! simplex and checks every plan it returns: marginals, cost consistency and
//! the dual certificate. [`wasserstein_gradient`] differentiates the optimal
//! value with respect to a low-rank Mahalanobis ground metric by holding the
//! optimal coupling fixed.

mod network_simplex;

use ndarray::{Array2, ArrayView1, ArrayView2};

use rayon::prelude::*;

use crate::dataset::{EmpiricalDistribution, LabeledDataset};
use crate::error::{Error, Result};
use crate::metric::{accumulate_outer, GroundMetric, LowRankMahalanobis};

/// Largest accepted `n * m`.
pub const MAX_PROBLEM_ENTRIES: usize = 100_000_000;
/// Tolerance on marginal sums of the returned plan.
pub const MARGINAL_TOLERANCE: f64 = 1e-8;
/// Relative tolerance of the dual optimality certificate.
pub const OPTIMALITY_TOLERANCE: f64 = 1e-7;
const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Nonnegative ground costs between the points of two distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    costs: Array2<f64>,
}

impl CostMatrix {
    pub fn new(costs: Array2<f64>) -> Result<Self> {
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        if costs.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidConfig("cost matrix has negative entries".into()));
        }
        Ok(Self { costs })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.costs.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.costs.dim()
    }

    /// Multiplies every cost by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.costs * factor)
    }
}

/// An optimal coupling and its cost.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub coupling: Array2<f64>,
    pub total_cost: f64,
}

impl TransportPlan {
    /// Checks nonnegativity, marginals and `total_cost = <coupling, costs>`.
    pub fn check_feasible(&self, costs: ArrayView2<'_, f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<()> {
        if self.coupling.dim() != costs.dim() {
            return Err(Error::Solver("plan shape differs from cost matrix".into()));
        }
        if self.coupling.iter().any(|&p| p.is_nan() || p < 0.0) {
            return Err(Error::Solver("negative or non-finite plan entry".into()));
        }
        for (i, row) in self.coupling.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if (s - a[i]).abs() > MARGINAL_TOLERANCE {
                return Err(Error::Solver(format!("row {i} sums to {s}, expected {}", a[i])));
            }
        }
        for (j, col) in self.coupling.columns().into_iter().enumerate() {
            let s: f64 = col.sum();
            if (s - b[j]).abs() > MARGINAL_TOLERANCE {
                return Err(Error::Solver(format!("column {j} sums to {s}, expected {}", b[j])));
            }
        }
        let cost: f64 = self.coupling.iter().zip(costs.iter()).map(|(p, c)| p * c).sum();
        if (cost - self.total_cost).abs() > MARGINAL_TOLERANCE * (1.0 + cost.abs()) {
            return Err(Error::Solver(format!("total cost {} disagrees with plan cost {cost}", self.total_cost)));
        }
        Ok(())
    }

    /// Iterates `(row, col, mass)` over entries with positive mass.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.coupling.indexed_iter().filter(|(_, &p)| p > 0.0).map(|((a, b), &p)| (a, b, p))
    }
}

/// `costs[a][b] = d(X_a, Y_b)`.
pub fn cost_matrix(metric: &GroundMetric, x: &EmpiricalDistribution, y: &EmpiricalDistribution) -> Result<CostMatrix> {
    check_size(x.len(), y.len())?;
    CostMatrix::new(metric.pairwise(x.points(), y.points())?)
}

fn check_size(rows: usize, cols: usize) -> Result<()> {
    match rows.checked_mul(cols) {
        Some(n) if n <= MAX_PROBLEM_ENTRIES => Ok(()),
        _ => Err(Error::ProblemTooLarge { rows, cols, limit: MAX_PROBLEM_ENTRIES }),
    }
}

fn check_marginal(w: ArrayView1<'_, f64>, name: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidMarginals(format!("{name} is empty")));
    }
    if w.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(Error::InvalidMarginals(format!("{name} has a negative or non-finite entry")));
    }
    let total = w.sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::InvalidMarginals(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// Exact earth mover's distance between marginals `a` and `b` under `costs`.
pub fn emd(costs: &CostMatrix, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<TransportPlan> {
    emd_view(costs.view(), a, b)
}

fn emd_view(costs: ArrayView2<'_, f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<TransportPlan> {
    let (n, m) = costs.dim();
    check_size(n, m)?;
    if a.len() != n || b.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "cost matrix is {n}x{m} but marginals have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_marginal(a, "source marginal")?;
    check_marginal(b, "target marginal")?;
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }

    let a_vec = a.to_vec();
    let b_vec = b.to_vec();
    let solution = network_simplex::solve(costs, &a_vec, &b_vec)?;
    let coupling = Array2::from_shape_vec((n, m), solution.flow).expect("flow has n*m entries");
    let total_cost = coupling.iter().zip(costs.iter()).map(|(p, c)| p * c).sum();
    let plan = TransportPlan { coupling, total_cost };
    plan.check_feasible(costs, a, b)?;
    check_certificate(costs, a, b, &plan, &solution.source_potentials, &solution.sink_potentials)?;
    Ok(plan)
}

/// Dual feasibility `f_i + g_j <= c_ij` and a vanishing duality gap.
fn check_certificate(
    costs: ArrayView2<'_, f64>,
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    plan: &TransportPlan,
    f: &[f64],
    g: &[f64],
) -> Result<()> {
    let scale = 1.0 + costs.iter().fold(0.0_f64, |acc, c| acc.max(c.abs()));
    for ((i, j), &c) in costs.indexed_iter() {
        if c - f[i] - g[j] < -OPTIMALITY_TOLERANCE * scale {
            return Err(Error::Solver(format!("dual infeasible at ({i}, {j})")));
        }
    }
    let dual: f64 = a.iter().zip(f).map(|(w, p)| w * p).sum::<f64>() + b.iter().zip(g).map(|(w, p)| w * p).sum::<f64>();
    if (dual - plan.total_cost).abs() > OPTIMALITY_TOLERANCE * scale {
        return Err(Error::Solver(format!("duality gap: primal {} dual {dual}", plan.total_cost)));
    }
    Ok(())
}

/// Wasserstein distance under `metric` and the plan achieving it.
pub fn wasserstein(
    metric: &GroundMetric,
    x: &EmpiricalDistribution,
    y: &EmpiricalDistribution,
) -> Result<(f64, TransportPlan)> {
    let costs = cost_matrix(metric, x, y)?;
    let plan = emd(&costs, x.weights(), y.weights())?;
    Ok((plan.total_cost, plan))
}

/// Symmetric matrix of Wasserstein distances between all distributions,
/// solving one problem per unordered pair.
pub fn pairwise_wasserstein_matrix(dataset: &LabeledDataset, metric: &GroundMetric) -> Result<Array2<f64>> {
    let n = dataset.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| wasserstein(metric, dataset.get(i), dataset.get(j)).map(|(v, _)| v))
        .collect::<Result<Vec<f64>>>()?;
    let mut out = Array2::zeros((n, n));
    for (&(i, j), v) in pairs.iter().zip(values) {
        out[[i, j]] = v;
        out[[j, i]] = v;
    }
    Ok(out)
}

/// Wasserstein distances from every distribution of `rows` to every
/// distribution of `cols`.
pub fn cross_wasserstein_matrix(rows: &LabeledDataset, cols: &LabeledDataset, metric: &GroundMetric) -> Result<Array2<f64>> {
    let (n, m) = (rows.len(), cols.len());
    let values = (0..n * m)
        .into_par_iter()
        .map(|idx| wasserstein(metric, rows.get(idx / m), cols.get(idx % m)).map(|(v, _)| v))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Array2::from_shape_vec((n, m), values).expect("n*m values"))
}

/// Wasserstein distance under the low-rank Mahalanobis metric and its
/// gradient with respect to the projection, obtained by differentiating the
/// ground costs under the fixed optimal plan. Pairs at zero distance are
/// skipped.
pub fn wasserstein_gradient(
    params: &LowRankMahalanobis,
    x: &EmpiricalDistribution,
    y: &EmpiricalDistribution,
) -> Result<(f64, Array2<f64>)> {
    if params.dimension() != x.dimension() || params.dimension() != y.dimension() {
        return Err(Error::DimensionMismatch {
            expected: params.dimension(),
            actual: if params.dimension() != x.dimension() { x.dimension() } else { y.dimension() },
        });
    }
    let px = params.project(x.points());
    let py = params.project(y.points());
    let (value, grad) = projected_wasserstein_gradient(
        &ProjectedDistribution { raw: x, projected: px.view() },
        &ProjectedDistribution { raw: y, projected: py.view() },
    )?;
    Ok((value, grad))
}

/// A distribution together with its points mapped through the current
/// projection. Lets callers project each distribution once per parameter
/// update instead of once per pair.
pub(crate) struct ProjectedDistribution<'a> {
    pub raw: &'a EmpiricalDistribution,
    pub projected: ArrayView2<'a, f64>,
}

pub(crate) fn projected_costs(x: &ProjectedDistribution<'_>, y: &ProjectedDistribution<'_>) -> Result<Array2<f64>> {
    check_size(x.raw.len(), y.raw.len())?;
    GroundMetric::Euclidean.pairwise(x.projected, y.projected)
}

pub(crate) fn projected_wasserstein(x: &ProjectedDistribution<'_>, y: &ProjectedDistribution<'_>) -> Result<f64> {
    let costs = projected_costs(x, y)?;
    Ok(emd_view(costs.view(), x.raw.weights(), y.raw.weights())?.total_cost)
}

pub(crate) fn projected_wasserstein_gradient(
    x: &ProjectedDistribution<'_>,
    y: &ProjectedDistribution<'_>,
) -> Result<(f64, Array2<f64>)> {
    let costs = projected_costs(x, y)?;
    let plan = emd_view(costs.view(), x.raw.weights(), y.raw.weights())?;
    let k = x.projected.ncols();
    let dim = x.raw.dimension();
    let mut grad = Array2::zeros((k, dim));
    for (a, b, mass) in plan.support() {
        let dist = costs[[a, b]];
        if dist == 0.0 {
            continue;
        }
        let z = &x.projected.row(a) - &y.projected.row(b);
        let delta = &x.raw.point(a) - &y.raw.point(b);
        accumulate_outer(&mut grad, z.view(), delta.view(), mass / dist);
    }
    Ok((plan.total_cost, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> Array1<f64> {
        Array1::from_elem(n, 1.0 / n as f64)
    }

    fn dist(id: &str, points: Array2<f64>) -> EmpiricalDistribution {
        EmpiricalDistribution::new(id, "c", points).unwrap()
    }

    /// Exhaustive minimum over permutations for uniform square problems.
    fn permutation_oracle(costs: &Array2<f64>) -> f64 {
        fn rec(costs: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = costs.nrows();
            if row == n {
                *best = best.min(acc);
                return;
            }
            for col in 0..n {
                if !used[col] {
                    used[col] = true;
                    rec(costs, row + 1, used, acc + costs[[row, col]], best);
                    used[col] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(costs, 0, &mut vec![false; costs.ncols()], 0.0, &mut best);
        best / costs.nrows() as f64
    }

    #[test]
    fn perfect_matching_two_by_two() {
        let costs = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let plan = emd(&costs, uniform(2).view(), uniform(2).view()).unwrap();
        assert_eq!(plan.total_cost, 0.0);
        assert_abs_diff_eq!(plan.coupling, array![[0.5, 0.0], [0.0, 0.5]], epsilon = 1e-15);
    }

    #[test]
    fn identical_distributions_cost_zero() {
        let pts = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        let x = dist("x", pts.clone());
        for metric in [GroundMetric::Euclidean, GroundMetric::Manhattan] {
            let (value, _) = wasserstein(&metric, &x, &x).unwrap();
            assert_eq!(value, 0.0);
        }
    }

    #[test]
    fn cost_matrix_examples() {
        let x = dist("x", array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]);
        let c = cost_matrix(&GroundMetric::Euclidean, &x, &x).unwrap();
        assert!((0..3).all(|i| c.view()[[i, i]] == 0.0));
        let p = dist("p", array![[0.0, 0.0]]);
        let q = dist("q", array![[3.0, 4.0]]);
        assert_eq!(cost_matrix(&GroundMetric::Euclidean, &p, &q).unwrap().view(), array![[5.0]]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = dist("x", Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0)));
        let y = dist("y", Array2::from_shape_simple_fn((5, 3), || rng.random_range(-1.0..1.0)));
        let metric = GroundMetric::LowRankMahalanobis(LowRankMahalanobis::random_gaussian(2, 3, &mut rng));
        let c = cost_matrix(&metric, &x, &y).unwrap();
        for a in 0..4 {
            for b in 0..5 {
                assert_abs_diff_eq!(c.view()[[a, b]], metric.distance(x.point(a), y.point(b)).unwrap(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn single_points_give_ground_distance() {
        let p = dist("p", array![[1.0, 2.0]]);
        let q = dist("q", array![[-2.0, 6.0]]);
        let (value, plan) = wasserstein(&GroundMetric::Euclidean, &p, &q).unwrap();
        assert_eq!(value, 5.0);
        assert_eq!(plan.coupling, array![[1.0]]);
    }

    #[test]
    fn matches_permutation_oracle_on_uniform_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [3usize, 4, 6] {
            for _ in 0..20 {
                let costs = Array2::from_shape_simple_fn((n, n), || rng.random_range(0.0..10.0));
                let plan = emd(&CostMatrix::new(costs.clone()).unwrap(), uniform(n).view(), uniform(n).view()).unwrap();
                assert_abs_diff_eq!(plan.total_cost, permutation_oracle(&costs), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_marginals_and_costs() {
        let costs = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(emd(&costs, array![0.5, 0.6].view(), uniform(2).view()), Err(Error::InvalidMarginals(_))));
        assert!(matches!(emd(&costs, array![1.5, -0.5].view(), uniform(2).view()), Err(Error::InvalidMarginals(_))));
        assert!(CostMatrix::new(array![[f64::NAN]]).is_err());
        assert!(emd_view(array![[f64::INFINITY]].view(), array![1.0].view(), array![1.0].view()).is_err());
    }

    #[test]
    fn size_guard() {
        assert!(matches!(check_size(20_000, 20_000), Err(Error::ProblemTooLarge { .. })));
        assert!(check_size(10_000, 10_000).is_ok());
    }

    #[test]
    fn zero_weight_points_are_handled() {
        let costs = CostMatrix::new(array![[1.0, 2.0, 0.5], [3.0, 0.0, 4.0]]).unwrap();
        let plan = emd(&costs, array![1.0, 0.0].view(), array![0.25, 0.0, 0.75].view()).unwrap();
        assert_abs_diff_eq!(plan.total_cost, 0.25 * 1.0 + 0.75 * 0.5, epsilon = 1e-14);
    }

    #[test]
    fn larger_degenerate_problem_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = dist("x", Array2::from_shape_simple_fn((120, 2), || rng.random_range(-1.0..1.0)));
        let y = dist("y", Array2::from_shape_simple_fn((90, 2), || rng.random_range(-1.0..1.0)));
        let (value, plan) = wasserstein(&GroundMetric::Euclidean, &x, &y).unwrap();
        assert!(value > 0.0);
        assert!(plan.support().count() < 120 + 90);
    }

    #[test]
    fn gradient_of_identical_is_zero() {
        let x = dist("x", array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]);
        let params = LowRankMahalanobis::new(array![[1.0, 0.5], [-0.3, 2.0]]).unwrap();
        let (value, grad) = wasserstein_gradient(&params, &x, &x).unwrap();
        assert_eq!(value, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_of_single_pair_is_point_gradient() {
        let p = dist("p", array![[1.0, 2.0, 0.0]]);
        let q = dist("q", array![[-2.0, 6.0, 1.0]]);
        let params = LowRankMahalanobis::new(array![[1.0, 0.5, 0.0], [-0.3, 2.0, 1.0]]).unwrap();
        let (_, grad) = wasserstein_gradient(&params, &p, &q).unwrap();
        let direct = crate::metric::mahalanobis_gradient(&params, p.point(0), q.point(0)).unwrap();
        assert_abs_diff_eq!(grad, direct, epsilon = 1e-14);
    }

    fn points(n: usize, d: usize) -> impl Strategy<Value = Array2<f64>> {
        proptest::collection::vec(-3.0..3.0f64, n * d).prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    }

    proptest! {
        #[test]
        fn symmetric_and_nonnegative(x in points(4, 2), y in points(3, 2)) {
            let x = dist("x", x);
            let y = dist("y", y);
            let (xy, _) = wasserstein(&GroundMetric::Euclidean, &x, &y).unwrap();
            let (yx, _) = wasserstein(&GroundMetric::Euclidean, &y, &x).unwrap();
            prop_assert!(xy >= 0.0);
            prop_assert!((xy - yx).abs() <= 1e-9);
        }

        #[test]
        fn cost_scaling_scales_value(c in proptest::collection::vec(0.0..5.0f64, 12), factor in 0.1..10.0f64) {
            let costs = CostMatrix::new(Array2::from_shape_vec((3, 4), c).unwrap()).unwrap();
            let a = array![0.2, 0.5, 0.3];
            let b = array![0.1, 0.4, 0.25, 0.25];
            let base = emd(&costs, a.view(), b.view()).unwrap();
            let scaled_costs = costs.scaled(factor).unwrap();
            let scaled = emd(&scaled_costs, a.view(), b.view()).unwrap();
            prop_assert!((scaled.total_cost - factor * base.total_cost).abs() <= 1e-9 * (1.0 + scaled.total_cost));
            // The base plan stays optimal for the scaled problem.
            let reused: f64 = base.coupling.iter().zip(scaled_costs.view().iter()).map(|(p, c)| p * c).sum();
            prop_assert!((reused - scaled.total_cost).abs() <= 1e-9 * (1.0 + reused));
        }

        #[test]
        fn invariant_under_row_permutation(c in proptest::collection::vec(0.0..5.0f64, 12), seed in 0u64..1000) {
            let costs = Array2::from_shape_vec((4, 3), c).unwrap();
            let a = array![0.1, 0.2, 0.3, 0.4];
            let b = array![0.3, 0.3, 0.4];
            let mut perm: Vec<usize> = (0..4).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let pc = Array2::from_shape_fn((4, 3), |(i, j)| costs[[perm[i], j]]);
            let pa = Array1::from_shape_fn(4, |i| a[perm[i]]);
            let base = emd(&CostMatrix::new(costs).unwrap(), a.view(), b.view()).unwrap();
            let permuted = emd(&CostMatrix::new(pc).unwrap(), pa.view(), b.view()).unwrap();
            prop_assert!((base.total_cost - permuted.total_cost).abs() <= 1e-12);
        }

        #[test]
        fn triangle_inequality(x in points(3, 2), y in points(4, 2), z in points(5, 2)) {
            let (x, y, z) = (dist("x", x), dist("y", y), dist("z", z));
            let w = |p: &EmpiricalDistribution, q: &EmpiricalDistribution| wasserstein(&GroundMetric::Euclidean, p, q).unwrap().0;
            prop_assert!(w(&x, &z) <= w(&x, &y) + w(&y, &z) + 1e-9);
        }
    }
}
