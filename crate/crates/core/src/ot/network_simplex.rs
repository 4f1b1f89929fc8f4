//! Primal network simplex for the transportation problem.
//!
//! Sources `0..n` ship `a[i]`, sinks `n..n+m` receive `b[j]` over the complete
//! bipartite graph with uncapacitated arcs. An artificial root joins every
//! node so the initial basis is trivially feasible: supply nodes drain into
//! the root at zero cost and the root feeds demand nodes at a prohibitive
//! cost. The tree is kept strongly feasible (Cunningham's leaving-arc rule),
//! which rules out cycling on the highly degenerate bases produced by uniform
//! marginals. Entering arcs are chosen by block search over reduced costs.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Raw solver output: flows on the `n x m` real arcs (row-major) and node
/// potentials for the dual certificate.
#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub flow: Vec<f64>,
    /// Dual variables `f` (sources) and `g` (sinks) with `f_i + g_j <= c_ij`.
    pub source_potentials: Vec<f64>,
    pub sink_potentials: Vec<f64>,
}

struct Tree {
    parent: Vec<usize>,
    /// Arc joining a node to its parent.
    pred: Vec<usize>,
    /// Whether `pred` points from the node to its parent.
    up: Vec<bool>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    pi: Vec<f64>,
}

struct Network<'a> {
    costs: ArrayView2<'a, f64>,
    n: usize,
    m: usize,
    root: usize,
    art_cost: f64,
    flow: Vec<f64>,
}

impl Network<'_> {
    fn real_arcs(&self) -> usize {
        self.n * self.m
    }

    /// Endpoints of arc `e`; artificial arcs are indexed after the real ones,
    /// one per non-root node.
    fn endpoints(&self, e: usize, tree_up_for_artificial: impl Fn(usize) -> bool) -> (usize, usize) {
        let real = self.real_arcs();
        if e < real {
            (e / self.m, self.n + e % self.m)
        } else {
            let v = e - real;
            if tree_up_for_artificial(v) {
                (v, self.root)
            } else {
                (self.root, v)
            }
        }
    }

    fn cost(&self, e: usize, art_up: bool) -> f64 {
        if e < self.real_arcs() {
            self.costs[[e / self.m, e % self.m]]
        } else if art_up {
            0.0
        } else {
            self.art_cost
        }
    }
}

pub(crate) fn solve(costs: ArrayView2<'_, f64>, a: &[f64], b: &[f64]) -> Result<Solution> {
    let (n, m) = costs.dim();
    debug_assert_eq!(n, a.len());
    debug_assert_eq!(m, b.len());
    let nodes = n + m;
    let root = nodes;
    let real = n * m;

    let max_cost = costs.iter().fold(0.0_f64, |acc, c| acc.max(c.abs()));
    let art_cost = (max_cost + 1.0) * (nodes as f64 + 1.0);
    let eps = 1e-12 * (max_cost + 1.0);

    let mut net = Network { costs, n, m, root, art_cost, flow: vec![0.0; real + nodes] };

    // Artificial arc orientation is fixed at construction: supply nodes point
    // up to the root, demand nodes hang below it.
    let mut art_up = vec![false; nodes];
    let mut tree = Tree {
        parent: vec![root; nodes + 1],
        pred: vec![usize::MAX; nodes + 1],
        up: vec![false; nodes + 1],
        depth: vec![1; nodes + 1],
        children: vec![Vec::new(); nodes + 1],
        pi: vec![0.0; nodes + 1],
    };
    tree.depth[root] = 0;
    tree.parent[root] = usize::MAX;
    for v in 0..nodes {
        let supply = if v < n { a[v] } else { -b[v - n] };
        let e = real + v;
        art_up[v] = supply >= 0.0;
        tree.pred[v] = e;
        tree.up[v] = art_up[v];
        net.flow[e] = supply.abs();
        tree.pi[v] = if art_up[v] { 0.0 } else { art_cost };
        tree.children[root].push(v);
    }

    let block = ((real as f64).sqrt().ceil() as usize).max(10).min(real.max(1));
    let max_pivots = 50 * real + 10_000;
    let mut next_arc = 0;
    let mut pivots = 0;

    while let Some(entering) = find_entering(&net, &tree, block, &mut next_arc, eps) {
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Solver(format!("no convergence after {max_pivots} pivots")));
        }
        pivot(&mut net, &mut tree, &art_up, entering)?;
    }

    let flow: Vec<f64> = net.flow[..real].iter().map(|&f| f.max(0.0)).collect();
    let source_potentials = (0..n).map(|i| -tree.pi[i]).collect();
    let sink_potentials = (0..m).map(|j| tree.pi[n + j]).collect();
    Ok(Solution { flow, source_potentials, sink_potentials })
}

fn reduced_cost(net: &Network<'_>, tree: &Tree, e: usize) -> f64 {
    let i = e / net.m;
    let j = net.n + e % net.m;
    net.costs[[i, e % net.m]] + tree.pi[i] - tree.pi[j]
}

/// Block search: scan real arcs cyclically in blocks, returning the most
/// negative reduced cost of the first block that contains one.
fn find_entering(net: &Network<'_>, tree: &Tree, block: usize, next_arc: &mut usize, eps: f64) -> Option<usize> {
    let real = net.real_arcs();
    if real == 0 {
        return None;
    }
    let mut best = None;
    let mut best_rc = -eps;
    let mut scanned_in_block = 0;
    for step in 0..real {
        let e = (*next_arc + step) % real;
        let rc = reduced_cost(net, tree, e);
        if rc < best_rc {
            best_rc = rc;
            best = Some(e);
        }
        scanned_in_block += 1;
        if scanned_in_block == block {
            if best.is_some() {
                *next_arc = (e + 1) % real;
                return best;
            }
            scanned_in_block = 0;
        }
    }
    if let Some(e) = best {
        *next_arc = (e + 1) % real;
    }
    best
}

fn pivot(net: &mut Network<'_>, tree: &mut Tree, art_up: &[bool], entering: usize) -> Result<()> {
    let (first, second) = net.endpoints(entering, |v| art_up[v]);

    let mut u = first;
    let mut v = second;
    while u != v {
        if tree.depth[u] > tree.depth[v] {
            u = tree.parent[u];
        } else if tree.depth[v] > tree.depth[u] {
            v = tree.parent[v];
        } else {
            u = tree.parent[u];
            v = tree.parent[v];
        }
    }
    let join = u;

    // Flow runs first -> second on the entering arc, up from `second` to the
    // join and down from the join to `first`. The leaving arc is the last
    // blocking arc met when walking the cycle from the join in that
    // direction, which keeps the tree strongly feasible.
    let mut delta = f64::INFINITY;
    let mut leaving_node = usize::MAX;
    let mut on_first_side = false;
    let mut node = first;
    while node != join {
        if tree.up[node] {
            let d = net.flow[tree.pred[node]];
            if d < delta {
                delta = d;
                leaving_node = node;
                on_first_side = true;
            }
        }
        node = tree.parent[node];
    }
    node = second;
    while node != join {
        if !tree.up[node] {
            let d = net.flow[tree.pred[node]];
            if d <= delta {
                delta = d;
                leaving_node = node;
                on_first_side = false;
            }
        }
        node = tree.parent[node];
    }
    if !delta.is_finite() {
        return Err(Error::Solver("unbounded transport problem".into()));
    }

    if delta > 0.0 {
        net.flow[entering] += delta;
        let mut node = first;
        while node != join {
            let e = tree.pred[node];
            net.flow[e] += if tree.up[node] { -delta } else { delta };
            node = tree.parent[node];
        }
        node = second;
        while node != join {
            let e = tree.pred[node];
            net.flow[e] += if tree.up[node] { delta } else { -delta };
            node = tree.parent[node];
        }
    }
    // Exact zero on the leaving arc.
    net.flow[tree.pred[leaving_node]] = 0.0;

    // Re-hang the detached subtree below the other endpoint of the entering
    // arc, reversing parent links along the path to the leaving node.
    let (hang, anchor) = if on_first_side { (first, second) } else { (second, first) };
    let mut current = hang;
    let mut new_parent = anchor;
    let mut new_pred = entering;
    let mut new_up = on_first_side; // entering arc points first -> second
    loop {
        let old_parent = tree.parent[current];
        let old_pred = tree.pred[current];
        let old_up = tree.up[current];
        remove_child(&mut tree.children[old_parent], current);
        tree.children[new_parent].push(current);
        tree.parent[current] = new_parent;
        tree.pred[current] = new_pred;
        tree.up[current] = new_up;
        if current == leaving_node {
            break;
        }
        new_parent = current;
        new_pred = old_pred;
        new_up = !old_up;
        current = old_parent;
    }

    // Refresh depth and potentials over the moved subtree.
    let mut stack = vec![hang];
    while let Some(node) = stack.pop() {
        let parent = tree.parent[node];
        let e = tree.pred[node];
        let art = e >= net.real_arcs() && art_up[e - net.real_arcs()];
        let c = net.cost(e, art);
        tree.depth[node] = tree.depth[parent] + 1;
        tree.pi[node] = if tree.up[node] { tree.pi[parent] - c } else { tree.pi[parent] + c };
        stack.extend_from_slice(&tree.children[node]);
    }
    Ok(())
}

fn remove_child(children: &mut Vec<usize>, child: usize) {
    if let Some(pos) = children.iter().position(|&c| c == child) {
        children.swap_remove(pos);
    }
}
