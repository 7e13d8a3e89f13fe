//! One-to-one transport between equal-size uniform clouds.

use super::cloud::{dot, half_sq_dist, PointCloud};
use crate::error::{Error, Result};

/// Largest cloud accepted by [`solve_assignment`].
pub const MAX_ASSIGNMENT: usize = 10_000;

/// `X_j -> Y_{perm[j]}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub perm: Vec<usize>,
    /// `sum_j |X_j - Y_{perm[j]}|^2 / 2` (unweighted).
    pub total_cost: f64,
}

impl Assignment {
    pub fn new(x: &PointCloud, y: &PointCloud, perm: Vec<usize>) -> Result<Self> {
        let k = x.len();
        if y.len() != k || perm.len() != k {
            return Err(Error::InvalidParameter("assignment sizes differ".into()));
        }
        let mut seen = vec![false; k];
        for &p in &perm {
            if p >= k || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidParameter("assignment is not a permutation".into()));
            }
        }
        let total_cost = assignment_cost(x, y, &perm);
        Ok(Assignment { perm, total_cost })
    }

    /// Cost per unit mass, `total_cost / k`.
    pub fn mean_cost(&self) -> f64 {
        self.total_cost / self.perm.len() as f64
    }
}

pub fn assignment_cost(x: &PointCloud, y: &PointCloud, perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(j, &p)| half_sq_dist(x.point(j), y.point(p)))
        .sum()
}

fn check_pair(x: &PointCloud, y: &PointCloud) -> Result<()> {
    x.ensure_same_dim(y)?;
    if x.len() != y.len() {
        return Err(Error::InvalidParameter(format!(
            "assignment needs equal sizes ({} vs {}); use solve_plan",
            x.len(),
            y.len()
        )));
    }
    if !x.is_uniform() || !y.is_uniform() {
        return Err(Error::InvalidParameter(
            "assignment needs uniform weights; use solve_plan".into(),
        ));
    }
    Ok(())
}

/// Optimal assignment for the cost `|X - Y|^2 / 2`.
///
/// Shortest augmenting paths with dual potentials give an optimal matching
/// and a dual certificate; among the matchings that are tight for those
/// duals the lexicographically smallest permutation is returned.
pub fn solve_assignment(x: &PointCloud, y: &PointCloud) -> Result<Assignment> {
    check_pair(x, y)?;
    let k = x.len();
    if k > MAX_ASSIGNMENT {
        return Err(Error::InvalidParameter(format!(
            "assignment size {k} exceeds {MAX_ASSIGNMENT}"
        )));
    }
    let cost: Vec<f64> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| half_sq_dist(x.point(i), y.point(j)))
        .collect();
    let (perm, u, v) = hungarian(&cost, k);
    let scale = cost.iter().fold(0.0f64, |m, &c| m.max(c));
    let eps = 1e-11 * (1.0 + scale);
    let tight = |i: usize, j: usize| cost[i * k + j] - u[i] - v[j] <= eps;
    let perm = lex_smallest_matching(k, perm, tight);
    Assignment::new(x, y, perm)
}

/// Shortest-augmenting-path Hungarian method on a dense `k x k` cost
/// matrix. Returns the row-to-column matching and dual potentials with
/// `u_i + v_j <= c_ij`, equality on matched pairs.
pub(crate) fn hungarian(cost: &[f64], k: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based internals with a virtual column 0
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost[(i0 - 1) * k + j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; k];
    for j in 1..=k {
        perm[owner[j] - 1] = j - 1;
    }
    (perm, u[1..].to_vec(), v[1..].to_vec())
}

/// Lexicographically smallest perfect matching of the graph `tight`, given
/// one perfect matching `perm` of it. Rows are fixed in order; row `i` takes
/// the smallest column reachable by an alternating path through unfixed
/// rows.
fn lex_smallest_matching(k: usize, mut perm: Vec<usize>, tight: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let adj: Vec<Vec<usize>> = (0..k).map(|i| (0..k).filter(|&j| tight(i, j)).collect()).collect();
    let mut owner = vec![0; k];
    for (i, &j) in perm.iter().enumerate() {
        owner[j] = i;
    }
    let mut fixed = vec![false; k];
    for i in 0..k {
        for &c in &adj[i] {
            if c >= perm[i] {
                break;
            }
            // free perm[i]; row owner[c] must reach it through unfixed rows
            let target = perm[i];
            let start = owner[c];
            if fixed[start] {
                continue;
            }
            let mut prev = vec![usize::MAX; k];
            let mut seen_row = vec![false; k];
            seen_row[start] = true;
            seen_row[i] = true;
            let mut queue = std::collections::VecDeque::from([start]);
            let mut found = false;
            'bfs: while let Some(r) = queue.pop_front() {
                for &col in &adj[r] {
                    if col == c || prev[col] != usize::MAX && col != target {
                        continue;
                    }
                    if col == target {
                        prev[col] = r;
                        found = true;
                        break 'bfs;
                    }
                    let next = owner[col];
                    if fixed[next] || seen_row[next] {
                        continue;
                    }
                    prev[col] = r;
                    seen_row[next] = true;
                    queue.push_back(next);
                }
            }
            if found {
                // shift columns back along the path
                let mut col = target;
                loop {
                    let r = prev[col];
                    let old = perm[r];
                    perm[r] = col;
                    owner[col] = r;
                    if r == start {
                        break;
                    }
                    col = old;
                }
                perm[i] = c;
                owner[c] = i;
                break;
            }
        }
        fixed[i] = true;
    }
    perm
}

/// Exhaustive minimum over all permutations (reference for small `k`),
/// lexicographically smallest among ties within `1e-12` relative.
pub fn brute_force_assignment(x: &PointCloud, y: &PointCloud) -> Result<Assignment> {
    check_pair(x, y)?;
    let k = x.len();
    if k > 9 {
        return Err(Error::InvalidParameter("brute force is limited to 9 points".into()));
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_cost = assignment_cost(x, y, &perm);
    // lexicographic enumeration keeps the first minimizer
    while next_permutation(&mut perm) {
        let c = assignment_cost(x, y, &perm);
        if c < best_cost - 1e-12 * (1.0 + best_cost) {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
    }
    Assignment::new(x, y, best)
}

pub(crate) fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Result of a cyclical monotonicity test.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleCheck {
    pub monotone: bool,
    /// Indices `i_1, ..., i_m` of a cycle with
    /// `sum <X_{i_t}, Y(X_{i_t})> < sum <X_{i_t}, Y(X_{i_{t+1}})>`.
    pub witness: Option<Vec<usize>>,
}

/// Largest cycle length accepted by [`check_cyclical_monotonicity`].
pub const MAX_CYCLE: usize = 6;

/// Tests every cycle of length at most `max_cycle` by dynamic programming
/// over closed walks of the reassignment graph with edge weights
/// `<X_i, Y(X_i) - Y(X_j)>`; a negative closed walk contains a negative
/// simple cycle no longer than itself.
pub fn check_cyclical_monotonicity(
    x: &PointCloud,
    y: &PointCloud,
    a: &Assignment,
    max_cycle: usize,
) -> Result<CycleCheck> {
    if !(2..=MAX_CYCLE).contains(&max_cycle) {
        return Err(Error::InvalidParameter(format!(
            "cycle length must lie in 2..={MAX_CYCLE} (got {max_cycle})"
        )));
    }
    let k = a.perm.len();
    let yv = |i: usize| y.point(a.perm[i]);
    let w = |i: usize, j: usize| dot(x.point(i), yv(i)) - dot(x.point(i), yv(j));
    let scale: f64 = (0..k)
        .map(|i| dot(x.point(i), x.point(i)).sqrt() * dot(yv(i), yv(i)).sqrt())
        .fold(0.0, f64::max);
    let tol = 1e-12 * (1.0 + scale) * max_cycle as f64;
    for s in 0..k {
        // walks from s with exactly l edges, minimizing weight
        let mut dist = vec![f64::INFINITY; k];
        let mut back: Vec<Vec<usize>> = Vec::new();
        dist[s] = 0.0;
        for l in 1..=max_cycle {
            let mut nd = vec![f64::INFINITY; k];
            let mut nb = vec![usize::MAX; k];
            for (i, &di) in dist.iter().enumerate() {
                if di.is_finite() {
                    for j in 0..k {
                        if j != i {
                            let c = di + w(i, j);
                            if c < nd[j] {
                                nd[j] = c;
                                nb[j] = i;
                            }
                        }
                    }
                }
            }
            back.push(nb);
            dist = nd;
            if l >= 2 && dist[s] < -tol {
                let mut walk = vec![s];
                let mut cur = s;
                for step in (0..l).rev() {
                    cur = back[step][cur];
                    walk.push(cur);
                }
                walk.pop();
                walk.reverse();
                let cycle = negative_simple_cycle(&walk, &w);
                return Ok(CycleCheck {
                    monotone: false,
                    witness: Some(cycle),
                });
            }
        }
    }
    Ok(CycleCheck {
        monotone: true,
        witness: None,
    })
}

/// Splits a closed walk into simple cycles and returns the lightest one,
/// which is negative when the walk is.
fn negative_simple_cycle(walk: &[usize], w: &impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let weight = |c: &[usize]| (0..c.len()).map(|t| w(c[t], c[(t + 1) % c.len()])).sum::<f64>();
    let mut stack: Vec<usize> = Vec::new();
    let mut cycles: Vec<Vec<usize>> = Vec::new();
    for &v in walk.iter().chain(std::iter::once(&walk[0])) {
        if let Some(pos) = stack.iter().position(|&u| u == v) {
            cycles.push(stack.split_off(pos));
        }
        stack.push(v);
    }
    cycles
        .into_iter()
        .filter(|c| c.len() >= 2)
        .min_by(|a, b| weight(a).total_cmp(&weight(b)))
        .unwrap_or_else(|| walk.to_vec())
}

/// Values `phi_i` and subgradients `Y(X_i)` of a convex potential.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePotential {
    pub values: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
    /// Index of the point normalized to `phi = 0`.
    pub anchor: usize,
}

impl DiscretePotential {
    /// `max_{i,j} (phi_i + <Y_i, X_j - X_i> - phi_j)^+`.
    pub fn feasibility_residual(&self, x: &PointCloud) -> f64 {
        let k = self.values.len();
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let step: f64 = self.gradients[i]
                    .iter()
                    .zip(x.point(j).iter().zip(x.point(i)))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum();
                worst = worst.max(self.values[i] + step - self.values[j]);
            }
        }
        worst
    }
}

/// Rockafellar's construction: `phi_j` is the longest path from the anchor
/// in the graph with edge weights `<Y_i, X_j - X_i>`, anchored at the
/// lexicographically smallest point. A positive cycle (the assignment is
/// not cyclically monotone) is reported as an error.
pub fn recover_potential(x: &PointCloud, y: &PointCloud, a: &Assignment) -> Result<DiscretePotential> {
    let k = a.perm.len();
    if x.len() != k || y.len() != k {
        return Err(Error::InvalidParameter("assignment does not match the clouds".into()));
    }
    let grad = |i: usize| y.point(a.perm[i]);
    let w = |i: usize, j: usize| -> f64 {
        grad(i)
            .iter()
            .zip(x.point(j).iter().zip(x.point(i)))
            .map(|(g, (p, q))| g * (p - q))
            .sum()
    };
    let anchor = (0..k)
        .min_by(|&i, &j| {
            x.point(i)
                .iter()
                .zip(x.point(j))
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        })
        .unwrap_or(0);
    let scale: f64 = (0..k)
        .map(|i| dot(grad(i), grad(i)).sqrt() * dot(x.point(i), x.point(i)).sqrt())
        .fold(0.0, f64::max);
    let tol = 1e-12 * (1.0 + scale) * k as f64;
    // Bellman-Ford for longest paths
    let mut phi = vec![f64::NEG_INFINITY; k];
    let mut pred = vec![usize::MAX; k];
    phi[anchor] = 0.0;
    let mut changed_node = None;
    for _ in 0..k {
        changed_node = None;
        for i in 0..k {
            if phi[i] == f64::NEG_INFINITY {
                continue;
            }
            for j in 0..k {
                if j != i {
                    let c = phi[i] + w(i, j);
                    if c > phi[j] + tol {
                        phi[j] = c;
                        pred[j] = i;
                        changed_node = Some(j);
                    }
                }
            }
        }
        if changed_node.is_none() {
            break;
        }
    }
    if let Some(mut v) = changed_node {
        // still improving after k rounds: walking back k steps lands on a
        // positive cycle
        for _ in 0..k {
            v = pred[v];
        }
        let mut cycle = vec![v];
        let mut u = pred[v];
        while u != v {
            cycle.push(u);
            u = pred[u];
        }
        cycle.reverse();
        return Err(Error::NotCyclicallyMonotone { cycle });
    }
    Ok(DiscretePotential {
        values: phi,
        gradients: (0..k).map(|i| grad(i).to_vec()).collect(),
        anchor,
    })
}
