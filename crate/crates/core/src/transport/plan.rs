//! Kantorovich plans between weighted clouds.

use super::cloud::{dot, half_sq_dist, PointCloud};
use crate::error::{Error, Result};

/// Largest `k_x * k_y` accepted by [`solve_plan`].
pub const MAX_PLAN_ENTRIES: usize = 1_000_000;

/// Mass below this is treated as exhausted during augmentation.
const MASS_EPS: f64 = 1e-15;

/// Joint weights `nu[i][j]` with the clouds' weights as marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub nu: Vec<f64>,
    /// `sum nu_ij c_ij` for the cost the plan was solved with.
    pub cost: f64,
    /// Dual potentials with `alpha_i + beta_j <= c_ij`, equality on the
    /// support.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl TransportPlan {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.nu[i * self.cols + j]
    }

    /// Pairs carrying mass above `threshold`.
    pub fn support(&self, threshold: f64) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
            .filter(|&(i, j)| self.at(i, j) > threshold)
            .collect()
    }

    /// Largest deviation of the row and column sums from `a` and `b`.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut err: f64 = 0.0;
        for (i, ai) in a.iter().enumerate() {
            let s: f64 = self.nu[i * self.cols..(i + 1) * self.cols].iter().sum();
            err = err.max((s - ai).abs());
        }
        for (j, bj) in b.iter().enumerate() {
            let s: f64 = (0..self.rows).map(|i| self.at(i, j)).sum();
            err = err.max((s - bj).abs());
        }
        err
    }

    /// Complementary-slackness gap for the cost matrix `c`: the worst of the
    /// dual infeasibility `alpha_i + beta_j - c_ij` and the reduced cost on
    /// the support.
    pub fn slackness_gap(&self, c: &[f64]) -> f64 {
        let mut gap: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let r = c[i * self.cols + j] - self.alpha[i] - self.beta[j];
                gap = gap.max(-r);
                if self.at(i, j) > MASS_EPS {
                    gap = gap.max(r.abs());
                }
            }
        }
        gap
    }
}

fn check_marginals(a: &[f64], b: &[f64]) -> Result<()> {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 {
        return Err(Error::Infeasible(format!("marginal masses differ ({sa:.12} vs {sb:.12})")));
    }
    if a.iter().chain(b).any(|w| !(*w >= 0.0)) {
        return Err(Error::Infeasible("negative marginal weight".into()));
    }
    Ok(())
}

/// Min-cost transport for a dense cost matrix by successive shortest paths
/// with Johnson potentials (dense Dijkstra per augmentation).
pub fn solve_transport(c: &[f64], a: &[f64], b: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (a.len(), b.len());
    if c.len() != m * n || m == 0 || n == 0 {
        return Err(Error::InvalidParameter("cost matrix does not match the marginals".into()));
    }
    check_marginals(a, b)?;
    let cmin = c.iter().copied().fold(f64::INFINITY, f64::min);
    let cmax = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !cmin.is_finite() || !cmax.is_finite() {
        return Err(Error::InvalidParameter("cost matrix has non-finite entries".into()));
    }
    // nodes: rows 0..m, columns m..m+n; reduced costs stay >= 0 with
    // potentials pi
    let mut nu = vec![0.0; m * n];
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut pi = vec![0.0; m + n];
    for j in 0..n {
        pi[m + j] = (0..m).map(|i| c[i * n + j]).fold(f64::INFINITY, f64::min);
    }
    let total = n + m;
    let mut dist = vec![0.0; total];
    let mut prev = vec![usize::MAX; total];
    let mut done = vec![false; total];
    loop {
        let open_rows: Vec<usize> = (0..m).filter(|&i| supply[i] > MASS_EPS).collect();
        if open_rows.is_empty() || demand.iter().all(|&d| d <= MASS_EPS) {
            break;
        }
        // a super source feeds every open row at zero cost; in reduced
        // terms that arc costs `top - pi_i >= 0`
        let top = open_rows.iter().map(|&i| pi[i]).fold(f64::NEG_INFINITY, f64::max);
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for &i in &open_rows {
            dist[i] = top - pi[i];
        }
        loop {
            let mut best = usize::MAX;
            let mut bd = f64::INFINITY;
            for v in 0..total {
                if !done[v] && dist[v] < bd {
                    bd = dist[v];
                    best = v;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best < m {
                let i = best;
                for j in 0..n {
                    let v = m + j;
                    if !done[v] {
                        let r = (c[i * n + j] + pi[i] - pi[v]).max(0.0);
                        if bd + r < dist[v] {
                            dist[v] = bd + r;
                            prev[v] = i;
                        }
                    }
                }
            } else {
                let j = best - m;
                for i in 0..m {
                    if !done[i] && nu[i * n + j] > MASS_EPS {
                        let r = (pi[best] - c[i * n + j] - pi[i]).max(0.0);
                        if bd + r < dist[i] {
                            dist[i] = bd + r;
                            prev[i] = best;
                        }
                    }
                }
            }
        }
        // true path length to column v is dist[v] + pi[v] - top
        let sink = (0..n)
            .filter(|&j| demand[j] > MASS_EPS && dist[m + j].is_finite())
            .min_by(|&p, &q| (dist[m + p] + pi[m + p]).total_cmp(&(dist[m + q] + pi[m + q])))
            .map(|j| m + j)
            .ok_or_else(|| Error::Infeasible("no augmenting path".into()))?;
        let reach = dist.iter().copied().filter(|d| d.is_finite()).fold(0.0, f64::max);
        for v in 0..total {
            pi[v] += dist[v].min(reach);
        }
        // bottleneck along the path
        let mut amount = demand[sink - m];
        let mut v = sink;
        let mut source = v;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= m {
                // backward arc: column u -> row v cancels nu[v][u - m]
                amount = amount.min(nu[v * n + (u - m)]);
            }
            source = u;
            v = u;
        }
        amount = amount.min(supply[source]);
        let mut v = sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < m {
                nu[u * n + (v - m)] += amount;
            } else {
                let e = v * n + (u - m);
                nu[e] -= amount;
                if nu[e] < MASS_EPS {
                    nu[e] = 0.0;
                }
            }
            v = u;
        }
        supply[source] -= amount;
        demand[sink - m] -= amount;
    }
    let cost = nu.iter().zip(c).map(|(p, q)| p * q).sum();
    // duals: c_ij + pi_i - pi_j >= 0  =>  alpha_i = -pi_i, beta_j = pi_j
    Ok(TransportPlan {
        rows: m,
        cols: n,
        cost,
        alpha: pi[..m].iter().map(|p| -p).collect(),
        beta: pi[m..].to_vec(),
        nu,
    })
}

pub(crate) fn quadratic_cost(x: &PointCloud, y: &PointCloud) -> Vec<f64> {
    let mut c = Vec::with_capacity(x.len() * y.len());
    for p in x.points() {
        for q in y.points() {
            c.push(half_sq_dist(p, q));
        }
    }
    c
}

fn check_size(x: &PointCloud, y: &PointCloud) -> Result<()> {
    x.ensure_same_dim(y)?;
    if x.len() * y.len() > MAX_PLAN_ENTRIES {
        return Err(Error::InvalidParameter(format!(
            "plan with {} x {} entries exceeds {MAX_PLAN_ENTRIES}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Optimal plan for the cost `|X - Y|^2 / 2`, with dual potentials
/// certifying optimality.
pub fn solve_plan(x: &PointCloud, y: &PointCloud) -> Result<TransportPlan> {
    check_size(x, y)?;
    solve_transport(&quadratic_cost(x, y), x.weights(), y.weights())
}

/// Wasserstein-2 distance `sqrt(sum nu |X - Y|^2)`, with the unhalved
/// squared distance.
pub fn wasserstein2(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    Ok((2.0 * solve_plan(x, y)?.cost).max(0.0).sqrt())
}

/// Outcome of [`correlation_duality_check`].
#[derive(Clone, Debug)]
pub struct DualityReport {
    /// `max sum nu <X, Y>`.
    pub max_correlation: f64,
    /// `min sum nu |X - Y|^2 / 2`.
    pub min_cost: f64,
    /// `(sum w |X|^2 + sum w |Y|^2) / 2`.
    pub moments: f64,
    /// `|max_correlation + min_cost - moments|`.
    pub gap: f64,
    /// The two optimal plans charge the same pairs.
    pub same_support: bool,
    pub cost_plan: TransportPlan,
    pub correlation_plan: TransportPlan,
}

impl DualityReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.gap <= tol && self.same_support
    }
}

/// Solves the cost-minimization and correlation-maximization problems as
/// two separate linear programs and compares them.
pub fn correlation_duality_check(x: &PointCloud, y: &PointCloud) -> Result<DualityReport> {
    check_size(x, y)?;
    let cost_plan = solve_plan(x, y)?;
    let neg_corr: Vec<f64> = x
        .points()
        .flat_map(|p| y.points().map(move |q| -dot(p, q)))
        .collect();
    let correlation_plan = solve_transport(&neg_corr, x.weights(), y.weights())?;
    let max_correlation = -correlation_plan.cost;
    let moments = 0.5 * (x.second_moment() + y.second_moment());
    let threshold = 1e-12;
    let same_support = cost_plan.support(threshold) == correlation_plan.support(threshold);
    Ok(DualityReport {
        max_correlation,
        min_cost: cost_plan.cost,
        moments,
        gap: (max_correlation + cost_plan.cost - moments).abs(),
        same_support,
        cost_plan,
        correlation_plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{brute_force_assignment, random_cloud};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::uniform(xs.iter().map(|&x| vec![x]).collect()).unwrap()
    }

    fn weighted(k: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.random(), rng.random()]).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|r| r / s).collect();
        let rest: f64 = w[..k - 1].iter().sum();
        w[k - 1] = 1.0 - rest;
        PointCloud::new(pts, w).unwrap()
    }

    #[test]
    fn forced_marginals() {
        let one = line(&[0.3]);
        let p = solve_plan(&one, &line(&[0.7])).unwrap();
        assert_eq!(p.nu, vec![1.0]);
        let two = PointCloud::new(vec![vec![0.0], vec![1.0]], vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let p = solve_plan(&two, &one).unwrap();
        assert!((p.at(0, 0) - 2.0 / 3.0).abs() < 1e-15 && (p.at(1, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_square_plan_is_a_permutation() {
        let x = random_cloud(4, 2, 11).unwrap();
        let y = random_cloud(4, 2, 12).unwrap();
        let p = solve_plan(&x, &y).unwrap();
        let brute = brute_force_assignment(&x, &y).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if brute.perm[i] == j { 0.25 } else { 0.0 };
                assert!((p.at(i, j) - expect).abs() < 1e-15, "{:?}", p.nu);
            }
        }
        assert!((p.cost - brute.mean_cost()).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_examples() {
        let x = random_cloud(10, 2, 4).unwrap();
        assert_eq!(wasserstein2(&x, &x).unwrap(), 0.0);
        let v = [0.3, 0.4];
        let y = PointCloud::uniform(x.points().map(|p| vec![p[0] + v[0], p[1] + v[1]]).collect()).unwrap();
        assert!((wasserstein2(&x, &y).unwrap() - 0.5).abs() < 1e-12);
        let w = wasserstein2(&line(&[0.0, 1.0]), &line(&[0.0, 2.0])).unwrap();
        assert!((w - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn infeasible_marginals() {
        let c = vec![0.0; 4];
        assert!(matches!(
            solve_transport(&c, &[0.5, 0.5], &[0.5, 0.6]),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn duality_examples() {
        let o = line(&[0.0]);
        let r = correlation_duality_check(&o, &o).unwrap();
        assert_eq!((r.max_correlation, r.min_cost, r.gap), (0.0, 0.0, 0.0));
        let x = random_cloud(5, 2, 21).unwrap();
        let y = random_cloud(5, 2, 22).unwrap();
        let r = correlation_duality_check(&x, &y).unwrap();
        assert!(r.holds(1e-9), "{r:?}");
        let t = PointCloud::uniform(x.points().map(|p| vec![p[0] + 2.0, p[1] - 1.0]).collect()).unwrap();
        let r = correlation_duality_check(&x, &t).unwrap();
        assert!(r.holds(1e-9));
        assert_eq!(r.cost_plan.support(1e-12), (0..5).map(|i| (i, i)).collect::<Vec<_>>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn plans_are_certified(m in 1usize..12, n in 1usize..12, seed in 0u64..10_000) {
            let x = weighted(m, seed);
            let y = weighted(n, seed + 5);
            let p = solve_plan(&x, &y).unwrap();
            prop_assert!(p.nu.iter().all(|&v| v >= 0.0));
            prop_assert!(p.marginal_error(x.weights(), y.weights()) <= 1e-9);
            prop_assert!(p.slackness_gap(&quadratic_cost(&x, &y)) <= 1e-9);
            let r = correlation_duality_check(&x, &y).unwrap();
            prop_assert!(r.gap <= 1e-9);
        }

        #[test]
        fn metric_axioms(seed in 0u64..10_000, k in 1usize..8) {
            let a = weighted(k, seed);
            let b = weighted(k + 1, seed + 1);
            let c = weighted(k + 2, seed + 2);
            let ab = wasserstein2(&a, &b).unwrap();
            let ba = wasserstein2(&b, &a).unwrap();
            let bc = wasserstein2(&b, &c).unwrap();
            let ac = wasserstein2(&a, &c).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!(wasserstein2(&a, &a).unwrap() <= 1e-7);
        }
    }
}
