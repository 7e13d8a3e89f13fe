//! Affine invariance and quadratic dilation of the discrete equation.
//!
//! For `v(x) = s u(A (x - c) + c + b)` one has
//! `det D^2 v(x) = s^2 det(A)^2 det D^2 u(A (x - c) + c + b)`, where `c` is
//! the centre of the grid. The checks build `v` on the grid from a bicubic
//! spline of the solution and compare `ma_det(v)` with the transformed right
//! hand side. Images landing on grid nodes use the stored node values, so the
//! identity reproduces the solver's residual bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ConvexSolution;
use crate::error::{Error, Result};
use crate::grid::interp::BicubicSpline;
use crate::grid::{hessian_central, GridFunction, GridSpec};

/// `x -> A x + b`. The invariance checks apply it about the centre of the
/// grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl AffineMap {
    pub fn new(a: [[f64; 2]; 2], b: [f64; 2]) -> Self {
        AffineMap { a, b }
    }

    pub fn identity() -> Self {
        Self::linear([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn linear(a: [[f64; 2]; 2]) -> Self {
        AffineMap { a, b: [0.0, 0.0] }
    }

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::linear([[c, -s], [s, c]])
    }

    /// `[[1, k], [0, 1]]`.
    pub fn shear(k: f64) -> Self {
        Self::linear([[1.0, k], [0.0, 1.0]])
    }

    pub fn det(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    pub fn frobenius(&self) -> f64 {
        self.a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a[0][0] * p[0] + self.a[0][1] * p[1] + self.b[0],
            self.a[1][0] * p[0] + self.a[1][1] * p[1] + self.b[1],
        ]
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &AffineMap) -> AffineMap {
        let m = |r: usize, c: usize| self.a[r][0] * other.a[0][c] + self.a[r][1] * other.a[1][c];
        AffineMap {
            a: [[m(0, 0), m(0, 1)], [m(1, 0), m(1, 1)]],
            b: self.apply(other.b),
        }
    }
}

/// `count` maps `R(theta) diag(s, 1/s) S(k)` with `theta` uniform on the
/// circle, `s` in `[0.8, 1.25)` and shear `k` in `[-0.5, 0.5)`, followed by a
/// translation by a vector in `[-0.1, 0.1)^2`.
pub fn random_invariance_maps(count: usize, seed: u64) -> Vec<AffineMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maps: Vec<AffineMap> = (0..count)
        .map(|_| {
            let theta = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            let s = rng.random_range(0.8..1.25);
            let k = rng.random_range(-0.5..0.5);
            AffineMap::rotation(theta)
                .compose(&AffineMap::linear([[s, 0.0], [0.0, 1.0 / s]]))
                .compose(&AffineMap::shear(k))
        })
        .collect();
    let b = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
    maps.push(AffineMap::new([[1.0, 0.0], [0.0, 1.0]], b));
    maps
}

/// Outcome of an invariance check.
#[derive(Clone, Debug)]
pub struct InvarianceReport {
    /// Sup of `|ma_det(v) - target|` over the safe region.
    pub residual_sup: f64,
    /// Allowed residual: solver tolerance plus the interpolation bound.
    pub tol_inv: f64,
    /// Number of nodes at which the residual was evaluated.
    pub nodes: usize,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.residual_sup <= self.tol_inv
    }
}

/// Constant in the interpolation allowance `C h^2 |A|_F^2 max f`.
pub const INTERPOLATION_CONSTANT: f64 = 16.0;

/// Residual of the transformed solution under a map of unit determinant.
pub fn check_affine_invariance(
    sol: &ConvexSolution,
    f: &GridFunction,
    map: &AffineMap,
) -> Result<InvarianceReport> {
    if (map.det() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "affine invariance needs det A = 1 (got {})",
            map.det()
        )));
    }
    transformed_residual(sol, f, map, 1.0)
}

/// Residual of `t^-2 u(t x)` (dilation about the grid centre) against
/// `f(t x)`.
pub fn check_quadratic_dilation(
    sol: &ConvexSolution,
    f: &GridFunction,
    t: f64,
) -> Result<InvarianceReport> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("dilation factor must be positive (got {t})")));
    }
    transformed_residual(sol, f, &AffineMap::linear([[t, 0.0], [0.0, t]]), 1.0 / (t * t))
}

fn snap(p: f64) -> f64 {
    let r = p.round();
    if (p - r).abs() < 1e-9 {
        r
    } else {
        p
    }
}

fn transformed_residual(
    sol: &ConvexSolution,
    f: &GridFunction,
    map: &AffineMap,
    scale: f64,
) -> Result<InvarianceReport> {
    let spec: GridSpec = *sol.u.spec();
    spec.ensure_same(f.spec())?;
    if spec.is_torus() {
        return Err(Error::SpecMismatch("invariance checks need a box grid".into()));
    }
    let us = BicubicSpline::new(&sol.u);
    let fs = BicubicSpline::new(f);
    let h = spec.h();
    let (cx, cy) = ((spec.nx / 2) as f64, (spec.ny / 2) as f64);
    // images in node-index units; None outside the closed box
    let linear = AffineMap::linear(map.a);
    // images in node-index units; None outside the closed box
    let image = |i: usize, j: usize| -> Option<[f64; 2]> {
        let [p, q] = linear.apply([i as f64 - cx, j as f64 - cy]);
        let (p, q) = (snap(p + cx + map.b[0] / h), snap(q + cy + map.b[1] / h));
        let eps = 1e-9;
        (p >= -eps && q >= -eps && p <= spec.nx as f64 + eps && q <= spec.ny as f64 + eps)
            .then_some([p.clamp(0.0, spec.nx as f64), q.clamp(0.0, spec.ny as f64)])
    };
    let (mx, my) = (spec.mx(), spec.my());
    let mut v = GridFunction::zeros(spec);
    let mut inside = vec![false; spec.len()];
    for j in 0..my {
        for i in 0..mx {
            if let Some([p, q]) = image(i, j) {
                let k = spec.idx(i, j);
                v.values_mut()[k] = scale * us.eval_index(p, q).0;
                inside[k] = true;
            }
        }
    }
    let weight = scale * scale * map.det() * map.det();
    let hess = hessian_central(&v);
    let mut sup: f64 = 0.0;
    let mut nodes = 0;
    let mut fmax: f64 = 0.0;
    for j in 1..my - 1 {
        for i in 1..mx - 1 {
            let safe = (-1..=1).all(|dj: isize| {
                (-1..=1).all(|di: isize| {
                    inside[spec.idx((i as isize + di) as usize, (j as isize + dj) as usize)]
                })
            });
            if !safe {
                continue;
            }
            let k = spec.idx(i, j);
            let [p, q] = image(i, j).expect("safe node has an image");
            let target = weight * fs.eval_index(p, q).0;
            fmax = fmax.max(target.abs());
            sup = sup.max((hess.det(k) - target).abs());
            nodes += 1;
        }
    }
    if nodes == 0 {
        return Err(Error::EmptyRegion);
    }
    let norm = map.frobenius();
    Ok(InvarianceReport {
        residual_sup: sup,
        tol_inv: sol.tol + INTERPOLATION_CONSTANT * h * h * norm * norm * fmax,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet::{solve_dirichlet, SolverOptions};
    use std::f64::consts::PI;

    fn solve(n: usize, exact: fn(f64, f64) -> f64, rhs: fn(f64, f64) -> f64) -> (ConvexSolution, GridFunction) {
        let spec = GridSpec::unit_box(n).unwrap();
        let f = GridFunction::from_fn(spec, rhs);
        let g = GridFunction::from_fn(spec, exact);
        (solve_dirichlet(&f, &g, &SolverOptions::default()).unwrap(), f)
    }

    fn quadratic(n: usize) -> (ConvexSolution, GridFunction) {
        solve(n, |x, y| 0.5 * (x * x + y * y), |_, _| 1.0)
    }

    fn exponential(n: usize) -> (ConvexSolution, GridFunction) {
        solve(
            n,
            |x, y| (0.5 * (x * x + y * y)).exp(),
            |x, y| (1.0 + x * x + y * y) * (x * x + y * y).exp(),
        )
    }

    #[test]
    fn identity_reproduces_residual() {
        let (sol, f) = exponential(16);
        let rep = check_affine_invariance(&sol, &f, &AffineMap::identity()).unwrap();
        assert_eq!(rep.residual_sup, sol.residual_sup);
        assert_eq!(rep.nodes, 15 * 15);
        let dil = check_quadratic_dilation(&sol, &f, 1.0).unwrap();
        assert_eq!(dil.residual_sup, sol.residual_sup);
    }

    #[test]
    fn quadratic_is_invariant() {
        let (sol, f) = quadratic(16);
        let rot = check_affine_invariance(&sol, &f, &AffineMap::rotation(PI / 4.0)).unwrap();
        assert!(rot.passed() && rot.residual_sup < 1e-9, "{rot:?}");
        let dil = check_quadratic_dilation(&sol, &f, 0.5).unwrap();
        assert!(dil.residual_sup <= 1e-10, "{dil:?}");
    }

    #[test]
    fn exponential_under_shear_and_dilation() {
        let (sol, f) = exponential(64);
        let shear = check_affine_invariance(&sol, &f, &AffineMap::shear(1.0)).unwrap();
        assert!(shear.passed(), "{shear:?}");
        let dil = check_quadratic_dilation(&sol, &f, 2.0).unwrap();
        assert!(dil.passed(), "{dil:?}");
        // a steeper shear still fits the allowance
        let steep = check_affine_invariance(&sol, &f, &AffineMap::shear(2.0)).unwrap();
        assert!(steep.passed(), "{steep:?}");
    }

    #[test]
    fn shear_residual_is_second_order() {
        let res: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&n| {
                let (sol, f) = exponential(n);
                check_affine_invariance(&sol, &f, &AffineMap::shear(1.0))
                    .unwrap()
                    .residual_sup
            })
            .collect();
        let orders = crate::numeric::observed_orders(&res);
        assert!(orders.iter().all(|&p| p > 1.6), "{res:?} {orders:?}");
    }

    #[test]
    fn rejects_bad_maps() {
        let (sol, f) = quadratic(8);
        let squash = AffineMap::linear([[2.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(
            check_affine_invariance(&sol, &f, &squash),
            Err(Error::InvalidParameter(_))
        ));
        let far = AffineMap::new([[1.0, 0.0], [0.0, 1.0]], [5.0, 0.0]);
        assert!(matches!(check_affine_invariance(&sol, &f, &far), Err(Error::EmptyRegion)));
        assert!(check_quadratic_dilation(&sol, &f, 0.0).is_err());
        assert!(matches!(check_quadratic_dilation(&sol, &f, 50.0), Err(Error::EmptyRegion)));
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = AffineMap::new([[1.0, 2.0], [0.5, 3.0]], [0.1, -0.2]);
        let b = AffineMap::rotation(0.3);
        let p = [0.7, -1.1];
        let lhs = a.compose(&b).apply(p);
        let rhs = a.apply(b.apply(p));
        assert!((lhs[0] - rhs[0]).abs() < 1e-14 && (lhs[1] - rhs[1]).abs() < 1e-14);
    }
}
