//! Oscillation, discrete convexity, gradient images and Hessian norms.

use super::hull::{convex_hull, polygon_area};
use super::{hessian_central, GridFunction, Region};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use std::f64::consts::PI;

/// Stencil directions used by the discrete convexity test: two axes, two
/// diagonals and four knight moves.
pub const CONVEXITY_DIRECTIONS: [(isize, isize); 8] = [
    (1, 0),
    (0, 1),
    (1, 1),
    (1, -1),
    (2, 1),
    (1, 2),
    (2, -1),
    (1, -2),
];

/// `max - min` of `u` over `r`.
pub fn oscillation(u: &GridFunction, r: &Region) -> Result<f64> {
    u.spec().ensure_same(r.spec())?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in r.nodes() {
        let v = u.values()[k];
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return Err(Error::EmptyRegion);
    }
    Ok(hi - lo)
}

/// Checks nonnegative second differences along [`CONVEXITY_DIRECTIONS`] at
/// every node of `r` where the stencil fits. The tolerance is
/// `1e-8 * (1 + |u|_inf)` on the raw (unscaled) differences.
pub fn is_discretely_convex(u: &GridFunction, r: &Region) -> Result<()> {
    let spec = *u.spec();
    spec.ensure_same(r.spec())?;
    let v = u.values();
    let tol = 1e-8 * (1.0 + u.sup_norm());
    for k in r.nodes() {
        let (i, j) = spec.ij(k);
        for &(di, dj) in &CONVEXITY_DIRECTIONS {
            let (Some(p), Some(m)) = (spec.offset(i, j, di, dj), spec.offset(i, j, -di, -dj))
            else {
                continue;
            };
            let d2 = v[p] - 2.0 * v[k] + v[m];
            if d2 < -tol {
                return Err(Error::NotConvex {
                    i,
                    j,
                    value: d2,
                    tol,
                });
            }
        }
    }
    Ok(())
}

/// Nodal gradient: centered differences, falling back to second-order
/// one-sided differences at box edges. Exact on quadratics.
pub fn gradient_field(u: &GridFunction) -> (Vec<f64>, Vec<f64>) {
    let spec = *u.spec();
    let v = u.values();
    let h = spec.h();
    let n = spec.len();
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let deriv = |k: usize, i: usize, j: usize, dir: (isize, isize)| -> f64 {
        let fwd = spec.offset(i, j, dir.0, dir.1);
        let bwd = spec.offset(i, j, -dir.0, -dir.1);
        match (fwd, bwd) {
            (Some(p), Some(m)) => (v[p] - v[m]) / (2.0 * h),
            (Some(p), None) => {
                let p2 = spec.offset(i, j, 2 * dir.0, 2 * dir.1).unwrap();
                (-3.0 * v[k] + 4.0 * v[p] - v[p2]) / (2.0 * h)
            }
            (None, Some(m)) => {
                let m2 = spec.offset(i, j, -2 * dir.0, -2 * dir.1).unwrap();
                (3.0 * v[k] - 4.0 * v[m] + v[m2]) / (2.0 * h)
            }
            (None, None) => unreachable!("grid has at least 4 cells"),
        }
    };
    for j in 0..spec.my() {
        for i in 0..spec.mx() {
            let k = spec.idx(i, j);
            gx[k] = deriv(k, i, j, (1, 0));
            gy[k] = deriv(k, i, j, (0, 1));
        }
    }
    (gx, gy)
}

/// Area of the convex hull of the nodal gradients over `r`.
///
/// For discretely convex `u` this approximates `Vol(grad u(r))`, which in
/// turn equals the integral of `det D^2 u` over the cells spanned by `r`.
pub fn gradient_image_volume(u: &GridFunction, r: &Region) -> Result<f64> {
    u.spec().ensure_same(r.spec())?;
    is_discretely_convex(u, r)?;
    let (gx, gy) = gradient_field(u);
    let pts: Vec<[f64; 2]> = r.nodes().map(|k| [gx[k], gy[k]]).collect();
    if pts.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(polygon_area(&convex_hull(&pts)))
}

/// Trapezoid integral of `g` over the union of cells whose four corners lie
/// in `r`.
pub fn cell_integral(g: &GridFunction, r: &Region) -> Result<f64> {
    let spec = *g.spec();
    spec.ensure_same(r.spec())?;
    let h2 = spec.h() * spec.h();
    let v = g.values();
    let mut terms = Vec::new();
    // a box and a torus both have nx * ny cells
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            let corners = [
                spec.offset(i, j, 0, 0),
                spec.offset(i, j, 1, 0),
                spec.offset(i, j, 0, 1),
                spec.offset(i, j, 1, 1),
            ];
            if corners.iter().all(|c| c.is_some_and(|k| r.contains(k))) {
                let s: f64 = corners.iter().map(|c| v[c.unwrap()]).sum();
                terms.push(0.25 * s * h2);
            }
        }
    }
    if terms.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(pairwise_sum(&terms))
}

/// `(sum_r |D^2 u|_F^p h^2)^(1/p)` over nodes of `r` where the central
/// Hessian is defined.
pub fn hessian_lp_norm(u: &GridFunction, p: f64, r: &Region) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("p must be >= 1 (got {p})")));
    }
    u.spec().ensure_same(r.spec())?;
    let hf = hessian_central(u);
    let h2 = u.spec().h().powi(2);
    let terms: Vec<f64> = r
        .nodes()
        .filter(|&k| hf.defined[k])
        .map(|k| hf.frobenius(k).powf(p) * h2)
        .collect();
    if terms.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(pairwise_sum(&terms).powf(1.0 / p))
}

/// Constant in `int_r det D^2 u <= C (osc u)^2` for convex `u` on a box.
///
/// Convexity bounds `|grad u(x)| <= osc u / d` where `d` is the distance from
/// `x` to the boundary, so the gradient image of `r` lies in a disc of that
/// radius and `C = pi / d^2` with `d` the smallest distance from `r` to the
/// boundary.
pub fn energy_inequality_constant(r: &Region) -> Result<f64> {
    let spec = r.spec();
    if spec.is_torus() {
        return Err(Error::SpecMismatch(
            "energy inequality needs a bounded domain".into(),
        ));
    }
    let d = r.min_margin() as f64 * spec.h();
    if d <= 0.0 {
        return Err(Error::InvalidParameter(
            "region touches the boundary".into(),
        ));
    }
    Ok(PI / (d * d))
}
