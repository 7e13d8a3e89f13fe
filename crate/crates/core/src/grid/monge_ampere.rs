//! Discrete Monge-Ampere operators.

use super::{hessian_central, GridFunction, GridSpec};
use crate::error::{Error, Result};

/// Floor applied to directional second differences in the wide-stencil
/// operator. Keeps the product monotone across flat directions.
pub const DEGENERACY_FLOOR: f64 = 1e-10;

pub(crate) type Frame = [(isize, isize); 2];

const AXIS: Frame = [(1, 0), (0, 1)];
const DIAGONAL: Frame = [(1, 1), (1, -1)];
const KNIGHT_A: Frame = [(2, 1), (-1, 2)];
const KNIGHT_B: Frame = [(1, 2), (-2, 1)];

const FRAMES_1: [Frame; 1] = [AXIS];
const FRAMES_2: [Frame; 2] = [AXIS, DIAGONAL];
const FRAMES_3: [Frame; 4] = [AXIS, DIAGONAL, KNIGHT_A, KNIGHT_B];

/// Orthogonal direction pairs used by stencil width 1 (axis), 2 (adds the
/// diagonal pair) and 3 (adds the two knight-move pairs).
pub fn monotone_frames(width: usize) -> Result<&'static [Frame]> {
    match width {
        1 => Ok(&FRAMES_1),
        2 => Ok(&FRAMES_2),
        3 => Ok(&FRAMES_3),
        w => Err(Error::InvalidParameter(format!(
            "stencil width must be 1, 2 or 3 (got {w})"
        ))),
    }
}

/// Pointwise determinant of the central Hessian. Undefined (box boundary)
/// nodes are set to zero.
pub fn ma_det(u: &GridFunction) -> GridFunction {
    let hf = hessian_central(u);
    let mut out = GridFunction::zeros(hf.spec);
    for (k, v) in out.values_mut().iter_mut().enumerate() {
        if hf.defined[k] {
            *v = hf.det(k);
        }
    }
    out
}

/// Centered second differences `(dxx, dyy)` and the four one-sided mixed
/// differences `[++, +-, -+, --]` at a periodic node.
#[inline]
pub(crate) fn periodic_differences(
    v: &[f64],
    spec: &GridSpec,
    i: usize,
    j: usize,
) -> ([f64; 2], [f64; 4]) {
    let h2 = spec.h() * spec.h();
    let at = |di: isize, dj: isize| v[spec.offset(i, j, di, dj).unwrap()];
    let c = at(0, 0);
    let (e, w, n, s) = (at(1, 0), at(-1, 0), at(0, 1), at(0, -1));
    let (ne, se, nw, sw) = (at(1, 1), at(1, -1), at(-1, 1), at(-1, -1));
    let dxx = (e - 2.0 * c + w) / h2;
    let dyy = (n - 2.0 * c + s) / h2;
    let pp = (ne - e - n + c) / h2;
    let pm = (e - se - c + s) / h2;
    let mp = (n - c - nw + w) / h2;
    let mm = (c - s - w + sw) / h2;
    ([dxx, dyy], [pp, pm, mp, mm])
}

/// `det(M + D^2 w)` with the mixed term taken as the mean square of the four
/// one-sided mixed differences.
#[inline]
pub fn det_conservative(base: &[[f64; 2]; 2], d: [f64; 2], cross: [f64; 4]) -> f64 {
    let m12 = base[0][1];
    let sq: f64 = cross.iter().map(|c| (m12 + c) * (m12 + c)).sum::<f64>() * 0.25;
    (base[0][0] + d[0]) * (base[1][1] + d[1]) - sq
}

/// `det(M + D^2 w)` on a torus in conservative form.
///
/// The mixed term averages the squares of the four one-sided mixed
/// differences, which is exact on quadratics and makes the grid sum of the
/// determinant equal `N det M` for every periodic `w`.
pub fn ma_det_conservative(w: &GridFunction, base: &[[f64; 2]; 2]) -> Result<GridFunction> {
    let spec = *w.spec();
    spec.ensure_torus()?;
    let v = w.values();
    let mut out = GridFunction::zeros(spec);
    for j in 0..spec.my() {
        for i in 0..spec.mx() {
            let (d, c) = periodic_differences(v, &spec, i, j);
            out.values_mut()[spec.idx(i, j)] = det_conservative(base, d, c);
        }
    }
    Ok(out)
}

/// Wide-stencil monotone Monge-Ampere operator.
///
/// At each node, the minimum over the available orthogonal direction pairs
/// `(e1, e2)` of `max(D_e1 u, floor) * max(D_e2 u, floor)` where `D_e` is the
/// centered second difference along `e` divided by `|e|^2 h^2`. Frames that do
/// not fit inside a box are skipped; box boundary nodes are set to zero.
pub fn ma_monotone(u: &GridFunction, stencil_width: usize) -> Result<GridFunction> {
    let frames = monotone_frames(stencil_width)?;
    let spec = *u.spec();
    let v = u.values();
    let mut out = GridFunction::zeros(spec);
    for j in 0..spec.my() {
        for i in 0..spec.mx() {
            if spec.margin(i, j) < 1 {
                continue;
            }
            let (val, _) = monotone_at(v, &spec, i, j, frames);
            out.values_mut()[spec.idx(i, j)] = val;
        }
    }
    Ok(out)
}

/// Directional second difference along `e`, or `None` when the stencil
/// leaves the grid.
#[inline]
pub(crate) fn directional(
    v: &[f64],
    spec: &GridSpec,
    i: usize,
    j: usize,
    e: (isize, isize),
) -> Option<f64> {
    let p = spec.offset(i, j, e.0, e.1)?;
    let m = spec.offset(i, j, -e.0, -e.1)?;
    let len2 = (e.0 * e.0 + e.1 * e.1) as f64;
    let h2 = spec.h() * spec.h();
    Some((v[p] - 2.0 * v[spec.idx(i, j)] + v[m]) / (len2 * h2))
}

/// Value of the wide-stencil operator and the index of the active frame.
pub(crate) fn monotone_at(
    v: &[f64],
    spec: &GridSpec,
    i: usize,
    j: usize,
    frames: &[Frame],
) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (f, frame) in frames.iter().enumerate() {
        let (Some(a), Some(b)) = (
            directional(v, spec, i, j, frame[0]),
            directional(v, spec, i, j, frame[1]),
        ) else {
            continue;
        };
        let val = a.max(DEGENERACY_FLOOR) * b.max(DEGENERACY_FLOOR);
        if val < best {
            best = val;
            arg = f;
        }
    }
    (best, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::pairwise_sum;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interior_values(g: &GridFunction) -> Vec<f64> {
        let s = g.spec();
        let mut out = Vec::new();
        for j in 0..s.my() {
            for i in 0..s.mx() {
                if s.margin(i, j) >= 1 {
                    out.push(g.at(i, j));
                }
            }
        }
        out
    }

    #[test]
    fn det_of_quadratics() {
        let spec = GridSpec::unit_box(12).unwrap();
        let u = GridFunction::from_fn(spec, |x, y| 0.5 * (x * x + y * y));
        assert!(interior_values(&ma_det(&u))
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-10));
        let (a, b) = (3.0, 0.25);
        let u = GridFunction::from_fn(spec, |x, y| 0.5 * (a * x * x + b * y * y));
        assert!(interior_values(&ma_det(&u))
            .iter()
            .all(|v| (v - a * b).abs() < 1e-9));
    }

    #[test]
    fn det_of_exponential_is_second_order() {
        // det D^2 exp(r^2/2) = (1 + r^2) exp(r^2), by direct differentiation
        let exact = |x: f64, y: f64| (1.0 + x * x + y * y) * (x * x + y * y).exp();
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let spec = GridSpec::unit_box(n).unwrap();
            let u = GridFunction::from_fn(spec, |x, y| (0.5 * (x * x + y * y)).exp());
            let d = ma_det(&u);
            let mut e: f64 = 0.0;
            for j in 1..n {
                for i in 1..n {
                    let [x, y] = spec.coord(i, j);
                    e = e.max(((d.at(i, j) - exact(x, y)) / exact(x, y)).abs());
                }
            }
            errs.push(e);
        }
        let orders = crate::numeric::observed_orders(&errs);
        assert!(orders.iter().all(|&p| p > 1.9), "{errs:?} {orders:?}");
    }

    #[test]
    fn monotone_operator_on_model_functions() {
        let spec = GridSpec::unit_box(16).unwrap();
        let iso = GridFunction::from_fn(spec, |x, y| 0.5 * (x * x + y * y));
        for w in 1..=3 {
            let m = ma_monotone(&iso, w).unwrap();
            assert!(interior_values(&m).iter().all(|v| (v - 1.0).abs() < 1e-8));
        }
        // degenerate direction (1, -1): diagonal frame gives 2 * floor
        let degenerate = GridFunction::from_fn(spec, |x, y| 0.5 * (x + y) * (x + y));
        let m = ma_monotone(&degenerate, 2).unwrap();
        assert!(interior_values(&m)
            .iter()
            .all(|&v| v <= 2.0 * DEGENERACY_FLOOR * 1.0001));
        // saddle: clamped to floor^2 with the diagonal pair
        let saddle = GridFunction::from_fn(spec, |x, y| 0.5 * (x * x - y * y));
        let m = ma_monotone(&saddle, 2).unwrap();
        assert!(interior_values(&m)
            .iter()
            .all(|&v| (0.0..=DEGENERACY_FLOOR * DEGENERACY_FLOOR * 1.01).contains(&v)));
        assert!(ma_monotone(&saddle, 4).is_err());
    }

    #[test]
    fn monotone_is_nonincreasing_in_negative_parts() {
        // lowering a neighbour value can only decrease the centre value of D_e
        // and thus the operator; raising the centre likewise.
        let spec = GridSpec::unit_box(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = GridFunction::from_fn(spec, |x, y| x * x + 0.7 * y * y + 0.3 * x * y);
        let base = ma_monotone(&u, 3).unwrap();
        for _ in 0..50 {
            let i = rng.random_range(2..9);
            let j = rng.random_range(2..9);
            let mut w = u.clone();
            let k = spec.idx(i, j);
            w.values_mut()[k] += 1e-3;
            let m = ma_monotone(&w, 3).unwrap();
            assert!(m.at(i, j) <= base.at(i, j) + 1e-12);
        }
    }

    #[test]
    fn central_and_monotone_agree_on_smooth_convex() {
        let spec = GridSpec::unit_box(64).unwrap();
        let u = GridFunction::from_fn(spec, |x, y| (0.5 * (x * x + y * y)).exp());
        let a = ma_det(&u);
        let b = ma_monotone(&u, 3).unwrap();
        let mut diff: f64 = 0.0;
        for j in 2..=62 {
            for i in 2..=62 {
                diff = diff.max((a.at(i, j) - b.at(i, j)).abs() / a.at(i, j));
            }
        }
        // the knight frames resolve the eigenframe only to O(angle^2)
        assert!(diff < 0.05, "{diff}");
    }

    #[test]
    fn conservative_determinant_sums_exactly() {
        let spec = GridSpec::unit_torus(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = GridFunction::new(
            spec,
            (0..spec.len()).map(|_| rng.random_range(-1e-3..1e-3)).collect(),
        )
        .unwrap();
        let base = [[2.0, 0.3], [0.3, 0.7]];
        let d = ma_det_conservative(&w, &base).unwrap();
        let avg = pairwise_sum(d.values()) / spec.len() as f64;
        let det_m = 2.0 * 0.7 - 0.09;
        assert!((avg - det_m).abs() < 1e-12, "{}", avg - det_m);

        let q = GridSpec::unit_box(8).unwrap();
        assert!(ma_det_conservative(&GridFunction::zeros(q), &base).is_err());
    }
}
