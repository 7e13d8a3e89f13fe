//! Transport maps between densities on the torus and the operators of the
//! strictly convex cost `|z|^p / p`.

use crate::error::{Error, Result};
use crate::grid::interp::BicubicSpline;
use crate::grid::{gradient_field, GridFunction, GridSpec, Topology};
use crate::numeric::{fit_line, pairwise_sum};
use crate::periodic::{PeriodicMa, PeriodicOptions, Target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// A probability density sampled on a grid.
///
/// Mass is the cell sum `h^2 sum rho` on a torus and the trapezoid rule on
/// a box.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    rho: GridFunction,
    min: f64,
}

const MASS_TOL: f64 = 1e-10;

/// Total mass of a grid function (cell sum on a torus, trapezoid on a box).
pub fn grid_mass(g: &GridFunction) -> f64 {
    let s = g.spec();
    let h2 = s.h() * s.h();
    match s.topology {
        Topology::Torus => pairwise_sum(g.values()) * h2,
        Topology::Box => {
            let mut w = Vec::with_capacity(s.len());
            for j in 0..s.my() {
                for i in 0..s.mx() {
                    let wx = if i == 0 || i == s.nx { 0.5 } else { 1.0 };
                    let wy = if j == 0 || j == s.ny { 0.5 } else { 1.0 };
                    w.push(wx * wy * g.at(i, j));
                }
            }
            pairwise_sum(&w) * h2
        }
    }
}

impl DensityField {
    pub fn new(rho: GridFunction) -> Result<Self> {
        let min = rho.min();
        if !rho.values().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("density has non-finite values".into()));
        }
        if min < 0.0 {
            return Err(Error::Positivity { min });
        }
        let mass = grid_mass(&rho);
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!(
                "density must have unit mass (got {mass})"
            )));
        }
        Ok(DensityField { rho, min })
    }

    /// Rescales a nonnegative field to unit mass.
    pub fn normalized(rho: GridFunction) -> Result<Self> {
        let mass = grid_mass(&rho);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cannot normalize a field of mass {mass}"
            )));
        }
        Self::new(rho.map(|v| v / mass))
    }

    pub fn field(&self) -> &GridFunction {
        &self.rho
    }

    pub fn spec(&self) -> &GridSpec {
        self.rho.spec()
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn is_positive(&self) -> bool {
        self.min > 0.0
    }

    pub fn mass(&self) -> f64 {
        grid_mass(&self.rho)
    }
}

/// Potential `phi(x) = |x|^2 / 2 + v(x)` with periodic mean-zero `v`.
#[derive(Clone, Debug)]
pub struct BrenierPotential {
    pub v: GridFunction,
    /// Normalization of the discrete equation `g(x + grad v) det(I + D^2 v) = kappa f`.
    pub kappa: f64,
    pub residual_sup: f64,
    pub iterations: usize,
    grad: [Vec<f64>; 2],
}

impl BrenierPotential {
    /// Wraps a periodic field as a potential, subtracting its mean.
    pub fn from_v(v: GridFunction) -> Result<Self> {
        v.spec().ensure_torus()?;
        let m = v.mean();
        let v = v.map(|x| x - m);
        let (gx, gy) = gradient_field(&v);
        Ok(BrenierPotential {
            v,
            kappa: 1.0,
            residual_sup: f64::NAN,
            iterations: 0,
            grad: [gx, gy],
        })
    }

    pub fn spec(&self) -> &GridSpec {
        self.v.spec()
    }

    /// Nodal gradient of `v`.
    pub fn grad_v(&self) -> (&[f64], &[f64]) {
        (&self.grad[0], &self.grad[1])
    }

    /// Image of node `k` under `x + grad v`, not wrapped.
    pub fn map_node(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.spec().ij(k);
        let [x, y] = self.spec().coord(i, j);
        [x + self.grad[0][k], y + self.grad[1][k]]
    }

    /// `x + grad v(x)` with bilinear interpolation of the nodal gradient.
    pub fn map(&self, x: f64, y: f64) -> [f64; 2] {
        let gx = bilinear_periodic(&self.grad[0], self.spec(), x, y);
        let gy = bilinear_periodic(&self.grad[1], self.spec(), x, y);
        [x + gx, y + gy]
    }
}

fn bilinear_periodic(values: &[f64], spec: &GridSpec, x: f64, y: f64) -> f64 {
    let h = spec.h();
    let (nx, ny) = (spec.nx, spec.ny);
    let p = (x / h).rem_euclid(nx as f64);
    let q = (y / h).rem_euclid(ny as f64);
    let i0 = (p.floor() as usize).min(nx - 1);
    let j0 = (q.floor() as usize).min(ny - 1);
    let (t, s) = (p - i0 as f64, q - j0 as f64);
    let (i1, j1) = ((i0 + 1) % nx, (j0 + 1) % ny);
    let at = |i: usize, j: usize| values[spec.idx(i, j)];
    (1.0 - t) * (1.0 - s) * at(i0, j0)
        + t * (1.0 - s) * at(i1, j0)
        + (1.0 - t) * s * at(i0, j1)
        + t * s * at(i1, j1)
}

struct BrenierTarget<'a> {
    spec: GridSpec,
    f: &'a [f64],
    g: BicubicSpline,
    kappa: f64,
    g_at_map: Vec<f64>,
}

impl Target for BrenierTarget<'_> {
    fn eval(&mut self, w: &[f64]) -> Result<Vec<f64>> {
        let s = self.spec;
        let v = GridFunction::new(s, w.to_vec())?;
        let (gx, gy) = gradient_field(&v);
        let mut ratio = vec![0.0; s.len()];
        for k in 0..s.len() {
            let (i, j) = s.ij(k);
            let [x, y] = s.coord(i, j);
            let gt = self.g.value(x + gx[k], y + gy[k]);
            if !(gt > 0.0) {
                return Err(Error::Positivity { min: gt });
            }
            self.g_at_map[k] = gt;
            ratio[k] = self.f[k] / gt;
        }
        self.kappa = s.len() as f64 / pairwise_sum(&ratio);
        Ok(ratio.into_iter().map(|r| self.kappa * r).collect())
    }

    fn measure(&self, _w: &[f64], r: &[f64]) -> f64 {
        r.iter()
            .zip(&self.g_at_map)
            .fold(0.0, |m, (a, b)| m.max((a * b).abs()))
    }
}

/// Solves `g(x + grad v) det(I + D^2 v) = kappa f` for periodic `v`.
///
/// Newton on the determinant with the factor `g(x + grad v)` lagged by one
/// iterate. The constant `kappa` keeps the discrete problem solvable and
/// tends to 1 with the mesh width.
pub fn solve_brenier_torus(
    f: &DensityField,
    g: &DensityField,
    opts: &PeriodicOptions,
) -> Result<BrenierPotential> {
    let spec = *f.spec();
    spec.ensure_torus()?;
    spec.ensure_same(g.spec())?;
    for d in [f, g] {
        if !d.is_positive() {
            return Err(Error::Positivity { min: d.min() });
        }
    }
    let ma = PeriodicMa::new(spec, [[1.0, 0.0], [0.0, 1.0]])?;
    let mut target = BrenierTarget {
        spec,
        f: f.field().values(),
        g: BicubicSpline::new(g.field()),
        kappa: 1.0,
        g_at_map: vec![1.0; spec.len()],
    };
    let start: Vec<f64> = f
        .field()
        .values()
        .iter()
        .zip(g.field().values())
        .map(|(a, b)| a / b - 1.0)
        .collect();
    let w0 = ma.linearized(&start);
    let run = ma.solve(w0, &mut target, opts)?;
    let mut phi = BrenierPotential::from_v(run.w)?;
    phi.kappa = target.kappa;
    phi.residual_sup = run.residual_sup;
    phi.iterations = run.iterations;
    Ok(phi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PushForwardReport {
    pub samples: usize,
    pub bins: usize,
    /// L1 distance between the sample histogram and the cell masses of `g`.
    pub l1: f64,
    /// `sqrt(bins / samples) + 2h`.
    pub bound: f64,
    pub passed: bool,
}

pub const MIN_SAMPLES: usize = 10_000;
const CHUNK: usize = 4096;
const MAX_BINS_PER_SIDE: usize = 16;

/// Monte Carlo check that `x + grad v` pushes `f` forward to `g`.
///
/// Samples are drawn cell by cell from `f` with uniform jitter, mapped, and
/// counted in square bins made of blocks of `g`'s node cells (at most 16 per
/// side). Chunk `c` of 4096 samples uses stream `c` of a ChaCha8 generator
/// seeded with `seed`, so the result does not depend on the thread count.
pub fn push_forward_check(
    phi: &BrenierPotential,
    f: &DensityField,
    g: &DensityField,
    samples: usize,
    seed: u64,
) -> Result<PushForwardReport> {
    let spec = *phi.spec();
    spec.ensure_same(f.spec())?;
    spec.ensure_same(g.spec())?;
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "push-forward check needs at least {MIN_SAMPLES} samples (got {samples})"
        )));
    }
    let h = spec.h();
    let mut cdf = Vec::with_capacity(spec.len());
    let mut acc = 0.0;
    for &v in f.field().values() {
        acc += v;
        cdf.push(acc);
    }
    let total = acc;
    let bx = largest_divisor_at_most(spec.nx, MAX_BINS_PER_SIDE);
    let by = largest_divisor_at_most(spec.ny, MAX_BINS_PER_SIDE);
    let (sx, sy) = (spec.nx / bx, spec.ny / by);
    let bin_of = |x: f64, y: f64| {
        let i = ((x / h).round() as i64).rem_euclid(spec.nx as i64) as usize;
        let j = ((y / h).round() as i64).rem_euclid(spec.ny as i64) as usize;
        (j / sy) * bx + i / sx
    };
    let chunks = samples.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut local = vec![0u64; bx * by];
            let m = CHUNK.min(samples - c * CHUNK);
            for _ in 0..m {
                let u: f64 = rng.random::<f64>() * total;
                let k = cdf.partition_point(|&c| c <= u).min(spec.len() - 1);
                let (i, j) = spec.ij(k);
                let [x0, y0] = spec.coord(i, j);
                let x = x0 + (rng.random::<f64>() - 0.5) * h;
                let y = y0 + (rng.random::<f64>() - 0.5) * h;
                let [tx, ty] = phi.map(x, y);
                local[bin_of(tx, ty)] += 1;
            }
            local
        })
        .reduce(
            || vec![0u64; bx * by],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(p, q)| *p += q);
                a
            },
        );
    let mut expected = vec![0.0; bx * by];
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            expected[(j / sy) * bx + i / sx] += g.field().at(i, j) * h * h;
        }
    }
    let l1: f64 = counts
        .iter()
        .zip(&expected)
        .map(|(&c, e)| (c as f64 / samples as f64 - e).abs())
        .sum();
    let bins = bx * by;
    let bound = (bins as f64 / samples as f64).sqrt() + 2.0 * h;
    Ok(PushForwardReport {
        samples,
        bins,
        l1,
        bound,
        passed: l1 <= 3.0 * bound,
    })
}

fn largest_divisor_at_most(n: usize, cap: usize) -> usize {
    (1..=cap.min(n)).rev().find(|d| n % d == 0).unwrap_or(1)
}

/// Modulus of continuity of the map over dyadic distances.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularityReport {
    pub radii: Vec<f64>,
    /// Largest `|grad phi(x + r e) - grad phi(x)|` over nodes and axis
    /// directions `e`.
    pub phi_increments: Vec<f64>,
    pub v_increments: Vec<f64>,
    pub phi_exponent: Option<f64>,
    /// Hoelder exponent of `grad v` from a log-log fit; `None` when some
    /// increment vanishes.
    pub v_exponent: Option<f64>,
}

/// Tabulates increments of `grad phi` at `r = h, 2h, 4h, ...` up to an
/// eighth of the shorter period.
pub fn regularity_probe(phi: &BrenierPotential) -> RegularityReport {
    let spec = *phi.spec();
    let h = spec.h();
    let (gx, gy) = phi.grad_v();
    let mut radii = Vec::new();
    let mut phi_inc = Vec::new();
    let mut v_inc = Vec::new();
    let mut step = 1usize;
    while step * 8 <= spec.nx.min(spec.ny) {
        let r = step as f64 * h;
        let mut mp: f64 = 0.0;
        let mut mv: f64 = 0.0;
        for k in 0..spec.len() {
            let (i, j) = spec.ij(k);
            for (di, dj) in [(step as isize, 0), (0, step as isize)] {
                let l = spec.offset(i, j, di, dj).unwrap();
                let dv = [gx[l] - gx[k], gy[l] - gy[k]];
                let e = [di as f64 * h, dj as f64 * h];
                mv = mv.max(dv[0].hypot(dv[1]));
                mp = mp.max((dv[0] + e[0]).hypot(dv[1] + e[1]));
            }
        }
        radii.push(r);
        phi_inc.push(mp);
        v_inc.push(mv);
        step *= 2;
    }
    let exponent = |inc: &[f64]| -> Option<f64> {
        if inc.len() < 2 || inc.iter().any(|&d| !(d > 1e-300)) {
            return None;
        }
        let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let ys: Vec<f64> = inc.iter().map(|d| d.ln()).collect();
        fit_line(&xs, &ys).map(|l| l.slope)
    };
    RegularityReport {
        phi_exponent: exponent(&phi_inc),
        v_exponent: exponent(&v_inc),
        radii,
        phi_increments: phi_inc,
        v_increments: v_inc,
    }
}

/// The cost `C(z) = |z|^p / p` with `p > 1` and its conjugate exponent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostGradientMap {
    p: f64,
}

impl CostGradientMap {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("cost exponent must exceed 1 (got {p})")));
        }
        Ok(CostGradientMap { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// `grad C(z) = |z|^(p-2) z`.
    pub fn grad_cost(&self, z: &[f64]) -> Vec<f64> {
        power_map(z, self.p)
    }

    /// `F(z) = |z|^(q-2) z`, the gradient of `|z|^q / q`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        power_map(z, self.q())
    }
}

fn power_map(z: &[f64], e: f64) -> Vec<f64> {
    let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return vec![0.0; z.len()];
    }
    let s = r.powf(e - 2.0);
    z.iter().map(|v| v * s).collect()
}

/// Gradient of the convex conjugate of the cost, `F(z) = |z|^(q-2) z`.
pub fn cost_conjugate_gradient(c: &CostGradientMap, z: &[f64]) -> Result<Vec<f64>> {
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("argument must be finite".into()));
    }
    Ok(c.apply(z))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearizationReport {
    pub eps: Vec<f64>,
    /// `R(eps) = sup |det(I + eps DF) - 1 - eps div F|` over retained nodes.
    pub residuals: Vec<f64>,
    /// `sup |det DF|` over retained nodes, the coefficient of `eps^2`.
    pub det_sup: f64,
    /// Least-squares slope of `log R` against `log eps`.
    pub slope: Option<f64>,
    /// Set when `R` vanishes identically.
    pub exact: bool,
    /// Nodes dropped because `F` is not differentiable at `grad psi = 0`.
    pub excluded: Vec<usize>,
    pub passed: bool,
}

const SLOPE_BAND: (f64, f64) = (1.9, 2.1);

/// Expansion of `det(I + eps D(F(grad psi)))` in `eps`.
///
/// Gradients are centered differences (one-sided of second order at box
/// edges). For `q < 2` nodes whose stencil touches a vanishing gradient are
/// excluded and listed in the report.
pub fn linearization_residual(
    psi: &GridFunction,
    c: &CostGradientMap,
    eps_list: &[f64],
) -> Result<LinearizationReport> {
    if eps_list.len() < 4 {
        return Err(Error::InvalidParameter("need at least 4 values of eps".into()));
    }
    if !eps_list.iter().all(|e| *e > 0.0 && e.is_finite())
        || eps_list.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidParameter(
            "eps values must be positive and strictly decreasing".into(),
        ));
    }
    let spec = *psi.spec();
    let (px, py) = gradient_field(psi);
    let n = spec.len();
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    for k in 0..n {
        let v = c.apply(&[px[k], py[k]]);
        fx[k] = v[0];
        fy[k] = v[1];
    }
    let mut keep = vec![true; n];
    let mut excluded = Vec::new();
    if c.q() < 2.0 {
        let gmax = px.iter().zip(&py).fold(0.0f64, |m, (a, b)| m.max(a.hypot(*b)));
        let small: Vec<bool> = (0..n)
            .map(|k| px[k].hypot(py[k]) <= 1e-8 * gmax.max(f64::MIN_POSITIVE))
            .collect();
        for k in 0..n {
            let (i, j) = spec.ij(k);
            let touches = (-1..=1).any(|di| {
                (-1..=1).any(|dj| spec.offset(i, j, di, dj).is_some_and(|l| small[l]))
            });
            if touches {
                keep[k] = false;
                excluded.push(k);
            }
        }
    }
    let gfx = GridFunction::new(spec, fx)?;
    let gfy = GridFunction::new(spec, fy)?;
    let (a, b) = gradient_field(&gfx);
    let (cc, d) = gradient_field(&gfy);
    let mut det_sup: f64 = 0.0;
    for k in (0..n).filter(|&k| keep[k]) {
        det_sup = det_sup.max((a[k] * d[k] - b[k] * cc[k]).abs());
    }
    let residuals: Vec<f64> = eps_list
        .iter()
        .map(|&e| {
            (0..n).filter(|&k| keep[k]).fold(0.0f64, |m, k| {
                let full = (1.0 + e * a[k]) * (1.0 + e * d[k]) - e * b[k] * e * cc[k];
                m.max((full - 1.0 - e * (a[k] + d[k])).abs())
            })
        })
        .collect();
    let exact = residuals.iter().all(|&r| r == 0.0);
    let slope = if residuals.iter().all(|&r| r > 0.0) {
        let xs: Vec<f64> = eps_list.iter().map(|e| e.ln()).collect();
        let ys: Vec<f64> = residuals.iter().map(|r| r.ln()).collect();
        fit_line(&xs, &ys).map(|l| l.slope)
    } else {
        None
    };
    let passed = exact || slope.is_some_and(|s| s >= SLOPE_BAND.0 && s <= SLOPE_BAND.1);
    Ok(LinearizationReport {
        eps: eps_list.to_vec(),
        residuals,
        det_sup,
        slope,
        exact,
        excluded,
        passed,
    })
}

/// Largest wrapped distance between two points on a torus of the given size.
pub(crate) fn torus_distance(a: [f64; 2], b: [f64; 2], l: [f64; 2]) -> f64 {
    let d = |x: f64, p: f64| {
        let r = x.rem_euclid(p);
        r.min(p - r)
    };
    d(a[0] - b[0], l[0]).hypot(d(a[1] - b[1], l[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn density(n: usize, f: impl Fn(f64, f64) -> f64) -> DensityField {
        DensityField::normalized(GridFunction::from_fn(GridSpec::unit_torus(n).unwrap(), f)).unwrap()
    }

    #[test]
    fn density_validation() {
        let spec = GridSpec::unit_torus(8).unwrap();
        assert!(DensityField::new(GridFunction::constant(spec, 1.0)).is_ok());
        assert!(DensityField::new(GridFunction::constant(spec, 2.0)).is_err());
        let mut neg = GridFunction::constant(spec, 1.0);
        neg.values_mut()[3] = -0.1;
        assert!(matches!(DensityField::normalized(neg), Err(Error::Positivity { .. })));
        let b = GridSpec::unit_box(8).unwrap();
        assert!((DensityField::new(GridFunction::constant(b, 1.0)).unwrap().mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_densities_give_identity() {
        let f = density(32, |x, y| 1.0 + 0.3 * (2.0 * PI * x).sin() * (2.0 * PI * y).cos());
        let phi = solve_brenier_torus(&f, &f, &Default::default()).unwrap();
        assert_eq!(phi.iterations, 0);
        assert_eq!(phi.v.sup_norm(), 0.0);
    }

    #[test]
    fn vanishing_density_is_rejected() {
        let f = density(16, |x, _| (2.0 * PI * x).sin().powi(2));
        let g = density(16, |_, _| 1.0);
        assert!(matches!(
            solve_brenier_torus(&f, &g, &Default::default()),
            Err(Error::Positivity { .. })
        ));
    }

    /// Root of `G(t) = t + 0.2 sin(2 pi t) / (2 pi) = s`, the CDF of
    /// `1 + 0.2 cos(2 pi t)`.
    fn cdf_inverse(s: f64) -> f64 {
        let mut t = s;
        for _ in 0..60 {
            let g = t + 0.2 * (2.0 * PI * t).sin() / (2.0 * PI) - s;
            let dg = 1.0 + 0.2 * (2.0 * PI * t).cos();
            t -= g / dg;
        }
        t
    }

    #[test]
    fn matches_cdf_inversion() {
        let n = 256;
        let f = density(n, |_, _| 1.0);
        let g = density(n, |_, y| 1.0 + 0.2 * (2.0 * PI * y).cos());
        let phi = solve_brenier_torus(&f, &g, &Default::default()).unwrap();
        assert!(phi.residual_sup <= 1e-10);
        assert!((phi.kappa - 1.0).abs() < 1e-4, "{}", phi.kappa);
        let mut err: f64 = 0.0;
        for k in 0..phi.spec().len() {
            let (i, j) = phi.spec().ij(k);
            let [x, y] = phi.spec().coord(i, j);
            let [tx, ty] = phi.map_node(k);
            err = err.max((tx - x).abs()).max((ty - cdf_inverse(y)).abs());
        }
        assert!(err <= 1e-3, "{err}");
        let rep = push_forward_check(&phi, &f, &g, 100_000, 7).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn push_forward_accepts_identity_and_flags_wrong_map() {
        let n = 64;
        let one = density(n, |_, _| 1.0);
        let id = BrenierPotential::from_v(GridFunction::zeros(GridSpec::unit_torus(n).unwrap())).unwrap();
        let rep = push_forward_check(&id, &one, &one, 20_000, 1).unwrap();
        assert!(rep.passed && rep.l1 < rep.bound, "{rep:?}");
        assert!(push_forward_check(&id, &one, &one, 9_999, 1).is_err());

        let g = density(n, |_, y| 1.0 + 0.6 * (2.0 * PI * y).cos());
        let phi = solve_brenier_torus(&one, &g, &Default::default()).unwrap();
        assert!(push_forward_check(&phi, &one, &g, 100_000, 3).unwrap().passed);
        let wrong = BrenierPotential::from_v(phi.v.map(|x| 2.0 * x)).unwrap();
        let rep = push_forward_check(&wrong, &one, &g, 100_000, 3).unwrap();
        assert!(!rep.passed, "{rep:?}");
    }

    #[test]
    fn push_forward_is_reproducible() {
        let f = density(32, |x, _| 1.0 + 0.1 * (2.0 * PI * x).cos());
        let g = density(32, |_, y| 1.0 + 0.1 * (2.0 * PI * y).cos());
        let phi = solve_brenier_torus(&f, &g, &Default::default()).unwrap();
        let a = push_forward_check(&phi, &f, &g, 30_000, 99).unwrap();
        let b = push_forward_check(&phi, &f, &g, 30_000, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.passed, "{a:?}");
    }

    #[test]
    fn regularity_of_identity_and_smooth_maps() {
        let spec = GridSpec::unit_torus(64).unwrap();
        let id = BrenierPotential::from_v(GridFunction::zeros(spec)).unwrap();
        let rep = regularity_probe(&id);
        assert_eq!(rep.radii.len(), 4);
        for (r, d) in rep.radii.iter().zip(&rep.phi_increments) {
            assert!((r - d).abs() < 1e-15);
        }
        assert!((rep.phi_exponent.unwrap() - 1.0).abs() < 1e-12);
        assert!(rep.v_exponent.is_none());

        let f = density(64, |x, _| 1.0 + 0.1 * (2.0 * PI * x).cos());
        let g = density(64, |_, y| 1.0 + 0.1 * (2.0 * PI * y).cos());
        let phi = solve_brenier_torus(&f, &g, &Default::default()).unwrap();
        let rep = regularity_probe(&phi);
        assert!(rep.v_exponent.unwrap() >= 0.9, "{rep:?}");
    }

    #[test]
    fn rough_target_is_observed() {
        let f = density(32, |_, _| 1.0);
        let g = density(32, |x, _| if x < 0.5 { 1.2 } else { 0.8 });
        if let Ok(phi) = solve_brenier_torus(&f, &g, &Default::default()) {
            let rep = regularity_probe(&phi);
            assert!(rep.v_exponent.is_some());
        }
    }

    #[test]
    fn cost_gradients() {
        let two = CostGradientMap::new(2.0).unwrap();
        assert_eq!(cost_conjugate_gradient(&two, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let four = CostGradientMap::new(4.0).unwrap();
        let a = cost_conjugate_gradient(&four, &[1.0, 0.0]).unwrap();
        let b = cost_conjugate_gradient(&four, &[8.0, 0.0]).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-15 && a[1] == 0.0);
        assert!((b[0] - 2.0).abs() < 1e-14 && b[1] == 0.0);
        assert!(CostGradientMap::new(1.0).is_err());
        assert!(CostGradientMap::new(0.5).is_err());
        assert!(cost_conjugate_gradient(&two, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn linearization_on_quadratics_is_exact() {
        let spec = GridSpec::unit_box(16).unwrap();
        let psi = GridFunction::from_fn(spec, |x, y| 0.5 * (1.5 * x * x + 0.8 * x * y + 0.6 * y * y));
        let c = CostGradientMap::new(2.0).unwrap();
        let eps = [1e-1, 1e-2, 1e-3, 1e-4];
        let rep = linearization_residual(&psi, &c, &eps).unwrap();
        let det = 1.5 * 0.6 - 0.16;
        assert!((rep.det_sup - det).abs() < 1e-10);
        for (e, r) in eps.iter().zip(&rep.residuals) {
            assert!((r - e * e * det).abs() <= 1e-6 * e * e, "{e} {r}");
        }
        assert!((rep.slope.unwrap() - 2.0).abs() < 1e-6);
        assert!(rep.passed);
    }

    #[test]
    fn linearization_for_p4_and_zero() {
        let spec = GridSpec::unit_torus(64).unwrap();
        let psi = GridFunction::from_fn(spec, |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
        let c = CostGradientMap::new(4.0).unwrap();
        let eps = [1e-1, 1e-2, 1e-3, 1e-4];
        let rep = linearization_residual(&psi, &c, &eps).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(!rep.excluded.is_empty());

        let zero = linearization_residual(&GridFunction::zeros(spec), &c, &eps).unwrap();
        assert!(zero.exact && zero.slope.is_none() && zero.passed);
        assert!(linearization_residual(&psi, &c, &eps[..3]).is_err());
        assert!(linearization_residual(&psi, &c, &[1e-1, 1e-3, 1e-2, 1e-4]).is_err());
    }

    fn wrapped(a: [f64; 2], b: [f64; 2]) -> f64 {
        torus_distance(a, b, [1.0, 1.0])
    }

    #[test]
    fn inverse_consistency() {
        let n = 64;
        let f = density(n, |x, y| 1.0 + 0.2 * (2.0 * PI * x).cos() + 0.1 * (2.0 * PI * y).sin());
        let g = density(n, |x, y| 1.0 + 0.2 * (2.0 * PI * (x + y)).sin());
        let t = solve_brenier_torus(&f, &g, &Default::default()).unwrap();
        let s = solve_brenier_torus(&g, &f, &Default::default()).unwrap();
        let h = 1.0 / n as f64;
        let mut worst: f64 = 0.0;
        for k in 0..t.spec().len() {
            let (i, j) = t.spec().ij(k);
            let [tx, ty] = t.map_node(k);
            worst = worst.max(wrapped(s.map(tx, ty), t.spec().coord(i, j)));
        }
        assert!(worst <= 10.0 * h, "{worst}");
    }

    #[test]
    fn translation_equivariance() {
        // shifting both densities by a lattice vector conjugates the map
        let n = 64;
        let tau = [0.25, 0.125];
        let fa = |x: f64, y: f64| 1.0 + 0.2 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos();
        let gb = |x: f64, y: f64| 1.0 + 0.2 * (2.0 * PI * y).sin() + 0.1 * (2.0 * PI * x).cos();
        let a = solve_brenier_torus(&density(n, fa), &density(n, gb), &Default::default()).unwrap();
        let b = solve_brenier_torus(
            &density(n, |x, y| fa(x - tau[0], y - tau[1])),
            &density(n, |x, y| gb(x - tau[0], y - tau[1])),
            &Default::default(),
        )
        .unwrap();
        let spec = *a.spec();
        let (si, sj) = ((tau[0] * n as f64) as isize, (tau[1] * n as f64) as isize);
        let mut worst: f64 = 0.0;
        for k in 0..spec.len() {
            let (i, j) = spec.ij(k);
            let l = spec.offset(i, j, si, sj).unwrap();
            let p = a.map_node(k);
            worst = worst.max(wrapped([p[0] + tau[0], p[1] + tau[1]], b.map_node(l)));
        }
        assert!(worst <= 5.0 / n as f64, "{worst}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn maps_are_monotone(a in -0.3f64..0.3, b in -0.3f64..0.3, ph in 0.0f64..1.0) {
            let n = 32;
            let f = density(n, |x, y| 1.0 + a * (2.0 * PI * (x + ph)).cos() * (2.0 * PI * y).sin());
            let g = density(n, |x, y| 1.0 + b * (2.0 * PI * (x - y)).cos());
            let phi = solve_brenier_torus(&f, &g, &Default::default()).unwrap();
            prop_assert!(phi.residual_sup <= 1e-10);
            let len = phi.spec().len();
            for k in (0..len).step_by(7) {
                for l in (0..len).step_by(11) {
                    if k == l { continue; }
                    let (i, j) = phi.spec().ij(k);
                    let (p, q) = phi.spec().ij(l);
                    let (x, y) = (phi.spec().coord(i, j), phi.spec().coord(p, q));
                    let (tx, ty) = (phi.map_node(k), phi.map_node(l));
                    let s = (tx[0] - ty[0]) * (x[0] - y[0]) + (tx[1] - ty[1]) * (x[1] - y[1]);
                    prop_assert!(s > 0.0);
                }
            }
        }

        #[test]
        fn conjugacy_identity(p in 1.1f64..6.0, z0 in -5.0f64..5.0, z1 in -5.0f64..5.0) {
            let c = CostGradientMap::new(p).unwrap();
            let z = [z0, z1];
            let back = c.apply(&c.grad_cost(&z));
            prop_assert!((back[0] - z0).abs() <= 1e-10 * (1.0 + z0.abs()));
            prop_assert!((back[1] - z1).abs() <= 1e-10 * (1.0 + z1.abs()));
        }
    }
}
