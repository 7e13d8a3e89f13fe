//! Periodic correctors `det(M + D^2 w) = f` and quadratic blow-downs of
//! `P + w`.

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec, Topology};
use crate::numeric::pairwise_sum;
use crate::periodic::{solve_periodic_ma, PeriodicOptions, PeriodicStart};
use nalgebra::{Matrix6, Vector6};

/// `P(x) = x^T M x / 2` with `M` symmetric positive definite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticForm {
    m: [[f64; 2]; 2],
}

impl QuadraticForm {
    pub fn new(m: [[f64; 2]; 2]) -> Result<Self> {
        if !m.iter().flatten().all(|v| v.is_finite()) || m[0][1] != m[1][0] {
            return Err(Error::InvalidParameter("matrix must be finite and symmetric".into()));
        }
        let q = QuadraticForm { m };
        if !(m[0][0] > 0.0 && q.det() > 0.0) {
            return Err(Error::InvalidParameter("matrix must be positive definite".into()));
        }
        Ok(q)
    }

    pub fn identity() -> Self {
        QuadraticForm {
            m: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.m
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        0.5 * (self.m[0][0] * x * x + 2.0 * self.m[0][1] * x * y + self.m[1][1] * y * y)
    }
}

#[derive(Clone, Debug)]
pub struct CorrectorField {
    pub w: GridFunction,
    pub form: QuadraticForm,
    pub residual_sup: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectorOptions {
    pub newton: PeriodicOptions,
    pub start: PeriodicStart,
    /// Reject `f` whose cell average differs from `det M`. Disabling it
    /// lets the Newton iteration run into the residual floor.
    pub check_compatibility: bool,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        CorrectorOptions {
            newton: PeriodicOptions::default(),
            start: PeriodicStart::Linearized,
            check_compatibility: true,
        }
    }
}

const COMPATIBILITY_TOL: f64 = 1e-10;

/// Periodic mean-zero `w` with `det(M + D^2 w) = f` on the period cell.
pub fn solve_corrector(
    f: &GridFunction,
    p: &QuadraticForm,
    opts: &CorrectorOptions,
) -> Result<CorrectorField> {
    f.spec().ensure_torus()?;
    let min = f.min();
    if !(min > 0.0) {
        return Err(Error::Positivity { min });
    }
    let average = pairwise_sum(f.values()) / f.spec().len() as f64;
    if opts.check_compatibility && (average - p.det()).abs() > COMPATIBILITY_TOL {
        return Err(Error::Compatibility {
            average,
            expected: p.det(),
        });
    }
    let run = solve_periodic_ma(f, p.matrix(), opts.start, &opts.newton)?;
    Ok(CorrectorField {
        w: run.w,
        form: *p,
        residual_sup: run.residual_sup,
        iterations: run.iterations,
    })
}

/// `P + w` on the box `[0, m]^2`, with `w` extended periodically from its
/// period cell.
pub fn tile_solution(c: &CorrectorField, m: usize) -> Result<GridFunction> {
    if m == 0 {
        return Err(Error::InvalidParameter("tile count must be positive".into()));
    }
    let cell = *c.w.spec();
    let spec = GridSpec::new(
        cell.nx * m,
        cell.ny * m,
        cell.lx * m as f64,
        cell.ly * m as f64,
        Topology::Box,
    )?;
    let mut out = GridFunction::zeros(spec);
    for j in 0..spec.my() {
        for i in 0..spec.mx() {
            let [x, y] = spec.coord(i, j);
            out.values_mut()[spec.idx(i, j)] =
                c.form.eval(x, y) + c.w.at(i % cell.nx, j % cell.ny);
        }
    }
    Ok(out)
}

fn tile_count(eps: f64) -> Result<usize> {
    let m = 1.0 / eps;
    if !(eps > 0.0 && m.is_finite()) || (m - m.round()).abs() > 1e-9 * m || m.round() < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "1/eps must be a positive integer (eps = {eps})"
        )));
    }
    Ok(m.round() as usize)
}

/// `u_eps(x) = eps^2 u(x / eps)` for `u` given on the box `[0, 1/eps]^2`.
///
/// Node values are rescaled in place; the result lives on a box of the
/// same node count with `eps` times the side length.
pub fn quadratic_blowdown(u: &GridFunction, eps: f64) -> Result<GridFunction> {
    let m = tile_count(eps)? as f64;
    let s = *u.spec();
    if s.topology != Topology::Box
        || (s.lx - m).abs() > 1e-12 * m
        || (s.ly - s.lx).abs() > 1e-12 * m
    {
        return Err(Error::SpecMismatch(format!(
            "blow-down of eps = {eps} needs a box of side {m}"
        )));
    }
    let spec = GridSpec::new(s.nx, s.ny, s.lx / m, s.ly / m, Topology::Box)?;
    let e2 = eps * eps;
    GridFunction::new(spec, u.values().iter().map(|v| e2 * v).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiouvilleReport {
    pub eps: Vec<f64>,
    /// `sup |u_eps - P|` for each `eps`.
    pub deviations: Vec<f64>,
    /// Ratios of consecutive deviations.
    pub ratios: Vec<f64>,
    /// Hessian of the quadratic fitted to `u_eps` at the smallest `eps`.
    pub recovered: [[f64; 2]; 2],
    /// `max |recovered - M|` entrywise.
    pub recovery_error: f64,
    /// `sup |u_eps - fit|` at the smallest `eps`.
    pub fit_error: f64,
    /// `eps^2 sup |w| + h^2` at the smallest `eps`.
    pub fit_bound: f64,
}

/// Blows down `P + w` for each `eps` and fits a quadratic at the smallest.
pub fn liouville_check(c: &CorrectorField, eps_list: &[f64]) -> Result<LiouvilleReport> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter("need at least one eps".into()));
    }
    let mut deviations = Vec::new();
    let mut last = None;
    let mut smallest = f64::INFINITY;
    for &eps in eps_list {
        let m = tile_count(eps)?;
        let u = tile_solution(c, m)?;
        let ue = quadratic_blowdown(&u, eps)?;
        let s = *ue.spec();
        let mut dev: f64 = 0.0;
        for j in 0..s.my() {
            for i in 0..s.mx() {
                let [x, y] = s.coord(i, j);
                dev = dev.max((ue.at(i, j) - c.form.eval(x, y)).abs());
            }
        }
        deviations.push(dev);
        if eps < smallest {
            smallest = eps;
            last = Some(ue);
        }
    }
    let ue = last.expect("nonempty list");
    let (coef, fit_error) = fit_quadratic(&ue)?;
    let recovered = [[2.0 * coef[0], coef[1]], [coef[1], 2.0 * coef[2]]];
    let m = c.form.matrix();
    let recovery_error = (0..2)
        .flat_map(|a| (0..2).map(move |b| (a, b)))
        .fold(0.0f64, |e, (a, b)| e.max((recovered[a][b] - m[a][b]).abs()));
    let h = ue.spec().h();
    Ok(LiouvilleReport {
        eps: eps_list.to_vec(),
        ratios: deviations.windows(2).map(|w| w[0] / w[1]).collect(),
        deviations,
        recovered,
        recovery_error,
        fit_error,
        fit_bound: smallest * smallest * c.w.sup_norm() + h * h,
    })
}

/// Least-squares `a x^2 + b xy + c y^2 + d x + e y + f` over all nodes, in
/// coordinates centred on the domain. Returns `(a, b, c)` and the sup misfit.
fn fit_quadratic(u: &GridFunction) -> Result<([f64; 3], f64)> {
    let s = *u.spec();
    let (cx, cy) = (0.5 * s.lx, 0.5 * s.ly);
    let basis = |x: f64, y: f64| {
        let (x, y) = (x - cx, y - cy);
        Vector6::new(x * x, x * y, y * y, x, y, 1.0)
    };
    let mut ata = Matrix6::<f64>::zeros();
    let mut atb = Vector6::<f64>::zeros();
    for j in 0..s.my() {
        for i in 0..s.mx() {
            let [x, y] = s.coord(i, j);
            let phi = basis(x, y);
            ata += phi * phi.transpose();
            atb += phi * u.at(i, j);
        }
    }
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::Degenerate("quadratic fit matrix is singular".into()))?;
    let sol = chol.solve(&atb);
    let mut misfit: f64 = 0.0;
    for j in 0..s.my() {
        for i in 0..s.mx() {
            let [x, y] = s.coord(i, j);
            misfit = misfit.max((basis(x, y).dot(&sol) - u.at(i, j)).abs());
        }
    }
    // the centring shifts only the linear and constant terms
    Ok(([sol[0], sol[1], sol[2]], misfit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bump(n: usize, delta: f64, det: f64) -> GridFunction {
        GridFunction::from_fn(GridSpec::unit_torus(n).unwrap(), |x, y| {
            det + delta * (2.0 * PI * x).sin() * (2.0 * PI * y).sin()
        })
    }

    #[test]
    fn form_validation() {
        assert!(QuadraticForm::new([[1.0, 0.0], [0.0, -1.0]]).is_err());
        assert!(QuadraticForm::new([[1.0, 0.2], [0.1, 1.0]]).is_err());
        let q = QuadraticForm::new([[2.0, 0.5], [0.5, 1.0]]).unwrap();
        assert!((q.det() - 1.75).abs() < 1e-15);
        assert!((q.eval(1.0, 2.0) - 0.5 * (2.0 + 2.0 + 4.0)).abs() < 1e-15);
    }

    #[test]
    fn uniform_data_has_zero_corrector() {
        let f = bump(32, 0.0, 1.0);
        let c = solve_corrector(&f, &QuadraticForm::identity(), &Default::default()).unwrap();
        assert_eq!(c.w.sup_norm(), 0.0);
    }

    #[test]
    fn corrector_matches_linearized_amplitude() {
        let delta = 0.1;
        let f = bump(64, delta, 1.0);
        let c = solve_corrector(&f, &QuadraticForm::identity(), &Default::default()).unwrap();
        assert!(c.residual_sup <= 1e-8);
        assert!(c.w.mean().abs() <= 1e-12);
        let predicted = delta / (8.0 * PI * PI);
        let rel = (c.w.sup_norm() - predicted).abs() / predicted;
        assert!(rel <= 0.2, "{} vs {predicted}", c.w.sup_norm());
    }

    #[test]
    fn anisotropic_corrector_converges() {
        let f = bump(64, 0.1, 1.0);
        let p = QuadraticForm::new([[2.0, 0.0], [0.0, 0.5]]).unwrap();
        let c = solve_corrector(&f, &p, &Default::default()).unwrap();
        assert!(c.residual_sup <= 1e-8);
    }

    #[test]
    fn starts_agree() {
        let f = bump(64, 0.1, 1.0);
        let p = QuadraticForm::identity();
        let a = solve_corrector(&f, &p, &Default::default()).unwrap();
        let zero = CorrectorOptions {
            start: PeriodicStart::Zero,
            ..Default::default()
        };
        let b = solve_corrector(&f, &p, &zero).unwrap();
        assert!(a.w.sup_distance(&b.w).unwrap() <= 1e-7);
    }

    #[test]
    fn shift_equivariance() {
        let n = 32;
        let f = |x: f64, y: f64| 1.0 + 0.15 * (2.0 * PI * x).cos() * (2.0 * PI * (x + y)).sin();
        let spec = GridSpec::unit_torus(n).unwrap();
        let p = QuadraticForm::identity();
        let s = (5, 3);
        let a = solve_corrector(&GridFunction::from_fn(spec, f), &p, &Default::default()).unwrap();
        let shifted = GridFunction::from_fn(spec, |x, y| {
            f(x + s.0 as f64 / n as f64, y + s.1 as f64 / n as f64)
        });
        let b = solve_corrector(&shifted, &p, &Default::default()).unwrap();
        for j in 0..n {
            for i in 0..n {
                let k = spec.offset(i, j, s.0, s.1).unwrap();
                assert!((b.w.at(i, j) - a.w.values()[k]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn compatibility_is_required() {
        let f = bump(32, 0.1, 1.05);
        let p = QuadraticForm::identity();
        assert!(matches!(
            solve_corrector(&f, &p, &Default::default()),
            Err(Error::Compatibility { .. })
        ));
        let loose = CorrectorOptions {
            check_compatibility: false,
            newton: PeriodicOptions {
                max_iters: 20,
                ..Default::default()
            },
            ..Default::default()
        };
        match solve_corrector(&f, &p, &loose) {
            Err(Error::NoConvergence { residual, .. }) => assert!(residual >= 0.05 - 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn blowdown_of_quadratic_is_exact() {
        let p = QuadraticForm::new([[1.5, 0.25], [0.25, 0.8]]).unwrap();
        let zero = CorrectorField {
            w: GridFunction::zeros(GridSpec::unit_torus(16).unwrap()),
            form: p,
            residual_sup: 0.0,
            iterations: 0,
        };
        for m in [1, 2, 4] {
            let u = tile_solution(&zero, m).unwrap();
            let ue = quadratic_blowdown(&u, 1.0 / m as f64).unwrap();
            let s = *ue.spec();
            for j in 0..s.my() {
                for i in 0..s.mx() {
                    let [x, y] = s.coord(i, j);
                    assert!((ue.at(i, j) - p.eval(x, y)).abs() < 1e-14);
                }
            }
        }
        let u = tile_solution(&zero, 2).unwrap();
        assert!(quadratic_blowdown(&u, 0.3).is_err());
        assert!(quadratic_blowdown(&u, 0.25).is_err());
        let rep = liouville_check(&zero, &[0.5, 0.25]).unwrap();
        assert!(rep.recovery_error < 1e-10 && rep.fit_error < 1e-10);
    }

    #[test]
    fn blowdown_contracts_and_recovers_form() {
        for m in [[[1.0, 0.0], [0.0, 1.0]], [[2.0, 0.0], [0.0, 0.5]]] {
            let p = QuadraticForm::new(m).unwrap();
            let c = solve_corrector(&bump(64, 0.1, 1.0), &p, &Default::default()).unwrap();
            let rep = liouville_check(&c, &[0.5, 0.25, 0.125]).unwrap();
            for (e, d) in rep.eps.iter().zip(&rep.deviations) {
                let exact = e * e * c.w.sup_norm();
                assert!((d - exact).abs() <= 1e-12, "{d} vs {exact}");
            }
            assert!(rep.ratios.iter().all(|r| (3.5..=4.5).contains(r)), "{:?}", rep.ratios);
            assert!(rep.recovery_error <= 1e-3, "{rep:?}");
            assert!(rep.fit_error <= rep.fit_bound, "{rep:?}");
        }
    }
}
