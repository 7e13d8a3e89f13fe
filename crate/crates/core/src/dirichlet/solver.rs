use super::stencil::{laplacian_system, Central, Discretization, Layout, Monotone};
use crate::error::{Error, Result};
use crate::grid::{
    is_discretely_convex, monotone_frames, GridFunction, Region, CONVEXITY_DIRECTIONS,
};
use crate::linalg::{bicgstab, DirichletConstSolver};

/// Discretization a solution satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Central,
    Monotone,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Central => "central",
            Scheme::Monotone => "monotone",
        }
    }
}

/// Which discretization to attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeChoice {
    /// Central Newton, falling back to the monotone scheme.
    Auto,
    Central,
    Monotone,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Line-search shrink factor.
    pub damping: f64,
    /// Asserted pinching `1/sigma <= f <= sigma`.
    pub pinching: Option<f64>,
    pub scheme: SchemeChoice,
    /// Width of the monotone stencil (1, 2 or 3).
    pub stencil_width: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iters: 50,
            damping: 0.5,
            pinching: None,
            scheme: SchemeChoice::Auto,
            stencil_width: 3,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter(format!("tol must be positive (got {})", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "damping must lie in (0, 1) (got {})",
                self.damping
            )));
        }
        if let Some(s) = self.pinching {
            if !(s >= 1.0) {
                return Err(Error::InvalidParameter(format!("pinching sigma must be >= 1 (got {s})")));
            }
        }
        monotone_frames(self.stencil_width)?;
        Ok(())
    }
}

/// A convex grid solution of `det D^2 u = f`.
#[derive(Clone, Debug)]
pub struct ConvexSolution {
    pub u: GridFunction,
    /// Sup of `|MA_h u - f|` over the unknown nodes.
    pub residual_sup: f64,
    pub newton_iters: usize,
    pub scheme: Scheme,
    /// Tolerance the solve was run with.
    pub tol: f64,
    /// Residual sup-norm at the start and after every accepted Newton step
    /// of the final scheme.
    pub residual_history: Vec<f64>,
}

/// Solves `det D^2 u = f` on the box interior with `u = g` on the boundary.
pub fn solve_dirichlet(
    f: &GridFunction,
    g: &GridFunction,
    opts: &SolverOptions,
) -> Result<ConvexSolution> {
    let region = Region::interior(*f.spec(), 1)?;
    solve_dirichlet_in(f, g, &region, opts)
}

/// Solves `det D^2 u = f` at the nodes of `region`, taking `u = g` at every
/// other node.
///
/// A curved domain given this way is approximated by its staircase of
/// nodes, which limits accuracy to first order in `h`; monotone stencils
/// are restricted to the unknowns and the layer of fixed nodes touching
/// them. [`solve_dirichlet_curved`] resolves the boundary instead.
pub fn solve_dirichlet_in(
    f: &GridFunction,
    g: &GridFunction,
    region: &Region,
    opts: &SolverOptions,
) -> Result<ConvexSolution> {
    let spec = *f.spec();
    check_inputs(f, region, opts, 1)?;
    spec.ensure_same(g.spec())?;
    let nodes: Vec<usize> = region.nodes().collect();
    let layout = Layout {
        spec,
        unknown: region.mask().to_vec(),
        walls: vec![None; nodes.len()],
        reach: stencil_reach(region),
        nodes,
    };
    solve_layout(&layout, f, g.clone(), region, opts)
}

/// Solves `det D^2 u = f` on the domain `{phi < 0}` with `u = g` on its
/// boundary. Stencils that cross the boundary are cut at the crossing
/// (located by bisection on `phi`) and use the value of `g` there, so the
/// scheme stays exact on quadratics up to the boundary. The domain's nodes
/// must keep a two-node margin from the box edge.
pub fn solve_dirichlet_curved(
    f: &GridFunction,
    phi: impl Fn(f64, f64) -> f64,
    g: impl Fn(f64, f64) -> f64,
    opts: &SolverOptions,
) -> Result<ConvexSolution> {
    let spec = *f.spec();
    let region = Region::from_predicate(spec, |x, y| phi(x, y) < 0.0)?;
    check_inputs(f, &region, opts, 2)?;
    let nodes: Vec<usize> = region.nodes().collect();
    let walls = nodes
        .iter()
        .map(|&k| Layout::cut_arms(&spec, k, region.mask(), &phi, &g))
        .collect();
    let layout = Layout {
        spec,
        unknown: region.mask().to_vec(),
        walls,
        reach: region.mask().to_vec(),
        nodes,
    };
    let fixed = GridFunction::from_fn(spec, |x, y| if phi(x, y) < 0.0 { 0.0 } else { g(x, y) });
    solve_layout(&layout, f, fixed, &region, opts)
}

fn check_inputs(f: &GridFunction, region: &Region, opts: &SolverOptions, margin: usize) -> Result<()> {
    opts.validate()?;
    let spec = *f.spec();
    if spec.is_torus() {
        return Err(Error::SpecMismatch("Dirichlet problems need a box grid".into()));
    }
    spec.ensure_same(region.spec())?;
    if region.min_margin() < margin {
        return Err(Error::InvalidParameter(format!(
            "unknown nodes must keep a {margin}-node margin from the box edge"
        )));
    }
    for k in region.nodes() {
        let v = f.values()[k];
        if !(v > 0.0) {
            return Err(Error::Ellipticity { node: k, value: v });
        }
        if let Some(s) = opts.pinching {
            if v < 1.0 / s || v > s {
                return Err(Error::InvalidParameter(format!(
                    "f = {v:.6e} at node {k} violates the pinching bound sigma = {s}"
                )));
            }
        }
    }
    Ok(())
}

fn solve_layout(
    layout: &Layout,
    f: &GridFunction,
    fixed: GridFunction,
    region: &Region,
    opts: &SolverOptions,
) -> Result<ConvexSolution> {
    let u0 = poisson_start(layout, f, fixed);
    let check = convexity_region(region)?;
    let mono = Monotone {
        frames: monotone_frames(opts.stencil_width)?,
    };
    let central = |start: GridFunction| newton(layout, f, start, opts, &Central);
    let monotone = |mut start: GridFunction| {
        let scale = layout.nodes.iter().map(|&k| f.values()[k]).fold(0.0, f64::max);
        mono.relax(layout, f, &mut start, RELAX_TARGET * scale);
        newton(layout, f, start, opts, &mono)
    };
    let sol = match opts.scheme {
        SchemeChoice::Central => central(u0).into_result(Scheme::Central, opts.tol)?,
        SchemeChoice::Monotone => monotone(u0).into_result(Scheme::Monotone, opts.tol)?,
        SchemeChoice::Auto => {
            let run = central(u0.clone());
            if run.converged && is_discretely_convex(&run.u, &check).is_ok() {
                return run.into_result(Scheme::Central, opts.tol);
            }
            let used = run.iters;
            let start = if run.final_convex { run.u } else { u0 };
            let mut mrun = monotone(start);
            mrun.iters += used;
            mrun.into_result(Scheme::Monotone, opts.tol)?
        }
    };
    is_discretely_convex(&sol.u, &check)?;
    Ok(sol)
}

/// Relative residual at which Gauss-Seidel relaxation hands over to Newton.
const RELAX_TARGET: f64 = 0.05;

/// Nodes of `region` at which every convexity stencil that fits in the box
/// ends at an unknown or at a box-boundary node. Stencils reaching into the
/// fixed exterior of a masked domain are left out; for a full box this is
/// the whole region.
fn convexity_region(region: &Region) -> Result<Region> {
    let spec = *region.spec();
    let mut mask = vec![false; spec.len()];
    for k in region.nodes() {
        let (i, j) = spec.ij(k);
        mask[k] = CONVEXITY_DIRECTIONS.iter().all(|&(di, dj)| {
            [1isize, -1].iter().all(|&s| match spec.offset(i, j, s * di, s * dj) {
                Some(n) => {
                    let (a, b) = spec.ij(n);
                    region.contains(n) || spec.margin(a, b) == 0
                }
                None => true,
            })
        });
    }
    Region::from_mask(spec, mask)
}

/// Unknowns plus the layer of fixed nodes touching them (8-neighbours).
fn stencil_reach(region: &Region) -> Vec<bool> {
    let spec = *region.spec();
    let mut reach = region.mask().to_vec();
    for k in region.nodes() {
        let (i, j) = spec.ij(k);
        for dj in -1..=1 {
            for di in -1..=1 {
                if let Some(n) = spec.offset(i, j, di, dj) {
                    reach[n] = true;
                }
            }
        }
    }
    reach
}

/// Poisson start `Delta u = 2 sqrt(f)` with the fixed values.
fn poisson_start(layout: &Layout, f: &GridFunction, fixed: GridFunction) -> GridFunction {
    let spec = layout.spec;
    let (mat, rhs) = laplacian_system(layout, fixed.values(), |k| 2.0 * f.values()[k].sqrt());
    let pre = DirichletConstSolver::new(spec.nx, spec.ny, spec.h(), 1.0, 1.0);
    let mut x = vec![0.0; layout.slots()];
    bicgstab(
        |a, b| mat.apply(a, b),
        |r, z| masked_precond(layout, &pre, r, z),
        &rhs,
        &mut x,
        1e-13,
        1000,
    );
    let mut u = fixed;
    for &k in &layout.nodes {
        u.values_mut()[k] = x[layout.slot(k)];
    }
    u
}

fn masked_precond(layout: &Layout, pre: &DirichletConstSolver, r: &[f64], z: &mut [f64]) {
    let mut rr = r.to_vec();
    for (q, v) in rr.iter_mut().enumerate() {
        if !layout.unknown[layout.slot_node(q)] {
            *v = 0.0;
        }
    }
    pre.solve(&rr, z);
    for (q, v) in z.iter_mut().enumerate() {
        if !layout.unknown[layout.slot_node(q)] {
            *v = 0.0;
        }
    }
}

struct NewtonRun {
    u: GridFunction,
    sup: f64,
    iters: usize,
    converged: bool,
    final_convex: bool,
    history: Vec<f64>,
}

impl NewtonRun {
    fn into_result(self, scheme: Scheme, tol: f64) -> Result<ConvexSolution> {
        if !self.converged {
            return Err(Error::NoConvergence {
                iterations: self.iters,
                residual: self.sup,
            });
        }
        Ok(ConvexSolution {
            u: self.u,
            residual_sup: self.sup,
            newton_iters: self.iters,
            scheme,
            tol,
            residual_history: self.history,
        })
    }
}

/// Smallest line-search step tried before the solve is declared stalled.
const MIN_STEP: f64 = 1e-4;

/// Damped Newton iteration.
///
/// A step is accepted only when it lowers the residual sup-norm (with a
/// small sufficient-decrease margin), or keeps the sup-norm and lowers the
/// l2 norm (needed on plateaus of the clamped monotone operator), and, for
/// the central scheme, keeps the Hessian positive definite at every unknown
/// where it already was. The iteration stops when no step down to
/// `MIN_STEP` is admissible.
fn newton(
    layout: &Layout,
    f: &GridFunction,
    start: GridFunction,
    opts: &SolverOptions,
    disc: &dyn Discretization,
) -> NewtonRun {
    let spec = layout.spec;
    let mut u = start;
    let mut ev = disc.evaluate(layout, f, &u);
    let mut history = vec![ev.sup];
    let mut iters = 0;
    let slots = layout.slots();
    while ev.sup > opts.tol && iters < opts.max_iters {
        iters += 1;
        let (mat, rhs) = disc.linearize(layout, f, &u, &ev);
        let (a, c) = preconditioner_coefficients(layout, &u);
        let pre = DirichletConstSolver::new(spec.nx, spec.ny, spec.h(), a, c);
        let mut w = vec![0.0; slots];
        bicgstab(
            |x, y| mat.apply(x, y),
            |r, z| masked_precond(layout, &pre, r, z),
            &rhs,
            &mut w,
            1e-12,
            500,
        );

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= MIN_STEP {
            let mut cand = u.clone();
            let vals = cand.values_mut();
            for &k in &layout.nodes {
                vals[k] += alpha * w[layout.slot(k)];
            }
            if vals.iter().all(|v| v.is_finite()) {
                let cev = disc.evaluate(layout, f, &cand);
                let leaves_cone = disc.guards_convexity()
                    && ev.convex.iter().zip(&cev.convex).any(|(&was, &is)| was && !is);
                let decrease = 1.0 - 1e-4 * alpha;
                let progress = cev.sup <= decrease * ev.sup
                    || (cev.sup <= ev.sup && cev.l2 <= decrease * ev.l2);
                if !leaves_cone && progress {
                    accepted = Some((cand, cev));
                    break;
                }
            }
            alpha *= opts.damping;
        }
        match accepted {
            Some((cand, cev)) => {
                u = cand;
                ev = cev;
                history.push(ev.sup);
            }
            None => break,
        }
    }
    NewtonRun {
        converged: ev.sup <= opts.tol,
        final_convex: ev.convex.iter().all(|&c| c),
        u,
        sup: ev.sup,
        iters,
        history,
    }
}

/// Averaged cofactor coefficients `(mean u_yy, mean u_xx)` for the
/// constant-coefficient preconditioner.
fn preconditioner_coefficients(layout: &Layout, u: &GridFunction) -> (f64, f64) {
    let v = u.values();
    let n = layout.nodes.len().max(1) as f64;
    let (mut a, mut c) = (0.0, 0.0);
    for p in 0..layout.nodes.len() {
        if let (Some(dx), Some(dy)) = (layout.dir_diff(v, p, (1, 0)), layout.dir_diff(v, p, (0, 1))) {
            a += dy.value.max(0.0);
            c += dx.value.max(0.0);
        }
    }
    let (a, c) = (a / n, c / n);
    let floor = 1e-3 * a.max(c).max(1e-8);
    (a.max(floor), c.max(floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ma_det, GridSpec};
    use crate::numeric::observed_orders;
    use proptest::prelude::*;

    fn exp_problem(n: usize) -> (GridFunction, GridFunction) {
        let spec = GridSpec::unit_box(n).unwrap();
        // det D^2 exp(r^2/2) = (1 + r^2) exp(r^2) by direct differentiation
        let f = GridFunction::from_fn(spec, |x, y| (1.0 + x * x + y * y) * (x * x + y * y).exp());
        let g = GridFunction::from_fn(spec, |x, y| (0.5 * (x * x + y * y)).exp());
        (f, g)
    }

    #[test]
    fn quadratic_is_reproduced() {
        let spec = GridSpec::unit_box(16).unwrap();
        let f = GridFunction::constant(spec, 1.0);
        let g = GridFunction::from_fn(spec, |x, y| 0.5 * (x * x + y * y));
        let sol = solve_dirichlet(&f, &g, &SolverOptions::default()).unwrap();
        assert_eq!(sol.scheme, Scheme::Central);
        assert!(sol.u.sup_distance(&g).unwrap() <= 1e-10);
        for k in Region::full(spec).nodes() {
            let (i, j) = spec.ij(k);
            if spec.margin(i, j) == 0 {
                assert_eq!(sol.u.values()[k], g.values()[k]);
            }
        }
    }

    #[test]
    fn manufactured_exponential_is_second_order() {
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let (f, g) = exp_problem(n);
            let sol = solve_dirichlet(&f, &g, &SolverOptions::default()).unwrap();
            assert!(sol.residual_sup <= 1e-8);
            let hist = &sol.residual_history;
            assert!(hist.windows(2).all(|w| w[1] <= w[0]), "{hist:?}");
            errs.push(sol.u.sup_distance(&g).unwrap());
        }
        let orders = observed_orders(&errs);
        assert!(orders.iter().all(|&p| p >= 1.8), "{errs:?} {orders:?}");
    }

    #[test]
    fn masked_disc_has_interior_minimum() {
        let spec = GridSpec::unit_box(32).unwrap();
        let disc = Region::from_predicate(spec, |x, y| {
            (x - 0.5).powi(2) + (y - 0.5).powi(2) < 0.4 * 0.4
        })
        .unwrap();
        let f = GridFunction::constant(spec, 1.0);
        let g = GridFunction::zeros(spec);
        for scheme in [SchemeChoice::Central, SchemeChoice::Monotone] {
            let opts = SolverOptions {
                scheme,
                ..Default::default()
            };
            let u = solve_dirichlet_in(&f, &g, &disc, &opts).unwrap().u;
            let (kmin, vmin) = u
                .values()
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |b, (k, &v)| if v < b.1 { (k, v) } else { b });
            assert!(disc.contains(kmin) && vmin < 0.0);
            assert!(disc.nodes().all(|k| u.values()[k] < 0.0));
        }
    }

    #[test]
    fn curved_disc_schemes_agree() {
        let n = 32;
        let spec = GridSpec::unit_box(n).unwrap();
        let h = spec.h();
        let phi = |x: f64, y: f64| (x - 0.5).powi(2) + (y - 0.5).powi(2) - 0.16;
        let f = GridFunction::constant(spec, 1.0);
        let run = |scheme| {
            let opts = SolverOptions {
                scheme,
                ..Default::default()
            };
            solve_dirichlet_curved(&f, phi, |_, _| 0.0, &opts).unwrap()
        };
        let central = run(SchemeChoice::Central);
        let mono = run(SchemeChoice::Monotone);
        assert_eq!(central.scheme, Scheme::Central);
        assert_eq!(mono.scheme, Scheme::Monotone);
        let diff = central.u.sup_distance(&mono.u).unwrap();
        assert!(diff <= 5.0 * h * h, "{diff}");
        // the exact solution is the quadratic (|x - c|^2 - R^2) / 2
        let exact = GridFunction::from_fn(spec, |x, y| 0.5 * phi(x, y).min(0.0));
        assert!(central.u.sup_distance(&exact).unwrap() < 1e-8);
    }

    #[test]
    fn input_errors() {
        let spec = GridSpec::unit_box(8).unwrap();
        let g = GridFunction::zeros(spec);
        let mut f = GridFunction::constant(spec, 1.0);
        f.values_mut()[spec.idx(3, 3)] = -1.0;
        assert!(matches!(
            solve_dirichlet(&f, &g, &SolverOptions::default()),
            Err(Error::Ellipticity { .. })
        ));
        let f = GridFunction::constant(spec, 3.0);
        let pinched = SolverOptions {
            pinching: Some(2.0),
            ..Default::default()
        };
        assert!(matches!(solve_dirichlet(&f, &g, &pinched), Err(Error::InvalidParameter(_))));
        let bad = SolverOptions {
            tol: 0.0,
            ..Default::default()
        };
        assert!(solve_dirichlet(&f, &g, &bad).is_err());
        let t = GridSpec::unit_torus(8).unwrap();
        assert!(solve_dirichlet(&GridFunction::constant(t, 1.0), &GridFunction::zeros(t), &Default::default()).is_err());
    }

    #[test]
    fn stagnation_reports_last_residual() {
        let (f, g) = exp_problem(16);
        let opts = SolverOptions {
            max_iters: 1,
            scheme: SchemeChoice::Central,
            ..Default::default()
        };
        match solve_dirichlet(&f, &g, &opts) {
            Err(Error::NoConvergence { iterations, residual }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 1e-8 && residual.is_finite());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn monotone_solution_satisfies_its_scheme() {
        let (f, g) = exp_problem(16);
        let opts = SolverOptions {
            scheme: SchemeChoice::Monotone,
            ..Default::default()
        };
        let sol = solve_dirichlet(&f, &g, &opts).unwrap();
        let m = crate::grid::ma_monotone(&sol.u, 3).unwrap();
        let spec = *f.spec();
        for k in Region::interior(spec, 1).unwrap().nodes() {
            assert!((m.values()[k] - f.values()[k]).abs() <= 1e-8);
        }
        // it stays close to the central solution
        let central = solve_dirichlet(&f, &g, &SolverOptions::default()).unwrap();
        assert!(central.u.sup_distance(&sol.u).unwrap() < 1e-2);
        assert!(ma_det(&central.u).values().iter().all(|v| v.is_finite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn comparison_principle(seed in 0u64..1000, lift in 0.0f64..0.004, shift in 0.0f64..0.05) {
            use rand::{Rng, SeedableRng};
            let spec = GridSpec::unit_box(8).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = GridFunction::constant(spec, 1.0);
            let mut g1 = GridFunction::from_fn(spec, |x, y| 0.5 * (x * x + y * y));
            let mut g2 = g1.clone();
            for j in 0..=8 {
                for i in 0..=8 {
                    if spec.margin(i, j) == 0 {
                        let k = spec.idx(i, j);
                        // jitter stays well below h^2 so the data admit convex solutions
                        let a: f64 = rng.random_range(-0.002..0.002);
                        let b: f64 = rng.random_range(0.0..=lift);
                        g1.values_mut()[k] += a;
                        g2.values_mut()[k] += a + b + shift;
                    }
                }
            }
            let opts = SolverOptions { scheme: SchemeChoice::Monotone, ..Default::default() };
            let u1 = solve_dirichlet(&f, &g1, &opts).unwrap();
            let u2 = solve_dirichlet(&f, &g2, &opts).unwrap();
            for (a, b) in u1.u.values().iter().zip(u2.u.values()) {
                prop_assert!(*a <= *b + 1e-8);
            }
        }
    }
}
