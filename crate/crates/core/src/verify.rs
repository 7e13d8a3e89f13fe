//! The acceptance suite: twelve self-contained checks, each producing a
//! pass/fail verdict, a one-line summary and plain-text artifacts.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::brenier::{
    linearization_residual, push_forward_check, solve_brenier_torus, torus_distance, CostGradientMap, DensityField,
};
use crate::dirichlet::{
    check_affine_invariance, check_quadratic_dilation, random_invariance_maps, solve_dirichlet,
    AffineMap, ConvexSolution, InvarianceReport, SolverOptions,
};
use crate::error::Result;
use crate::grid::{
    cell_integral, gradient_image_volume, ma_det, ma_det_conservative, GridFunction, GridSpec,
    Region,
};
use crate::homogenization::{liouville_check, solve_corrector, CorrectorOptions, QuadraticForm};
use crate::io::{atomic_write, fmt_real, write_grid, write_trajectory, TrajectoryRow};
use crate::jko::{decay_rate, run_flow, w2_1d, Density1D, FlowConfig, Functional};
use crate::numeric::{observed_orders, pairwise_sum};
use crate::periodic::PeriodicStart;
use crate::transport::{
    brute_force_assignment, check_cyclical_monotonicity, correlation_duality_check,
    random_cloud, recover_potential, solve_assignment, solve_transport, PointCloud,
};
use crate::vorticity::{run_simulation, shear_array, DtPolicy, VorticityState};

pub const CRITERIA: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Run every check at its stated size only.
    pub quick: bool,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            quick: true,
            seed: 2024,
        }
    }
}

/// A named output file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub summary: String,
    pub seconds: f64,
    pub artifacts: Vec<Artifact>,
}

impl Outcome {
    /// Verdict line without timing, stable across runs.
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.summary
        )
    }
}

pub fn title(id: usize) -> &'static str {
    match id {
        1 => "Monge-Ampere manufactured solution",
        2 => "determinant integral vs gradient image",
        3 => "affine, translation and dilation invariance",
        4 => "discrete assignment exactness",
        5 => "correlation/cost duality",
        6 => "periodic Brenier map vs 1D oracle",
        7 => "periodic corrector",
        8 => "Liouville blow-down",
        9 => "Monge-Ampere vorticity",
        10 => "linearization slope",
        11 => "JKO decay",
        12 => "determinism",
        _ => "unknown",
    }
}

struct Check {
    passed: bool,
    summary: String,
    artifacts: Vec<Artifact>,
}

fn artifact(name: &str, contents: String) -> Artifact {
    Artifact {
        name: name.to_string(),
        contents,
    }
}

/// Runs one criterion. Solver errors count as failures.
pub fn run_criterion(id: usize, opts: &VerifyOptions) -> Outcome {
    let start = Instant::now();
    let result = match id {
        1 => manufactured(opts),
        2 => divergence_structure(),
        3 => invariances(opts),
        4 => assignment_exactness(opts),
        5 => duality(opts),
        6 => brenier_oracle(opts),
        7 => corrector(),
        8 => blowdown(),
        9 => vorticity(),
        10 => linearization(),
        11 => jko_decay(opts),
        12 => determinism(opts),
        _ => Ok(Check {
            passed: false,
            summary: format!("no criterion {id}"),
            artifacts: Vec::new(),
        }),
    };
    let seconds = start.elapsed().as_secs_f64();
    let mut check = result.unwrap_or_else(|e| Check {
        passed: false,
        summary: format!("error: {e}"),
        artifacts: Vec::new(),
    });
    let budget = match id {
        1 => Some(60.0),
        9 => Some(120.0),
        _ => None,
    };
    if let Some(b) = budget {
        if seconds > b {
            check.passed = false;
            check.summary.push_str(&format!("; over the {b:.0} s budget"));
        }
    }
    Outcome {
        id,
        title: title(id),
        passed: check.passed,
        summary: check.summary,
        seconds,
        artifacts: check.artifacts,
    }
}

/// Runs all criteria in order, reporting each as it finishes, and writes
/// the artifacts plus `report.txt` into `out` when given.
pub fn verify_all(
    opts: &VerifyOptions,
    out: Option<&Path>,
    mut report: impl FnMut(&Outcome),
) -> Result<Vec<Outcome>> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let mut outcomes = Vec::with_capacity(CRITERIA);
    for id in 1..=CRITERIA {
        let o = run_criterion(id, opts);
        report(&o);
        if let Some(dir) = out {
            for a in &o.artifacts {
                atomic_write(&dir.join(&a.name), a.contents.as_bytes())?;
            }
        }
        outcomes.push(o);
    }
    if let Some(dir) = out {
        let mut text = format!("seed {} quick {}\n", opts.seed, opts.quick);
        for o in &outcomes {
            text.push_str(&o.line());
            text.push('\n');
        }
        atomic_write(&dir.join("report.txt"), text.as_bytes())?;
    }
    Ok(outcomes)
}

fn exp_problem(n: usize) -> Result<(GridFunction, GridFunction)> {
    let spec = GridSpec::unit_box(n)?;
    let f = GridFunction::from_fn(spec, |x, y| (1.0 + x * x + y * y) * (x * x + y * y).exp());
    let g = GridFunction::from_fn(spec, |x, y| (0.5 * (x * x + y * y)).exp());
    Ok((f, g))
}

fn manufactured(opts: &VerifyOptions) -> Result<Check> {
    let sizes: &[usize] = if opts.quick { &[16, 32, 64] } else { &[16, 32, 64, 128] };
    let mut errs = Vec::new();
    let mut residual: f64 = 0.0;
    let mut finest = None;
    for &n in sizes {
        let (f, g) = exp_problem(n)?;
        let sol = solve_dirichlet(&f, &g, &SolverOptions::default())?;
        residual = residual.max(sol.residual_sup);
        errs.push(sol.u.sup_distance(&g)?);
        if n == 64 {
            finest = Some(sol.u);
        }
    }
    let orders = observed_orders(&errs);
    let mut csv = String::from("n,error,order\n");
    for (k, (&n, e)) in sizes.iter().zip(&errs).enumerate() {
        let ord = if k == 0 { String::new() } else { fmt_real(orders[k - 1]) };
        let _ = writeln!(csv, "{n},{},{ord}", fmt_real(*e));
    }
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    let listed: Vec<String> = errs.iter().map(|e| format!("{e:.3e}")).collect();
    let mut artifacts = vec![artifact("c01_errors.csv", csv)];
    if let Some(u) = finest {
        artifacts.push(artifact("c01_solution_n64.grid", write_grid(&u)));
    }
    Ok(Check {
        passed: min_order >= 1.8 && residual <= 1e-8,
        summary: format!("sup errors [{}], minimum order {min_order:.3} (>= 1.8)", listed.join(", ")),
        artifacts,
    })
}

fn divergence_structure() -> Result<Check> {
    let spec = GridSpec::unit_box(64)?;
    let interior = Region::interior(spec, 1)?;
    let fields: [(&str, fn(f64, f64) -> f64); 3] = [
        ("separable_cosine", |x, y| {
            x * x + 0.5 * y * y + 0.01 * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos())
        }),
        ("separable_exponential", |x, y| x.exp() + 0.5 * (2.0 * y).exp()),
        ("log_sum_exp", |x, y| (x.exp() + y.exp()).ln() + 0.5 * (x * x + y * y)),
    ];
    let mut csv = String::from("field,integral,volume,relative\n");
    let mut worst: f64 = 0.0;
    for (name, f) in fields {
        let u = GridFunction::from_fn(spec, f);
        let vol = gradient_image_volume(&u, &interior)?;
        let int = cell_integral(&ma_det(&u), &interior)?;
        let rel = (int - vol).abs() / vol;
        worst = worst.max(rel);
        let _ = writeln!(csv, "{name},{},{},{}", fmt_real(int), fmt_real(vol), fmt_real(rel));
    }
    Ok(Check {
        passed: worst <= 0.05,
        summary: format!("worst relative gap {worst:.3e} over 3 fields (<= 5%)"),
        artifacts: vec![artifact("c02_volumes.csv", csv)],
    })
}

fn invariances(opts: &VerifyOptions) -> Result<Check> {
    let (f, g) = exp_problem(64)?;
    let sol: ConvexSolution = solve_dirichlet(&f, &g, &SolverOptions::default())?;
    let mut csv = String::from("kind,a11,a12,a21,a22,b1,b2,residual,tol\n");
    let mut all = true;
    let mut worst: f64 = 0.0;
    let mut record = |kind: &str, m: &AffineMap, rep: InvarianceReport| {
        all &= rep.passed();
        worst = worst.max(rep.residual_sup / rep.tol_inv);
        let vals = [m.a[0][0], m.a[0][1], m.a[1][0], m.a[1][1], m.b[0], m.b[1], rep.residual_sup, rep.tol_inv];
        let cells: Vec<String> = vals.iter().map(|v| fmt_real(*v)).collect();
        let _ = writeln!(csv, "{kind},{}", cells.join(","));
    };
    for m in random_invariance_maps(5, opts.seed ^ 0x03) {
        let kind = if m.a == [[1.0, 0.0], [0.0, 1.0]] { "translation" } else { "affine" };
        let rep = check_affine_invariance(&sol, &f, &m)?;
        record(kind, &m, rep);
    }
    let rep = check_quadratic_dilation(&sol, &f, 2.0)?;
    record("dilation", &AffineMap::linear([[2.0, 0.0], [0.0, 2.0]]), rep);
    Ok(Check {
        passed: all,
        summary: format!("5 random unimodular maps, a translation and a dilation; worst residual/tol {worst:.3}"),
        artifacts: vec![artifact("c03_invariance.csv", csv)],
    })
}

fn assignment_exactness(opts: &VerifyOptions) -> Result<Check> {
    let count = if opts.quick { 50 } else { 200 };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x04);
    let mut mismatches = 0;
    let mut non_monotone = 0;
    let mut worst_feas: f64 = 0.0;
    let mut csv = String::from("instance,k,cost,perm\n");
    for inst in 0..count {
        let k = rng.random_range(2..=7);
        let x = random_cloud(k, 2, rng.random())?;
        let y = random_cloud(k, 2, rng.random())?;
        let a = solve_assignment(&x, &y)?;
        let b = brute_force_assignment(&x, &y)?;
        if a.perm != b.perm || (a.total_cost - b.total_cost).abs() > 1e-12 * (1.0 + b.total_cost) {
            mismatches += 1;
        }
        if !check_cyclical_monotonicity(&x, &y, &a, 4)?.monotone {
            non_monotone += 1;
        }
        let pot = recover_potential(&x, &y, &a)?;
        worst_feas = worst_feas.max(pot.feasibility_residual(&x));
        let perm: Vec<String> = a.perm.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(csv, "{inst},{k},{},{}", fmt_real(a.total_cost), perm.join(" "));
    }
    Ok(Check {
        passed: mismatches == 0 && non_monotone == 0 && worst_feas <= 1e-9,
        summary: format!(
            "{count} instances: {mismatches} mismatches, {non_monotone} non-monotone, worst potential violation {worst_feas:.1e}"
        ),
        artifacts: vec![artifact("c04_assignments.csv", csv)],
    })
}

fn weighted_cloud(rng: &mut ChaCha8Rng, k: usize) -> Result<PointCloud> {
    let pts: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.random(), rng.random()]).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total = pairwise_sum(&raw);
    let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // put the rounding remainder on the largest weight
    let rest = 1.0 - pairwise_sum(&w);
    let big = (0..k).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0);
    w[big] += rest;
    PointCloud::new(pts, w)
}

fn duality(opts: &VerifyOptions) -> Result<Check> {
    let count = if opts.quick { 20 } else { 100 };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x05);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let mut csv = String::from("instance,k,max_correlation,min_cost,moments,gap,same_support\n");
    for inst in 0..count {
        let k = rng.random_range(3..=8);
        let x = weighted_cloud(&mut rng, k)?;
        let y = weighted_cloud(&mut rng, k)?;
        let rep = correlation_duality_check(&x, &y)?;
        if !rep.holds(1e-9) {
            failures += 1;
        }
        worst = worst.max(rep.gap);
        let _ = writeln!(
            csv,
            "{inst},{k},{},{},{},{},{}",
            fmt_real(rep.max_correlation),
            fmt_real(rep.min_cost),
            fmt_real(rep.moments),
            fmt_real(rep.gap),
            rep.same_support
        );
    }
    Ok(Check {
        passed: failures == 0,
        summary: format!("{count} weighted instances: {failures} failures, worst gap {worst:.1e} (<= 1e-9)"),
        artifacts: vec![artifact("c05_duality.csv", csv)],
    })
}

/// Inverse distribution function of `1 + 0.2 cos(2 pi y)` on `[0, 1)`.
fn cdf_inverse(s: f64) -> f64 {
    let cdf = |y: f64| y + 0.2 * (2.0 * PI * y).sin() / (2.0 * PI);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn brenier_oracle(opts: &VerifyOptions) -> Result<Check> {
    let spec = GridSpec::unit_torus(256)?;
    let f = DensityField::normalized(GridFunction::constant(spec, 1.0))?;
    let g = DensityField::normalized(GridFunction::from_fn(spec, |_, y| {
        1.0 + 0.2 * (2.0 * PI * y).cos()
    }))?;
    let phi = solve_brenier_torus(&f, &g, &Default::default())?;
    let mut err: f64 = 0.0;
    for k in 0..spec.len() {
        let (i, j) = spec.ij(k);
        let [x, y] = spec.coord(i, j);
        let [tx, ty] = phi.map_node(k);
        err = err.max(torus_distance([tx, ty], [x, cdf_inverse(y)], [1.0, 1.0]));
    }
    let pf = push_forward_check(&phi, &f, &g, 100_000, opts.seed ^ 0x06)?;
    let text = format!(
        "map_sup_error {}\nresidual {}\nkappa {}\npush_forward_l1 {}\npush_forward_bound {}\n",
        fmt_real(err),
        fmt_real(phi.residual_sup),
        fmt_real(phi.kappa),
        fmt_real(pf.l1),
        fmt_real(pf.bound)
    );
    Ok(Check {
        passed: err <= 1e-3 && pf.passed,
        summary: format!(
            "map sup error {err:.2e} (<= 1e-3) at n = 256; push-forward L1 {:.3e} vs bound {:.3e} with 1e5 samples",
            pf.l1, pf.bound
        ),
        artifacts: vec![
            artifact("c06_brenier.txt", text),
            artifact("c06_potential.grid", write_grid(&phi.v)),
        ],
    })
}

fn bump(n: usize, delta: f64) -> Result<GridFunction> {
    Ok(GridFunction::from_fn(GridSpec::unit_torus(n)?, |x, y| {
        1.0 + delta * (2.0 * PI * x).sin() * (2.0 * PI * y).sin()
    }))
}

fn corrector() -> Result<Check> {
    let delta = 0.1;
    let f = bump(64, delta)?;
    let p = QuadraticForm::identity();
    let a = solve_corrector(&f, &p, &CorrectorOptions::default())?;
    let zero = CorrectorOptions {
        start: PeriodicStart::Zero,
        ..Default::default()
    };
    let b = solve_corrector(&f, &p, &zero)?;
    let predicted = delta / (8.0 * PI * PI);
    let rel = (a.w.sup_norm() - predicted).abs() / predicted;
    let agree = a.w.sup_distance(&b.w)?;
    let mean = a.w.mean().abs();
    Ok(Check {
        passed: a.residual_sup <= 1e-8 && rel <= 0.2 && agree <= 1e-7 && mean <= 1e-15,
        summary: format!(
            "residual {:.1e}, sup|w| off the linearized amplitude by {:.1}%, starts differ by {agree:.1e}, |mean| {mean:.1e}",
            a.residual_sup,
            100.0 * rel
        ),
        artifacts: vec![artifact("c07_corrector.grid", write_grid(&a.w))],
    })
}

fn blowdown() -> Result<Check> {
    let c = solve_corrector(&bump(64, 0.1)?, &QuadraticForm::identity(), &Default::default())?;
    let rep = liouville_check(&c, &[0.5, 0.25, 0.125])?;
    let mut csv = String::from("eps,deviation\n");
    for (e, d) in rep.eps.iter().zip(&rep.deviations) {
        let _ = writeln!(csv, "{},{}", fmt_real(*e), fmt_real(*d));
    }
    let ratios_ok = rep.ratios.iter().all(|r| (3.5..=4.5).contains(r));
    Ok(Check {
        passed: ratios_ok && rep.recovery_error <= 1e-3,
        summary: format!(
            "contraction ratios {:.3?} (in [3.5, 4.5]), form recovered within {:.1e} at eps = 1/8",
            rep.ratios, rep.recovery_error
        ),
        artifacts: vec![artifact("c08_blowdown.csv", csv)],
    })
}

/// Runs a stationary array to `t = 1`, returning the trajectory rows, the
/// largest per-step mass drift, `|mean det(I + D^2 psi) - 1|` at the end and
/// the sup drift from the initial density.
fn stationary_run(rho0: &VorticityState) -> Result<(Vec<TrajectoryRow>, f64, f64, f64)> {
    let spec = *rho0.rho.spec();
    let tr = run_simulation(rho0, 1.0, DtPolicy::Cfl(0.45), &Default::default())?;
    let drift = tr.state.rho.sup_distance(&rho0.rho)?;
    let det = ma_det_conservative(&tr.stream.psi, &[[1.0, 0.0], [0.0, 1.0]])?;
    let avg_err = (pairwise_sum(det.values()) / spec.len() as f64 - 1.0).abs();
    let rows = tr.records.iter().map(TrajectoryRow::from).collect();
    Ok((rows, tr.max_step_mass_drift, avg_err, drift))
}

fn vorticity() -> Result<Check> {
    let spec = GridSpec::unit_torus(128)?;
    // both layers are stationary: the velocity runs along the level lines
    let (_, axis) = shear_array(spec, 0.3)?;
    let diagonal = VorticityState::new(
        GridFunction::from_fn(spec, |x, y| 1.0 + 0.3 * (2.0 * PI * (x + y)).cos()),
        0.0,
    )?;
    let (rows_a, mass_a, det_a, drift_a) = stationary_run(&axis)?;
    let (rows_d, mass_d, det_d, drift_d) = stationary_run(&diagonal)?;
    let mass = mass_a.max(mass_d);
    let det = det_a.max(det_d);
    Ok(Check {
        passed: mass <= 1e-12 && det <= 1e-12 && drift_a <= 1e-3 && drift_d <= 1e-3,
        summary: format!(
            "axis and diagonal shear layers over {} and {} steps: mass drift per step {mass:.1e}, |mean det - 1| {det:.1e}, stationary drift {drift_a:.2e} and {drift_d:.2e} (<= 1e-3)",
            rows_a.len() - 1,
            rows_d.len() - 1
        ),
        artifacts: vec![
            artifact("c09_axis_trajectory.csv", write_trajectory(&rows_a)),
            artifact("c09_diagonal_trajectory.csv", write_trajectory(&rows_d)),
        ],
    })
}

fn linearization() -> Result<Check> {
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let mut csv = String::from("case,eps,residual\n");
    let mut ok = true;
    let mut slopes = Vec::new();
    let torus = GridSpec::unit_torus(64)?;
    let wave = GridFunction::from_fn(torus, |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
    for p in [2.0, 4.0] {
        let rep = linearization_residual(&wave, &CostGradientMap::new(p)?, &eps)?;
        let s = rep.slope.unwrap_or(f64::NAN);
        ok &= (1.9..=2.1).contains(&s);
        slopes.push(s);
        for (e, r) in rep.eps.iter().zip(&rep.residuals) {
            let _ = writeln!(csv, "p{p},{},{}", fmt_real(*e), fmt_real(*r));
        }
    }
    let quad = GridFunction::from_fn(GridSpec::unit_box(16)?, |x, y| {
        0.5 * (1.5 * x * x + 0.8 * x * y + 0.6 * y * y)
    });
    let rep = linearization_residual(&quad, &CostGradientMap::new(2.0)?, &eps)?;
    let det = 1.5 * 0.6 - 0.16;
    let mut worst: f64 = 0.0;
    for (e, r) in eps.iter().zip(&rep.residuals) {
        worst = worst.max((r - e * e * det).abs() / (e * e));
        let _ = writeln!(csv, "quadratic,{},{}", fmt_real(*e), fmt_real(*r));
    }
    ok &= worst <= 1e-6;
    Ok(Check {
        passed: ok,
        summary: format!(
            "slopes {slopes:.4?} for p = 2, 4 (in [1.9, 2.1]); quadratic identity error {worst:.1e} (<= 1e-6)"
        ),
        artifacts: vec![artifact("c10_linearization.csv", csv)],
    })
}

fn lp_circle_distance(a: &Density1D, b: &Density1D) -> Result<f64> {
    let n = a.len();
    let c: Vec<f64> = (0..n * n)
        .map(|k| {
            let d = ((k / n) as f64 - (k % n) as f64).abs() / n as f64;
            let d = d.min(1.0 - d);
            d * d
        })
        .collect();
    Ok(solve_transport(&c, a.masses(), b.masses())?.cost.sqrt())
}

fn random_density(rng: &mut ChaCha8Rng, n: usize) -> Result<Density1D> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s = pairwise_sum(&raw);
    let mut m: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let rest = 1.0 - pairwise_sum(&m);
    m[0] += rest;
    Density1D::new(m)
}

fn jko_decay(opts: &VerifyOptions) -> Result<Check> {
    let n = 64;
    let start = Density1D::from_fn(n, |x| 1.0 + 0.2 * (2.0 * PI * x).cos())?;
    let cfg = FlowConfig {
        tau: 1e-3,
        functional: Functional::Entropy,
        steps: 50,
        seed: opts.seed ^ 0x0b,
    };
    let traj = run_flow(&start, &cfg)?;
    let eq = Density1D::uniform(n)?;
    let fit = decay_rate(&traj, &eq)?;
    let rate = fit.rate.unwrap_or(f64::NAN);
    let target = 4.0 * PI * PI;
    let gaps_ok = traj.energy_gaps.iter().all(|&g| g >= 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1b);
    let mut lp_err: f64 = 0.0;
    for _ in 0..20 {
        let a = random_density(&mut rng, 8)?;
        let b = random_density(&mut rng, 8)?;
        lp_err = lp_err.max((w2_1d(&a, &b)? - lp_circle_distance(&a, &b)?).abs());
    }
    let mut csv = String::from("step,t,energy,l2_to_uniform\n");
    for (k, d) in traj.densities.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{k},{},{},{}",
            fmt_real(k as f64 * cfg.tau),
            fmt_real(traj.energies[k]),
            fmt_real(d.l2_distance(&eq)?)
        );
    }
    let rel = (rate - target).abs() / target;
    Ok(Check {
        passed: rel <= 0.1 && gaps_ok && lp_err <= 1e-8,
        summary: format!(
            "rate {rate:.3} vs 4 pi^2 = {target:.3} ({:.1}%), energy inequality {} at all 50 steps, LP mismatch {lp_err:.1e}",
            100.0 * rel,
            if gaps_ok { "holds" } else { "fails" }
        ),
        artifacts: vec![artifact("c11_decay.csv", csv)],
    })
}

/// Reruns the seeded checks and compares their artifacts byte for byte.
fn determinism(opts: &VerifyOptions) -> Result<Check> {
    let ids = [3, 4, 5, 6, 11];
    let mut differing = Vec::new();
    let mut digest = String::new();
    for id in ids {
        let a = run_criterion(id, opts);
        let b = run_criterion(id, opts);
        if a.artifacts != b.artifacts || a.summary != b.summary {
            differing.push(id);
        }
        for art in &a.artifacts {
            let _ = writeln!(digest, "{} {:016x}", art.name, fnv1a(art.contents.as_bytes()));
        }
    }
    Ok(Check {
        passed: differing.is_empty(),
        summary: if differing.is_empty() {
            format!("seeded criteria {ids:?} reproduce byte-identical artifacts")
        } else {
            format!("criteria {differing:?} differ between runs")
        },
        artifacts: vec![artifact("c12_digests.txt", digest)],
    })
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}
