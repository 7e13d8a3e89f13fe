mod fields;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ampere_core::brenier::{push_forward_check, solve_brenier_torus, DensityField};
use ampere_core::dirichlet::{
    check_affine_invariance, check_quadratic_dilation, random_invariance_maps, solve_dirichlet,
    SolverOptions,
};
use ampere_core::grid::Topology;
use ampere_core::homogenization::{liouville_check, solve_corrector, CorrectorOptions, QuadraticForm};
use ampere_core::io::{
    atomic_write, fmt_real, read_cloud, write_grid, write_plan, write_trajectory, RunConfig,
    TrajectoryRow,
};
use ampere_core::jko::{run_flow, Density1D, FlowConfig, Functional};
use ampere_core::periodic::PeriodicStart;
use ampere_core::transport::{solve_assignment, solve_plan};
use ampere_core::verify::{verify_all, VerifyOptions};
use ampere_core::vorticity::{
    run_simulation, DtPolicy, SimulationOptions, VelocityConvention, VorticityState,
};
use ampere_core::{Error, Result};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NO_CONVERGENCE: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "ampere",
    version,
    about = "Monge-Ampere, optimal transport and related flows",
    after_help = fields::HELP
)]
struct Cli {
    #[command(subcommand)]
    group: Group,
}

#[derive(Subcommand, Debug)]
enum Group {
    /// Dirichlet problem for det D^2 u = f.
    #[command(subcommand)]
    Ma(MaCmd),
    /// Discrete and periodic optimal transport.
    #[command(subcommand)]
    Ot(OtCmd),
    /// Periodic correctors and quadratic blow-downs.
    #[command(subcommand)]
    Homog(HomogCmd),
    /// Vorticity transport by a Monge-Ampere stream function.
    #[command(subcommand)]
    Vort(VortCmd),
    /// Minimizing-movement flows on the circle.
    #[command(subcommand)]
    Jko(JkoCmd),
    /// Acceptance suite.
    #[command(subcommand)]
    Verify(VerifyCmd),
}

/// Declares an argument struct whose flags double as configuration keys.
/// Every flag is optional on the command line; `--config FILE` supplies
/// `key = value` lines and explicit flags override them.
macro_rules! settings {
    ($name:ident { $($key:ident : $help:literal),* $(,)? }) => {
        #[derive(Args, Debug)]
        struct $name {
            /// File of `key = value` lines using the flag names below
            /// (with underscores).
            #[arg(long, value_name = "FILE")]
            config: Option<PathBuf>,
            $(
                #[doc = $help]
                #[arg(long)]
                $key: Option<String>,
            )*
        }

        impl $name {
            fn settings(&self) -> Result<RunConfig> {
                let keys = [$(stringify!($key)),*];
                let mut cfg = match &self.config {
                    Some(p) => RunConfig::parse(&std::fs::read_to_string(p)?, &keys)?,
                    None => RunConfig::default(),
                };
                $(
                    if let Some(v) = &self.$key {
                        cfg.set(stringify!($key), v);
                    }
                )*
                Ok(cfg)
            }
        }
    };
}

settings!(MaSolve {
    f: "Right-hand side [default: const:1]",
    boundary: "Boundary data, extended to the grid [default: quad]",
    n: "Cells per side of the unit square [default: 32]",
    tol: "Residual target [default: solver default]",
    max_iters: "Newton iteration cap [default: solver default]",
    out: "Solution grid file",
});

settings!(MaInvariance {
    f: "Right-hand side [default: const:1]",
    boundary: "Boundary data [default: quad]",
    n: "Cells per side [default: 32]",
    count: "Random unimodular maps [default: 5]",
    seed: "Seed for the maps [default: 0]",
    out: "CSV of residuals",
});

settings!(OtPair {
    x: "Source MACLOUD file",
    y: "Target MACLOUD file",
    out: "CSV output",
});

settings!(OtMap {
    f: "Source density on the unit torus [default: const:1]",
    g: "Target density [default: cosine:0.2]",
    n: "Cells per side [default: 64]",
    samples: "Push-forward samples [default: 100000]",
    seed: "Sampling seed [default: 0]",
    out: "Potential grid file",
});

settings!(HomogCorrector {
    f: "Periodic right-hand side [default: cosine:0.1]",
    n: "Cells per side [default: 64]",
    form: "Quadratic form a11,a12,a22 with det equal to the mean of f [default: 1,0,1]",
    start: "Newton start: zero or linearized [default: linearized]",
    out: "Corrector grid file",
});

settings!(HomogBlowdown {
    f: "Periodic right-hand side [default: cosine:0.1]",
    n: "Cells per side [default: 64]",
    form: "Quadratic form a11,a12,a22 [default: 1,0,1]",
    eps: "Decreasing scales, comma separated [default: 0.5,0.25,0.125]",
    out: "CSV of deviations",
});

settings!(VortRun {
    rho: "Initial vorticity density on the torus [default: patch:0.2]",
    n: "Cells per side [default: 64]",
    t_end: "Final time [default: 1]",
    cfl: "Courant number [default: 0.45]",
    dt: "Fixed time step, overrides cfl",
    convention: "Velocity from the stream function: solenoidal (-psi_y, psi_x) or reflected (-psi_y, -psi_x) [default: solenoidal]",
    out: "Trajectory CSV",
    last: "Grid file for the final density",
});

settings!(JkoRun {
    rho: "Initial density: const, quad:a, cosine:a or patch:w [default: cosine:0.2]",
    n: "Bins on the circle [default: 64]",
    tau: "Time step [default: 0.001]",
    steps: "Number of steps [default: 50]",
    functional: "entropy, porous:m or quartic [default: entropy]",
    seed: "Seed for the optimality certificates [default: 0]",
    out: "CSV of energies",
    densities: "CSV of bin masses, one row per step",
});

#[derive(Subcommand, Debug)]
enum MaCmd {
    /// Solve the Dirichlet problem on the unit square.
    Solve(MaSolve),
    /// Check affine, translation and dilation invariance of a solution.
    Invariance(MaInvariance),
}

#[derive(Subcommand, Debug)]
enum OtCmd {
    /// Optimal assignment between equal-size uniform clouds.
    Assign(OtPair),
    /// Optimal plan between weighted clouds.
    Plan(OtPair),
    /// Periodic Brenier potential between two densities.
    Map(OtMap),
}

#[derive(Subcommand, Debug)]
enum HomogCmd {
    /// Periodic corrector w with det(M + D^2 w) = f.
    Corrector(HomogCorrector),
    /// Contraction of eps^2 u(x / eps) towards the quadratic.
    Blowdown(HomogBlowdown),
}

#[derive(Subcommand, Debug)]
enum VortCmd {
    /// Advect a vorticity density.
    Run(VortRun),
}

#[derive(Subcommand, Debug)]
enum JkoCmd {
    /// Run a flow and report energies.
    Run(JkoRun),
}

#[derive(Subcommand, Debug)]
enum VerifyCmd {
    /// Run all acceptance checks.
    All(VerifyAll),
}

#[derive(Args, Debug)]
struct VerifyAll {
    /// Stated problem sizes only.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = VerifyOptions::default().seed)]
    seed: u64,
    /// Directory for artifacts and report.txt.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    ChecksFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_VALIDATION);
    }
    match run(cli.group) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ChecksFailed) => ExitCode::from(EXIT_VALIDATION),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::NoConvergence { .. } => EXIT_NO_CONVERGENCE,
                _ => EXIT_VALIDATION,
            })
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("MA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidParameter(format!("MA_THREADS must be a positive integer (got '{v}')")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn run(group: Group) -> Result<Status> {
    match group {
        Group::Ma(MaCmd::Solve(a)) => ma_solve(&a.settings()?),
        Group::Ma(MaCmd::Invariance(a)) => ma_invariance(&a.settings()?),
        Group::Ot(OtCmd::Assign(a)) => ot_assign(&a.settings()?),
        Group::Ot(OtCmd::Plan(a)) => ot_plan(&a.settings()?),
        Group::Ot(OtCmd::Map(a)) => ot_map(&a.settings()?),
        Group::Homog(HomogCmd::Corrector(a)) => homog_corrector(&a.settings()?),
        Group::Homog(HomogCmd::Blowdown(a)) => homog_blowdown(&a.settings()?),
        Group::Vort(VortCmd::Run(a)) => vort_run(&a.settings()?),
        Group::Jko(JkoCmd::Run(a)) => jko_run(&a.settings()?),
        Group::Verify(VerifyCmd::All(a)) => verify(&a),
    }
}

fn str_or<'a>(cfg: &'a RunConfig, key: &str, default: &'a str) -> &'a str {
    cfg.get(key).unwrap_or(default)
}

fn write_out(cfg: &RunConfig, key: &str, contents: &str) -> Result<()> {
    if let Some(p) = cfg.get(key) {
        atomic_write(Path::new(p), contents.as_bytes())?;
    }
    Ok(())
}

fn read_text(path: &str) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn parse_list(key: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("'{s}' in '{key}' is not a number"))
            })
        })
        .collect()
}

fn quadratic_form(cfg: &RunConfig) -> Result<QuadraticForm> {
    let v = parse_list("form", str_or(cfg, "form", "1,0,1"))?;
    if v.len() != 3 {
        return Err(Error::InvalidParameter("form takes three entries a11,a12,a22".into()));
    }
    QuadraticForm::new([[v[0], v[1]], [v[1], v[2]]])
}

fn dirichlet_problem(
    cfg: &RunConfig,
) -> Result<(ampere_core::grid::GridFunction, ampere_core::dirichlet::ConvexSolution)> {
    let (fs, gs) = (str_or(cfg, "f", "const:1"), str_or(cfg, "boundary", "quad"));
    let spec = fields::common_spec(&[fs, gs], cfg.usize_or("n", 32)?, Topology::Box)?;
    let f = fields::grid_field(fs, spec)?;
    let g = fields::grid_field(gs, spec)?;
    let defaults = SolverOptions::default();
    let opts = SolverOptions {
        tol: cfg.f64_or("tol", defaults.tol)?,
        max_iters: cfg.usize_or("max_iters", defaults.max_iters)?,
        ..defaults
    };
    let sol = solve_dirichlet(&f, &g, &opts)?;
    Ok((f, sol))
}

fn ma_solve(cfg: &RunConfig) -> Result<Status> {
    let (_, sol) = dirichlet_problem(cfg)?;
    println!("scheme {}", sol.scheme.as_str());
    println!("newton_iters {}", sol.newton_iters);
    println!("residual {}", fmt_real(sol.residual_sup));
    write_out(cfg, "out", &write_grid(&sol.u))?;
    Ok(Status::Ok)
}

fn ma_invariance(cfg: &RunConfig) -> Result<Status> {
    let (f, sol) = dirichlet_problem(cfg)?;
    let mut checks = Vec::new();
    for m in random_invariance_maps(cfg.usize_or("count", 5)?, cfg.u64_or("seed", 0)?) {
        let kind = if m.a == [[1.0, 0.0], [0.0, 1.0]] { "translation" } else { "affine" };
        checks.push((kind, check_affine_invariance(&sol, &f, &m)?));
    }
    checks.push(("dilation", check_quadratic_dilation(&sol, &f, 2.0)?));
    let mut csv = String::from("kind,residual,tol,passed\n");
    let mut all = true;
    for (kind, rep) in &checks {
        all &= rep.passed();
        let line = format!("{kind},{},{},{}", fmt_real(rep.residual_sup), fmt_real(rep.tol_inv), rep.passed());
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    write_out(cfg, "out", &csv)?;
    Ok(if all { Status::Ok } else { Status::ChecksFailed })
}

fn clouds(cfg: &RunConfig) -> Result<(ampere_core::transport::PointCloud, ampere_core::transport::PointCloud)> {
    Ok((read_cloud(&read_text(cfg.require("x")?)?)?, read_cloud(&read_text(cfg.require("y")?)?)?))
}

fn ot_assign(cfg: &RunConfig) -> Result<Status> {
    let (x, y) = clouds(cfg)?;
    let a = solve_assignment(&x, &y)?;
    let perm: Vec<String> = a.perm.iter().map(|p| p.to_string()).collect();
    println!("cost {}", fmt_real(a.total_cost));
    println!("perm {}", perm.join(" "));
    let mut csv = String::from("i,j\n");
    for (i, j) in a.perm.iter().enumerate() {
        let _ = writeln!(csv, "{i},{j}");
    }
    write_out(cfg, "out", &csv)?;
    Ok(Status::Ok)
}

fn ot_plan(cfg: &RunConfig) -> Result<Status> {
    let (x, y) = clouds(cfg)?;
    let plan = solve_plan(&x, &y)?;
    println!("cost {}", fmt_real(plan.cost));
    println!("support {}", plan.support(0.0).len());
    write_out(cfg, "out", &write_plan(&plan))?;
    Ok(Status::Ok)
}

fn ot_map(cfg: &RunConfig) -> Result<Status> {
    let (fs, gs) = (str_or(cfg, "f", "const:1"), str_or(cfg, "g", "cosine:0.2"));
    let spec = fields::common_spec(&[fs, gs], cfg.usize_or("n", 64)?, Topology::Torus)?;
    let f = DensityField::normalized(fields::grid_field(fs, spec)?)?;
    let g = DensityField::normalized(fields::grid_field(gs, spec)?)?;
    let phi = solve_brenier_torus(&f, &g, &Default::default())?;
    let pf = push_forward_check(&phi, &f, &g, cfg.usize_or("samples", 100_000)?, cfg.u64_or("seed", 0)?)?;
    println!("iterations {}", phi.iterations);
    println!("residual {}", fmt_real(phi.residual_sup));
    println!("push_forward_l1 {}", fmt_real(pf.l1));
    println!("push_forward_bound {}", fmt_real(pf.bound));
    println!("push_forward {}", if pf.passed { "passed" } else { "failed" });
    write_out(cfg, "out", &write_grid(&phi.v))?;
    Ok(if pf.passed { Status::Ok } else { Status::ChecksFailed })
}

fn periodic_rhs(cfg: &RunConfig) -> Result<ampere_core::grid::GridFunction> {
    let fs = str_or(cfg, "f", "cosine:0.1");
    let spec = fields::common_spec(&[fs], cfg.usize_or("n", 64)?, Topology::Torus)?;
    fields::grid_field(fs, spec)
}

fn homog_corrector(cfg: &RunConfig) -> Result<Status> {
    let f = periodic_rhs(cfg)?;
    let start = match str_or(cfg, "start", "linearized") {
        "zero" => PeriodicStart::Zero,
        "linearized" => PeriodicStart::Linearized,
        other => return Err(Error::InvalidParameter(format!("unknown start '{other}'"))),
    };
    let opts = CorrectorOptions {
        start,
        ..Default::default()
    };
    let c = solve_corrector(&f, &quadratic_form(cfg)?, &opts)?;
    println!("iterations {}", c.iterations);
    println!("residual {}", fmt_real(c.residual_sup));
    println!("sup_w {}", fmt_real(c.w.sup_norm()));
    write_out(cfg, "out", &write_grid(&c.w))?;
    Ok(Status::Ok)
}

fn homog_blowdown(cfg: &RunConfig) -> Result<Status> {
    let f = periodic_rhs(cfg)?;
    let c = solve_corrector(&f, &quadratic_form(cfg)?, &Default::default())?;
    let eps = parse_list("eps", str_or(cfg, "eps", "0.5,0.25,0.125"))?;
    let rep = liouville_check(&c, &eps)?;
    let mut csv = String::from("eps,deviation\n");
    for (e, d) in rep.eps.iter().zip(&rep.deviations) {
        let _ = writeln!(csv, "{},{}", fmt_real(*e), fmt_real(*d));
    }
    print!("{csv}");
    let ratios: Vec<String> = rep.ratios.iter().map(|r| fmt_real(*r)).collect();
    println!("ratios {}", ratios.join(" "));
    println!("recovery_error {}", fmt_real(rep.recovery_error));
    write_out(cfg, "out", &csv)?;
    Ok(Status::Ok)
}

fn vort_run(cfg: &RunConfig) -> Result<Status> {
    let rs = str_or(cfg, "rho", "patch:0.2");
    let spec = fields::common_spec(&[rs], cfg.usize_or("n", 64)?, Topology::Torus)?;
    let rho = VorticityState::normalized(fields::grid_field(rs, spec)?)?;
    let policy = match cfg.get("dt") {
        Some(_) => DtPolicy::Fixed(cfg.f64_or("dt", 0.0)?),
        None => DtPolicy::Cfl(cfg.f64_or("cfl", 0.45)?),
    };
    let convention = match str_or(cfg, "convention", "solenoidal") {
        "solenoidal" => VelocityConvention::Solenoidal,
        "reflected" => VelocityConvention::Reflected,
        other => return Err(Error::InvalidParameter(format!("unknown convention '{other}'"))),
    };
    let opts = SimulationOptions {
        convention,
        ..Default::default()
    };
    let tr = run_simulation(&rho, cfg.f64_or("t_end", 1.0)?, policy, &opts)?;
    let rows: Vec<TrajectoryRow> = tr.records.iter().map(TrajectoryRow::from).collect();
    println!("steps {}", tr.records.len() - 1);
    println!("max_step_mass_drift {}", fmt_real(tr.max_step_mass_drift));
    println!("final_min {}", fmt_real(tr.state.rho.min()));
    println!("final_max {}", fmt_real(tr.state.rho.max()));
    write_out(cfg, "out", &write_trajectory(&rows))?;
    write_out(cfg, "last", &write_grid(&tr.state.rho))?;
    Ok(Status::Ok)
}

fn functional(text: &str) -> Result<Functional> {
    match text.split_once(':') {
        None if text == "entropy" => Ok(Functional::Entropy),
        None if text == "quartic" => Ok(Functional::QuarticWell),
        Some(("porous", m)) => Ok(Functional::PorousMedium {
            m: m.parse()
                .map_err(|_| Error::InvalidParameter(format!("bad exponent '{m}'")))?,
        }),
        _ => Err(Error::InvalidParameter(format!(
            "unknown functional '{text}' (entropy, porous:m or quartic)"
        ))),
    }
}

fn jko_run(cfg: &RunConfig) -> Result<Status> {
    let n = cfg.usize_or("n", 64)?;
    let start = fields::density_1d(str_or(cfg, "rho", "cosine:0.2"), n)?;
    let flow = FlowConfig {
        tau: cfg.f64_or("tau", 1e-3)?,
        functional: functional(str_or(cfg, "functional", "entropy"))?,
        steps: cfg.usize_or("steps", 50)?,
        seed: cfg.u64_or("seed", 0)?,
    };
    let traj = run_flow(&start, &flow)?;
    let eq = Density1D::uniform(n)?;
    let mut csv = String::from("step,t,energy,energy_gap,l2_to_uniform\n");
    for (k, d) in traj.densities.iter().enumerate() {
        let gap = if k == 0 { String::new() } else { fmt_real(traj.energy_gaps[k - 1]) };
        let _ = writeln!(
            csv,
            "{k},{},{},{gap},{}",
            fmt_real(k as f64 * flow.tau),
            fmt_real(traj.energies[k]),
            fmt_real(d.l2_distance(&eq)?)
        );
    }
    print!("{csv}");
    write_out(cfg, "out", &csv)?;
    let mut rows = String::new();
    for d in &traj.densities {
        let cells: Vec<String> = d.masses().iter().map(|m| fmt_real(*m)).collect();
        rows.push_str(&cells.join(","));
        rows.push('\n');
    }
    write_out(cfg, "densities", &rows)?;
    Ok(Status::Ok)
}

fn verify(a: &VerifyAll) -> Result<Status> {
    let opts = VerifyOptions {
        quick: a.quick,
        seed: a.seed,
    };
    let outcomes = verify_all(&opts, a.out.as_deref(), |o| {
        println!("{} ({:.1} s)", o.line(), o.seconds);
    })?;
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed}/{} criteria passed", outcomes.len());
    Ok(if passed == outcomes.len() { Status::Ok } else { Status::ChecksFailed })
}
