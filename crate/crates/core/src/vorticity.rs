//! Periodic vorticity transport driven by the Monge-Ampere stream function
//! `det(I + D^2 psi) = rho`.

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::numeric::{pairwise_sum, sup_norm};
use crate::periodic::{Fixed, PeriodicMa, PeriodicOptions, PeriodicRun};

const AVERAGE_TOL: f64 = 1e-10;
/// Largest admissible `dt * max(|v1| + |v2|) / h`.
pub const CFL_LIMIT: f64 = 0.45;

/// Vorticity density with cell average 1 and the current time.
#[derive(Clone, Debug, PartialEq)]
pub struct VorticityState {
    pub rho: GridFunction,
    pub t: f64,
}

impl VorticityState {
    pub fn new(rho: GridFunction, t: f64) -> Result<Self> {
        rho.spec().ensure_torus()?;
        let min = rho.min();
        if !(min > 0.0) {
            return Err(Error::Positivity { min });
        }
        let average = grid_average(&rho);
        if (average - 1.0).abs() > AVERAGE_TOL {
            return Err(Error::Compatibility {
                average,
                expected: 1.0,
            });
        }
        Ok(VorticityState { rho, t })
    }

    /// Divides a positive periodic field by its average.
    pub fn normalized(rho: GridFunction) -> Result<Self> {
        let a = grid_average(&rho);
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidParameter(format!("cannot normalize average {a}")));
        }
        Self::new(rho.map(|v| v / a), 0.0)
    }

    pub fn mass(&self) -> f64 {
        let h = self.rho.spec().h();
        pairwise_sum(self.rho.values()) * h * h
    }
}

fn grid_average(g: &GridFunction) -> f64 {
    pairwise_sum(g.values()) / g.spec().len() as f64
}

#[derive(Clone, Debug)]
pub struct StreamFunction {
    pub psi: GridFunction,
    pub residual_sup: f64,
    pub iterations: usize,
}

impl From<PeriodicRun> for StreamFunction {
    fn from(r: PeriodicRun) -> Self {
        StreamFunction {
            psi: r.w,
            residual_sup: r.residual_sup,
            iterations: r.iterations,
        }
    }
}

const IDENTITY: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

/// Periodic mean-zero `psi` with `det(I + D^2 psi) = rho`.
pub fn stream_from_vorticity(rho: &VorticityState, opts: &PeriodicOptions) -> Result<StreamFunction> {
    stream_from_guess(rho, None, opts)
}

/// As [`stream_from_vorticity`], starting Newton from `guess` when given.
pub fn stream_from_guess(
    rho: &VorticityState,
    guess: Option<&GridFunction>,
    opts: &PeriodicOptions,
) -> Result<StreamFunction> {
    let spec = *rho.rho.spec();
    let ma = PeriodicMa::new(spec, IDENTITY)?;
    let w0 = match guess {
        Some(g) => {
            spec.ensure_same(g.spec())?;
            g.values().to_vec()
        }
        None => {
            let r: Vec<f64> = rho.rho.values().iter().map(|v| v - 1.0).collect();
            ma.linearized(&r)
        }
    };
    let w0 = if ma.det(&w0).is_some() { w0 } else { vec![0.0; spec.len()] };
    ma.solve(w0, &mut Fixed(rho.rho.values()), opts).map(Into::into)
}

/// Orientation of the velocity built from the stream function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VelocityConvention {
    /// `v = (-psi_y, psi_x)`, divergence free.
    #[default]
    Solenoidal,
    /// `v = (-psi_y, -psi_x)`, with divergence `-2 psi_xy`.
    Reflected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    spec: GridSpec,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl VelocityField {
    pub fn new(spec: GridSpec, vx: Vec<f64>, vy: Vec<f64>) -> Result<Self> {
        spec.ensure_torus()?;
        if vx.len() != spec.len() || vy.len() != spec.len() {
            return Err(Error::SpecMismatch("velocity components have the wrong length".into()));
        }
        Ok(VelocityField { spec, vx, vy })
    }

    pub fn uniform(spec: GridSpec, v: [f64; 2]) -> Result<Self> {
        Self::new(spec, vec![v[0]; spec.len()], vec![v[1]; spec.len()])
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn negated(&self) -> Self {
        VelocityField {
            spec: self.spec,
            vx: self.vx.iter().map(|v| -v).collect(),
            vy: self.vy.iter().map(|v| -v).collect(),
        }
    }

    /// Centered-difference divergence at every node.
    pub fn divergence(&self) -> Vec<f64> {
        let s = &self.spec;
        let h2 = 2.0 * s.h();
        (0..s.len())
            .map(|k| {
                let (i, j) = s.ij(k);
                let e = s.offset(i, j, 1, 0).unwrap();
                let w = s.offset(i, j, -1, 0).unwrap();
                let n = s.offset(i, j, 0, 1).unwrap();
                let so = s.offset(i, j, 0, -1).unwrap();
                (self.vx[e] - self.vx[w]) / h2 + (self.vy[n] - self.vy[so]) / h2
            })
            .collect()
    }

    pub fn max_divergence(&self) -> f64 {
        sup_norm(&self.divergence())
    }

    /// `max(|v1| + |v2|)`, the speed entering the CFL condition.
    pub fn max_speed(&self) -> f64 {
        self.vx
            .iter()
            .zip(&self.vy)
            .fold(0.0, |m, (a, b)| m.max(a.abs() + b.abs()))
    }
}

/// Nodal velocity from centered differences of `psi`.
pub fn velocity_from_stream(psi: &GridFunction, convention: VelocityConvention) -> Result<VelocityField> {
    let s = *psi.spec();
    s.ensure_torus()?;
    let h2 = 2.0 * s.h();
    let v = psi.values();
    let mut vx = vec![0.0; s.len()];
    let mut vy = vec![0.0; s.len()];
    for j in 0..s.my() {
        for i in 0..s.mx() {
            let k = s.idx(i, j);
            let px = (v[s.offset(i, j, 1, 0).unwrap()] - v[s.offset(i, j, -1, 0).unwrap()]) / h2;
            let py = (v[s.offset(i, j, 0, 1).unwrap()] - v[s.offset(i, j, 0, -1).unwrap()]) / h2;
            vx[k] = -py;
            vy[k] = match convention {
                VelocityConvention::Solenoidal => px,
                VelocityConvention::Reflected => -px,
            };
        }
    }
    VelocityField::new(s, vx, vy)
}

#[inline]
fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

fn check_cfl(v: &VelocityField, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("time step must be positive (got {dt})")));
    }
    let courant = dt * v.max_speed() / v.spec.h();
    if courant > CFL_LIMIT * (1.0 + 1e-12) {
        return Err(Error::Cfl {
            courant,
            limit: CFL_LIMIT,
        });
    }
    Ok(())
}

/// One forward-Euler finite-volume step of `rho_t + div(v rho) = 0`.
///
/// Face velocities are averages of the two adjacent nodal values; face
/// states come from minmod-limited linear reconstruction, upwinded.
fn euler_update(rho: &[f64], v: &VelocityField, dt: f64) -> Vec<f64> {
    let s = &v.spec;
    let n = s.len();
    let lam = dt / s.h();
    let mut sx = vec![0.0; n];
    let mut sy = vec![0.0; n];
    for k in 0..n {
        let (i, j) = s.ij(k);
        let e = rho[s.offset(i, j, 1, 0).unwrap()];
        let w = rho[s.offset(i, j, -1, 0).unwrap()];
        let no = rho[s.offset(i, j, 0, 1).unwrap()];
        let so = rho[s.offset(i, j, 0, -1).unwrap()];
        sx[k] = minmod(e - rho[k], rho[k] - w);
        sy[k] = minmod(no - rho[k], rho[k] - so);
    }
    // flux through the east and north faces of each cell
    let mut fe = vec![0.0; n];
    let mut fnn = vec![0.0; n];
    for k in 0..n {
        let (i, j) = s.ij(k);
        let ke = s.offset(i, j, 1, 0).unwrap();
        let kn = s.offset(i, j, 0, 1).unwrap();
        let u = 0.5 * (v.vx[k] + v.vx[ke]);
        fe[k] = if u >= 0.0 {
            u * (rho[k] + 0.5 * sx[k])
        } else {
            u * (rho[ke] - 0.5 * sx[ke])
        };
        let w = 0.5 * (v.vy[k] + v.vy[kn]);
        fnn[k] = if w >= 0.0 {
            w * (rho[k] + 0.5 * sy[k])
        } else {
            w * (rho[kn] - 0.5 * sy[kn])
        };
    }
    (0..n)
        .map(|k| {
            let (i, j) = s.ij(k);
            let kw = s.offset(i, j, -1, 0).unwrap();
            let ks = s.offset(i, j, 0, -1).unwrap();
            rho[k] - lam * (fe[k] - fe[kw] + fnn[k] - fnn[ks])
        })
        .collect()
}

/// One Heun (SSP-RK2) step of conservative upwind transport with a frozen
/// velocity. Requires `dt * max(|v1| + |v2|) <= 0.45 h`.
pub fn advect(rho: &GridFunction, v: &VelocityField, dt: f64) -> Result<GridFunction> {
    rho.spec().ensure_same(&v.spec)?;
    check_cfl(v, dt)?;
    let r = rho.values();
    let stage = euler_update(r, v, dt);
    let second = euler_update(&stage, v, dt);
    let out = r.iter().zip(&second).map(|(a, b)| 0.5 * (a + b)).collect();
    GridFunction::new(*rho.spec(), out)
}

/// Time-step selection for [`run_simulation`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtPolicy {
    Fixed(f64),
    /// `dt = c h / max(|v1| + |v2|)`, recomputed each step.
    Cfl(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOptions {
    pub newton: PeriodicOptions,
    pub convention: VelocityConvention,
    /// Levels `c` whose superlevel-set areas `|{rho >= c}|` are recorded.
    pub area_levels: Vec<f64>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            newton: PeriodicOptions::default(),
            convention: VelocityConvention::Solenoidal,
            area_levels: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub mass: f64,
    pub min: f64,
    pub max: f64,
    /// Stream-function residual of the first stage.
    pub residual: f64,
    pub areas: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub state: VorticityState,
    pub stream: StreamFunction,
    /// Largest relative mass change over a single step.
    pub max_step_mass_drift: f64,
}

fn superlevel_areas(rho: &GridFunction, levels: &[f64]) -> Vec<f64> {
    let h2 = rho.spec().h() * rho.spec().h();
    levels
        .iter()
        .map(|&c| rho.values().iter().filter(|&&v| v >= c).count() as f64 * h2)
        .collect()
}

/// Integrates the transport from `rho0` to time `t_end`.
///
/// Each Heun stage solves for the stream function (warm-started from the
/// previous one), forms the velocity and takes an upwind step; the result
/// averages the initial and the twice-advanced state.
pub fn run_simulation(
    rho0: &VorticityState,
    t_end: f64,
    policy: DtPolicy,
    opts: &SimulationOptions,
) -> Result<Trajectory> {
    if !(t_end >= rho0.t && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("end time {t_end} precedes start")));
    }
    match policy {
        DtPolicy::Fixed(dt) if !(dt > 0.0 && dt.is_finite()) => {
            return Err(Error::InvalidParameter(format!("time step must be positive (got {dt})")))
        }
        DtPolicy::Cfl(c) if !(c > 0.0 && c <= CFL_LIMIT) => {
            return Err(Error::InvalidParameter(format!(
                "Courant factor must lie in (0, {CFL_LIMIT}] (got {c})"
            )))
        }
        _ => {}
    }
    let spec = *rho0.rho.spec();
    let h = spec.h();
    let mut state = rho0.clone();
    let mut stream = stream_from_vorticity(&state, &opts.newton)?;
    let record = |step: usize, st: &VorticityState, res: f64| StepRecord {
        step,
        t: st.t,
        mass: st.mass(),
        min: st.rho.min(),
        max: st.rho.max(),
        residual: res,
        areas: superlevel_areas(&st.rho, &opts.area_levels),
    };
    let mut records = vec![record(0, &state, stream.residual_sup)];
    let mut drift: f64 = 0.0;
    let mut step = 0;
    let t_tol = 1e-12 * t_end.abs().max(1.0);
    while state.t < t_end - t_tol {
        step += 1;
        let v = velocity_from_stream(&stream.psi, opts.convention)?;
        let remaining = t_end - state.t;
        let dt = match policy {
            DtPolicy::Fixed(dt) => dt.min(remaining),
            DtPolicy::Cfl(c) => {
                let speed = v.max_speed();
                if speed > 0.0 {
                    (c * h / speed).min(remaining)
                } else {
                    remaining
                }
            }
        };
        check_cfl(&v, dt)?;
        let residual = stream.residual_sup;
        let r0 = state.rho.values();
        let stage = GridFunction::new(spec, euler_update(r0, &v, dt))?;
        let stage_state = VorticityState::new(stage, state.t + dt)?;
        let s1 = stream_from_guess(&stage_state, Some(&stream.psi), &opts.newton)?;
        let v1 = velocity_from_stream(&s1.psi, opts.convention)?;
        check_cfl(&v1, dt)?;
        let second = euler_update(stage_state.rho.values(), &v1, dt);
        let next: Vec<f64> = r0.iter().zip(&second).map(|(a, b)| 0.5 * (a + b)).collect();
        let t_next = if remaining - dt <= t_tol { t_end } else { state.t + dt };
        let next = VorticityState::new(GridFunction::new(spec, next)?, t_next)?;
        let (m0, m1) = (state.mass(), next.mass());
        drift = drift.max((m1 - m0).abs() / m0.abs());
        stream = stream_from_guess(&next, Some(&s1.psi), &opts.newton)?;
        state = next;
        records.push(record(step, &state, residual));
    }
    Ok(Trajectory {
        records,
        state,
        stream,
        max_step_mass_drift: drift,
    })
}

/// Smoothed patch `1 + chi_disc`, convolved with a cosine bump of radius
/// `2h` and divided by its average.
pub fn patch_density(spec: GridSpec, center: [f64; 2], radius: f64) -> Result<VorticityState> {
    spec.ensure_torus()?;
    if !(radius > 0.0 && 2.0 * radius < spec.lx.min(spec.ly)) {
        return Err(Error::InvalidParameter(format!("bad patch radius {radius}")));
    }
    let inside = GridFunction::from_fn(spec, |x, y| {
        let dx = wrap(x - center[0], spec.lx);
        let dy = wrap(y - center[1], spec.ly);
        if dx.hypot(dy) < radius { 1.0 } else { 0.0 }
    });
    let reach = 2isize;
    let mut kernel = Vec::new();
    for dj in -reach..=reach {
        for di in -reach..=reach {
            let r = ((di * di + dj * dj) as f64).sqrt() / reach as f64;
            if r < 1.0 {
                kernel.push((di, dj, 1.0 + (std::f64::consts::PI * r).cos()));
            }
        }
    }
    let total: f64 = kernel.iter().map(|k| k.2).sum();
    let mut out = GridFunction::zeros(spec);
    for j in 0..spec.my() {
        for i in 0..spec.mx() {
            let mut acc = 0.0;
            for &(di, dj, w) in &kernel {
                acc += w * inside.values()[spec.offset(i, j, di, dj).unwrap()];
            }
            out.values_mut()[spec.idx(i, j)] = 1.0 + acc / total;
        }
    }
    VorticityState::normalized(out)
}

fn wrap(d: f64, l: f64) -> f64 {
    let r = d.rem_euclid(l);
    r.min(l - r)
}

/// Stationary shear layer `rho = 1 + a cos(2 pi x / lx)` and its stream
/// function. The velocity is parallel to the level lines of `rho`.
pub fn shear_array(spec: GridSpec, amplitude: f64) -> Result<(StreamFunction, VorticityState)> {
    if !(amplitude.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("amplitude must be below 1 (got {amplitude})")));
    }
    let lx = spec.lx;
    let rho = VorticityState::new(
        GridFunction::from_fn(spec, |x, _| 1.0 + amplitude * (2.0 * std::f64::consts::PI * x / lx).cos()),
        0.0,
    )?;
    let psi = stream_from_vorticity(&rho, &PeriodicOptions::default())?;
    Ok((psi, rho))
}

#[derive(Clone, Debug)]
pub struct StationaryArray {
    pub stream: StreamFunction,
    pub state: VorticityState,
    pub iterations: usize,
    /// `sup |det(I + D^2 psi) - F(psi) / mean F(psi)|`.
    pub residual: f64,
}

const STATIONARY_TOL: f64 = 1e-9;
const STATIONARY_MAX_ITERS: usize = 100;

/// Fixed point of `psi -> stream(F(psi) / mean F(psi))` from `psi = 0`.
///
/// Fails when an iterate leaves `sup |psi| <= amplitude_bound` or the
/// iteration does not settle within 100 sweeps.
pub fn solve_stationary(
    spec: GridSpec,
    f: impl Fn(f64) -> f64,
    amplitude_bound: f64,
) -> Result<StationaryArray> {
    spec.ensure_torus()?;
    if (f(0.0) - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter("F must satisfy F(0) = 1".into()));
    }
    if !(amplitude_bound > 0.0) {
        return Err(Error::InvalidParameter("amplitude bound must be positive".into()));
    }
    let opts = PeriodicOptions {
        tol: 1e-11,
        ..Default::default()
    };
    let ma = PeriodicMa::new(spec, IDENTITY)?;
    let rhs = |psi: &GridFunction| -> Result<GridFunction> {
        let raw = psi.map(&f);
        let a = grid_average(&raw);
        if !(raw.min() > 0.0 && a > 0.0) {
            return Err(Error::Positivity { min: raw.min() });
        }
        Ok(raw.map(|v| v / a))
    };
    let mut psi = GridFunction::zeros(spec);
    for it in 1..=STATIONARY_MAX_ITERS {
        let rho = VorticityState::new(rhs(&psi)?, 0.0)?;
        let next = stream_from_guess(&rho, Some(&psi), &opts)?;
        let change = next.psi.sup_distance(&psi)?;
        psi = next.psi.clone();
        if psi.sup_norm() > amplitude_bound {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: psi.sup_norm(),
            });
        }
        let target = rhs(&psi)?;
        let det = ma.det(psi.values()).ok_or(Error::Positivity { min: 0.0 })?;
        let residual = det
            .iter()
            .zip(target.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if residual <= STATIONARY_TOL && change <= STATIONARY_TOL {
            return Ok(StationaryArray {
                stream: next,
                state: VorticityState::new(target, 0.0)?,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: STATIONARY_MAX_ITERS,
        residual: f64::NAN,
    })
}
