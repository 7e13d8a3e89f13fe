//! Damped Newton solver for `det(M + D^2 w) = target` on a torus.
//!
//! Shared by the Brenier, corrector and stream-function problems. The
//! determinant is the conservative form from [`crate::grid::det_conservative`],
//! so the grid mean of the left side is exactly `det M` and the linearized
//! operator maps into mean-zero fields.

use crate::error::{Error, Result};
use crate::grid::{det_conservative, GridFunction, GridSpec};
use crate::grid::monge_ampere::periodic_differences;
use crate::linalg::{bicgstab, CsrMatrix, PeriodicConstSolver};
use crate::numeric::{norm2, remove_mean, sup_norm};

const MIN_STEP: f64 = 1e-4;
const SUFFICIENT: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodicOptions {
    /// Target for the sup-norm residual.
    pub tol: f64,
    pub max_iters: usize,
    /// Step reduction factor of the backtracking line search.
    pub damping: f64,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        PeriodicOptions {
            tol: 1e-10,
            max_iters: 60,
            damping: 0.5,
        }
    }
}

impl PeriodicOptions {
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
        Ok(())
    }
}

/// Starting guess for the Newton iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PeriodicStart {
    Zero,
    /// Solution of the problem linearized at `w = 0`.
    #[default]
    Linearized,
}

#[derive(Clone, Debug)]
pub struct PeriodicRun {
    pub w: GridFunction,
    pub residual_sup: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// Right-hand side of the equation, possibly depending on the iterate.
pub(crate) trait Target {
    fn eval(&mut self, w: &[f64]) -> Result<Vec<f64>>;
    /// Residual reported to the caller, from `det - target`.
    fn measure(&self, _w: &[f64], r: &[f64]) -> f64 {
        sup_norm(r)
    }
}

pub(crate) struct Fixed<'a>(pub &'a [f64]);

impl Target for Fixed<'_> {
    fn eval(&mut self, _w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.to_vec())
    }
}

pub(crate) struct PeriodicMa {
    spec: GridSpec,
    base: [[f64; 2]; 2],
}

impl PeriodicMa {
    pub(crate) fn new(spec: GridSpec, base: [[f64; 2]; 2]) -> Result<Self> {
        spec.ensure_torus()?;
        let det = base[0][0] * base[1][1] - base[0][1] * base[1][0];
        if !(base[0][0] > 0.0 && det > 0.0) || base[0][1] != base[1][0] {
            return Err(Error::InvalidParameter(
                "base matrix must be symmetric positive definite".into(),
            ));
        }
        Ok(PeriodicMa { spec, base })
    }

    /// Nodal determinant, or `None` if `M + D^2 w` fails to be positive
    /// definite somewhere.
    pub(crate) fn det(&self, w: &[f64]) -> Option<Vec<f64>> {
        let s = &self.spec;
        let mut out = vec![0.0; s.len()];
        for j in 0..s.my() {
            for i in 0..s.mx() {
                let (d, c) = periodic_differences(w, s, i, j);
                let val = det_conservative(&self.base, d, c);
                if !(self.base[0][0] + d[0] > 0.0 && val > 0.0) {
                    return None;
                }
                out[s.idx(i, j)] = val;
            }
        }
        Some(out)
    }

    fn jacobian(&self, w: &[f64]) -> (CsrMatrix, [f64; 3]) {
        let s = &self.spec;
        let h2 = s.h() * s.h();
        let m12 = self.base[0][1];
        let mut mat = CsrMatrix::with_capacity(s.len(), 9 * s.len());
        let mut sums = [0.0; 3];
        for j in 0..s.my() {
            for i in 0..s.mx() {
                let (d, c) = periodic_differences(w, s, i, j);
                let ax = self.base[1][1] + d[1];
                let ay = self.base[0][0] + d[0];
                let [pp, pm, mp, mm] = c.map(|v| 0.5 * (m12 + v));
                sums[0] += ax;
                sums[1] += ay;
                sums[2] += 0.5 * (pp + pm + mp + mm);
                // 3x3 stencil weights indexed [di + 1][dj + 1]
                let mut st = [[0.0; 3]; 3];
                st[2][1] += ax;
                st[0][1] += ax;
                st[1][1] -= 2.0 * (ax + ay);
                st[1][2] += ay;
                st[1][0] += ay;
                // pp = ne - e - n + c
                st[2][2] -= pp;
                st[2][1] += pp;
                st[1][2] += pp;
                st[1][1] -= pp;
                // pm = e - se - c + s
                st[2][1] -= pm;
                st[2][0] += pm;
                st[1][1] += pm;
                st[1][0] -= pm;
                // mp = n - c - nw + w
                st[1][2] -= mp;
                st[1][1] += mp;
                st[0][2] += mp;
                st[0][1] -= mp;
                // mm = c - s - w + sw
                st[1][1] -= mm;
                st[1][0] += mm;
                st[0][1] += mm;
                st[0][0] -= mm;
                for (a, row) in st.iter().enumerate() {
                    for (b, &val) in row.iter().enumerate() {
                        if val != 0.0 {
                            let col = s.offset(i, j, a as isize - 1, b as isize - 1).unwrap();
                            mat.push(col, val / h2);
                        }
                    }
                }
                mat.finish_row();
            }
        }
        let n = s.len() as f64;
        (mat, [sums[0] / n, sums[2] / n, sums[1] / n])
    }

    fn preconditioner(&self, coef: [f64; 3]) -> PeriodicConstSolver {
        let s = &self.spec;
        PeriodicConstSolver::new(s.nx, s.ny, s.h(), coef[0], coef[1], coef[2])
    }

    /// Solution of the problem linearized at zero: `cof(M) : D^2 w = r`.
    pub(crate) fn linearized(&self, rhs: &[f64]) -> Vec<f64> {
        let mut r = rhs.to_vec();
        remove_mean(&mut r);
        let pre = self.preconditioner([self.base[1][1], self.base[0][1], self.base[0][0]]);
        let mut out = vec![0.0; r.len()];
        pre.solve(&r, &mut out);
        remove_mean(&mut out);
        out
    }

    /// Damped Newton iteration from `w0`. Positivity of `M + D^2 w` is kept
    /// by rejecting trial steps that lose it.
    pub(crate) fn solve(
        &self,
        w0: Vec<f64>,
        target: &mut dyn Target,
        opts: &PeriodicOptions,
    ) -> Result<PeriodicRun> {
        opts.validate()?;
        let n = self.spec.len();
        let mut w = w0;
        remove_mean(&mut w);
        let Some(det) = self.det(&w) else {
            return Err(Error::Positivity {
                min: self.min_eigen_hint(&w),
            });
        };
        let tgt = target.eval(&w)?;
        let mut r: Vec<f64> = (0..n).map(|k| det[k] - tgt[k]).collect();
        let mut res = target.measure(&w, &r);
        let mut history = vec![res];
        let mut iters = 0;
        while res > opts.tol {
            if iters == opts.max_iters {
                return Err(Error::NoConvergence {
                    iterations: iters,
                    residual: res,
                });
            }
            iters += 1;
            let (jac, coef) = self.jacobian(&w);
            let pre = self.preconditioner(coef);
            let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            remove_mean(&mut rhs);
            let mut dw = vec![0.0; n];
            bicgstab(
                |x, y| jac.apply(x, y),
                |x, y| pre.solve(x, y),
                &rhs,
                &mut dw,
                1e-12,
                400,
            );
            remove_mean(&mut dw);

            let sup_old = sup_norm(&r);
            let l2_old = norm2(&r);
            let mut alpha = 1.0;
            let accepted = loop {
                let trial: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + alpha * b).collect();
                if let Some(d) = self.det(&trial) {
                    let t = target.eval(&trial)?;
                    let rt: Vec<f64> = (0..n).map(|k| d[k] - t[k]).collect();
                    let (sup, l2) = (sup_norm(&rt), norm2(&rt));
                    let shrink = 1.0 - SUFFICIENT * alpha;
                    if sup <= shrink * sup_old || (sup <= sup_old && l2 <= shrink * l2_old) {
                        break Some((trial, rt));
                    }
                }
                alpha *= opts.damping;
                if alpha < MIN_STEP {
                    break None;
                }
            };
            let Some((trial, rt)) = accepted else {
                return Err(Error::NoConvergence {
                    iterations: iters,
                    residual: res,
                });
            };
            w = trial;
            remove_mean(&mut w);
            r = rt;
            res = target.measure(&w, &r);
            history.push(res);
        }
        Ok(PeriodicRun {
            w: GridFunction::new(self.spec, w)?,
            residual_sup: res,
            iterations: iters,
            residual_history: history,
        })
    }

    fn min_eigen_hint(&self, w: &[f64]) -> f64 {
        let s = &self.spec;
        let mut m = f64::INFINITY;
        for j in 0..s.my() {
            for i in 0..s.mx() {
                let (d, c) = periodic_differences(w, s, i, j);
                m = m.min(det_conservative(&self.base, d, c));
            }
        }
        m
    }
}

/// Solves `det(M + D^2 w) = f` for periodic mean-zero `w`.
///
/// The conservative determinant averages to `det M` for every periodic `w`,
/// so `f` must have that grid mean; otherwise the residual cannot drop below
/// the mismatch.
pub fn solve_periodic_ma(
    f: &GridFunction,
    base: [[f64; 2]; 2],
    start: PeriodicStart,
    opts: &PeriodicOptions,
) -> Result<PeriodicRun> {
    let spec = *f.spec();
    let ma = PeriodicMa::new(spec, base)?;
    let det_m = base[0][0] * base[1][1] - base[0][1] * base[1][0];
    let w0 = match start {
        PeriodicStart::Zero => vec![0.0; spec.len()],
        PeriodicStart::Linearized => {
            let r: Vec<f64> = f.values().iter().map(|v| v - det_m).collect();
            ma.linearized(&r)
        }
    };
    ma.solve(w0, &mut Fixed(f.values()), opts)
}
