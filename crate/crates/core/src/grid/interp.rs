//! Tensor-product cubic spline interpolation of grid functions.
//!
//! Boxes use clamped ends with slopes from fourth-order one-sided
//! differences (so cubics are reproduced exactly), tori periodic ends. The
//! spline is
//! stored as nodal values and the derivatives `fx`, `fy`, `fxy`; each cell is
//! then the bicubic Hermite patch of its four corners, which coincides with
//! the tensor-product spline.

use super::{GridFunction, GridSpec, Topology};

pub struct BicubicSpline {
    spec: GridSpec,
    f: Vec<f64>,
    fx: Vec<f64>,
    fy: Vec<f64>,
    fxy: Vec<f64>,
}

/// Solves the tridiagonal system with sub/super diagonal 1 and diagonal 4.
fn solve_141(rhs: &mut [f64]) {
    let n = rhs.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut beta = 4.0;
    rhs[0] /= beta;
    for k in 1..n {
        c[k] = 1.0 / beta;
        beta = 4.0 - c[k];
        rhs[k] = (rhs[k] - rhs[k - 1]) / beta;
    }
    for k in (0..n - 1).rev() {
        rhs[k] -= c[k + 1] * rhs[k + 1];
    }
}

/// Cyclic version of [`solve_141`] via Sherman-Morrison.
fn solve_141_cyclic(rhs: &mut [f64]) {
    let n = rhs.len();
    // A = T + u v^T with T tridiagonal(1, 4 - gamma_ends, 1)
    let gamma = -4.0;
    let solve_mod = |b: &mut [f64]| {
        let mut diag = vec![4.0; n];
        diag[0] -= gamma;
        diag[n - 1] -= 1.0 / gamma;
        let mut c = vec![0.0; n];
        let mut beta = diag[0];
        b[0] /= beta;
        for k in 1..n {
            c[k] = 1.0 / beta;
            beta = diag[k] - c[k];
            b[k] = (b[k] - b[k - 1]) / beta;
        }
        for k in (0..n - 1).rev() {
            b[k] -= c[k + 1] * b[k + 1];
        }
    };
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = 1.0;
    solve_mod(rhs);
    solve_mod(&mut u);
    let fact = (rhs[0] + rhs[n - 1] / gamma) / (1.0 + u[0] + u[n - 1] / gamma);
    for k in 0..n {
        rhs[k] -= fact * u[k];
    }
}

/// Knot derivatives of the cubic spline through equally spaced `y`.
fn spline_slopes(y: &[f64], h: f64, periodic: bool) -> Vec<f64> {
    let n = y.len();
    if periodic {
        let mut m: Vec<f64> = (0..n)
            .map(|j| 6.0 * (y[(j + 1) % n] - 2.0 * y[j] + y[(j + n - 1) % n]) / (h * h))
            .collect();
        solve_141_cyclic(&mut m);
        (0..n)
            .map(|j| {
                let jp = (j + 1) % n;
                (y[jp] - y[j]) / h - h * (2.0 * m[j] + m[jp]) / 6.0
            })
            .collect()
    } else {
        // clamped spline: s_{j-1} + 4 s_j + s_{j+1} = 3 (y_{j+1} - y_{j-1}) / h
        let s0 = (-25.0 * y[0] + 48.0 * y[1] - 36.0 * y[2] + 16.0 * y[3] - 3.0 * y[4]) / (12.0 * h);
        let sn = (25.0 * y[n - 1] - 48.0 * y[n - 2] + 36.0 * y[n - 3] - 16.0 * y[n - 4]
            + 3.0 * y[n - 5])
            / (12.0 * h);
        let mut inner: Vec<f64> = (1..n - 1)
            .map(|j| 3.0 * (y[j + 1] - y[j - 1]) / h)
            .collect();
        inner[0] -= s0;
        inner[n - 3] -= sn;
        solve_141(&mut inner);
        let mut s = Vec::with_capacity(n);
        s.push(s0);
        s.extend_from_slice(&inner);
        s.push(sn);
        s
    }
}

#[inline]
fn hermite(t: f64) -> ([f64; 2], [f64; 2], [f64; 2], [f64; 2]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let v = [2.0 * t3 - 3.0 * t2 + 1.0, -2.0 * t3 + 3.0 * t2];
    let s = [t3 - 2.0 * t2 + t, t3 - t2];
    let dv = [6.0 * t2 - 6.0 * t, -6.0 * t2 + 6.0 * t];
    let ds = [3.0 * t2 - 4.0 * t + 1.0, 3.0 * t2 - 2.0 * t];
    (v, s, dv, ds)
}

impl BicubicSpline {
    pub fn new(u: &GridFunction) -> Self {
        let spec = *u.spec();
        let (mx, my) = (spec.mx(), spec.my());
        let h = spec.h();
        let periodic = spec.is_torus();
        let f = u.values().to_vec();
        let mut fx = vec![0.0; f.len()];
        let mut fy = vec![0.0; f.len()];
        let mut fxy = vec![0.0; f.len()];
        for j in 0..my {
            let row = &f[j * mx..(j + 1) * mx];
            fx[j * mx..(j + 1) * mx].copy_from_slice(&spline_slopes(row, h, periodic));
        }
        let mut col = vec![0.0; my];
        for i in 0..mx {
            for j in 0..my {
                col[j] = f[j * mx + i];
            }
            for (j, s) in spline_slopes(&col, h, periodic).into_iter().enumerate() {
                fy[j * mx + i] = s;
            }
            for j in 0..my {
                col[j] = fx[j * mx + i];
            }
            for (j, s) in spline_slopes(&col, h, periodic).into_iter().enumerate() {
                fxy[j * mx + i] = s;
            }
        }
        BicubicSpline {
            spec,
            f,
            fx,
            fy,
            fxy,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Cell index and local coordinate along one axis, from a fractional
    /// node index.
    #[inline]
    fn locate(&self, p: f64, cells: usize) -> (usize, usize, f64) {
        match self.spec.topology {
            Topology::Torus => {
                let pr = p.rem_euclid(cells as f64);
                let c = (pr.floor() as usize).min(cells - 1);
                (c, (c + 1) % cells, pr - c as f64)
            }
            Topology::Box => {
                let pr = p.clamp(0.0, cells as f64);
                let c = (pr.floor() as usize).min(cells - 1);
                (c, c + 1, pr - c as f64)
            }
        }
    }

    /// Value and gradient at an arbitrary point. Box inputs are clamped to
    /// the domain; torus inputs are wrapped.
    pub fn eval(&self, x: f64, y: f64) -> (f64, [f64; 2]) {
        let h = self.spec.h();
        self.eval_index(x / h, y / h)
    }

    /// As [`eval`](Self::eval) with the point given in node-index units.
    /// Integer inputs return the stored node value exactly.
    pub fn eval_index(&self, p: f64, q: f64) -> (f64, [f64; 2]) {
        let h = self.spec.h();
        let (i0, i1, t) = self.locate(p, self.spec.nx);
        let (j0, j1, s) = self.locate(q, self.spec.ny);
        let (vx, sx, dvx, dsx) = hermite(t);
        let (vy, sy, dvy, dsy) = hermite(s);
        let mx = self.spec.mx();
        let ii = [i0, i1];
        let jj = [j0, j1];
        let mut val = 0.0;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for p in 0..2 {
            for q in 0..2 {
                let k = jj[q] * mx + ii[p];
                let (f, fx, fy, fxy) = (self.f[k], self.fx[k] * h, self.fy[k] * h, self.fxy[k] * h * h);
                val += f * vx[p] * vy[q] + fx * sx[p] * vy[q] + fy * vx[p] * sy[q] + fxy * sx[p] * sy[q];
                gx += f * dvx[p] * vy[q] + fx * dsx[p] * vy[q] + fy * dvx[p] * sy[q] + fxy * dsx[p] * sy[q];
                gy += f * vx[p] * dvy[q] + fx * sx[p] * dvy[q] + fy * vx[p] * dsy[q] + fxy * sx[p] * dsy[q];
            }
        }
        (val, [gx / h, gy / h])
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.eval(x, y).0
    }
}
