//! Krylov iteration and fast constant-coefficient solvers used as
//! preconditioners by the Newton solvers.

use crate::numeric::{dot, norm2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

#[derive(Clone, Copy, Debug)]
pub struct KrylovStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Right-preconditioned BiCGSTAB for `A x = b`, starting from the given `x`.
///
/// Restarts the shadow residual on breakdown. Returns the iterate with the
/// smallest true residual seen.
pub fn bicgstab(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> KrylovStats {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return KrylovStats {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut r = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let residual = |x: &[f64], r: &mut [f64], tmp: &mut [f64]| {
        apply(x, tmp);
        for k in 0..n {
            r[k] = b[k] - tmp[k];
        }
    };
    residual(x, &mut r, &mut tmp);
    let mut best_x = x.to_vec();
    let mut best = norm2(&r) / bnorm;
    if best <= rel_tol {
        return KrylovStats {
            iterations: 0,
            relative_residual: best,
            converged: true,
        };
    }
    let mut r_hat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 || omega == 0.0 {
            // breakdown: restart from the true residual
            residual(x, &mut r, &mut tmp);
            r_hat.copy_from_slice(&r);
            p.iter_mut().for_each(|q| *q = 0.0);
            v.iter_mut().for_each(|q| *q = 0.0);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            if norm2(&r) / bnorm <= rel_tol {
                break;
            }
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        precond(&p, &mut p_hat);
        apply(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom.abs() < 1e-300 {
            omega = 0.0;
            continue;
        }
        alpha = rho / denom;
        for k in 0..n {
            s[k] = r[k] - alpha * v[k];
        }
        if norm2(&s) / bnorm <= rel_tol {
            for k in 0..n {
                x[k] += alpha * p_hat[k];
            }
            residual(x, &mut r, &mut tmp);
            let rr = norm2(&r) / bnorm;
            if rr < best {
                best = rr;
                best_x.copy_from_slice(x);
            }
            if rr <= rel_tol {
                break;
            }
            continue;
        }
        precond(&s, &mut s_hat);
        apply(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for k in 0..n {
            x[k] += alpha * p_hat[k] + omega * s_hat[k];
            r[k] = s[k] - omega * t[k];
        }
        let rr = norm2(&r) / bnorm;
        if rr < best {
            best = rr;
            best_x.copy_from_slice(x);
        }
        if rr <= rel_tol {
            residual(x, &mut r, &mut tmp);
            let true_rr = norm2(&r) / bnorm;
            if true_rr <= rel_tol * 10.0 {
                best_x.copy_from_slice(x);
                break;
            }
        }
    }
    x.copy_from_slice(&best_x);
    residual(x, &mut r, &mut tmp);
    let rr = norm2(&r) / bnorm;
    KrylovStats {
        iterations: it,
        relative_residual: rr,
        converged: rr <= rel_tol * 10.0,
    }
}

/// Compressed sparse row matrix, assembled row by row.
#[derive(Clone, Debug, Default)]
pub struct CsrMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn with_capacity(rows: usize, nnz: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(rows + 1);
        row_ptr.push(0);
        CsrMatrix {
            row_ptr,
            cols: Vec::with_capacity(nnz),
            vals: Vec::with_capacity(nnz),
        }
    }

    pub fn push(&mut self, col: usize, val: f64) {
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn finish_row(&mut self) {
        self.row_ptr.push(self.cols.len());
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        use rayon::prelude::*;
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *out = acc;
        });
    }
}

/// Forward/inverse 2D FFT on a row-major `nx x ny` array.
pub(crate) struct Fft2 {
    nx: usize,
    ny: usize,
    fx: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            nx,
            ny,
            fx: planner.plan_fft_forward(nx),
            fy: planner.plan_fft_forward(ny),
            ix: planner.plan_fft_inverse(nx),
            iy: planner.plan_fft_inverse(ny),
        }
    }

    fn run(&self, data: &mut [Complex<f64>], fx: &Arc<dyn Fft<f64>>, fy: &Arc<dyn Fft<f64>>) {
        for row in data.chunks_mut(self.nx) {
            fx.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); self.ny];
        for i in 0..self.nx {
            for j in 0..self.ny {
                col[j] = data[j * self.nx + i];
            }
            fy.process(&mut col);
            for j in 0..self.ny {
                data[j * self.nx + i] = col[j];
            }
        }
    }

    pub(crate) fn forward(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.fx, &self.fy);
    }

    /// Unnormalized inverse.
    pub(crate) fn inverse(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.ix, &self.iy);
    }
}

/// Exact inverse of `a Dxx + c Dyy - 2 b Dxy` on a periodic grid, with the
/// 3-point second differences and the centered mixed difference. The
/// constant mode is mapped to zero.
pub struct PeriodicConstSolver {
    nx: usize,
    ny: usize,
    fft: Fft2,
    inv_symbol: Vec<f64>,
}

impl PeriodicConstSolver {
    pub fn new(nx: usize, ny: usize, h: f64, a: f64, b: f64, c: f64) -> Self {
        use std::f64::consts::PI;
        let mut inv_symbol = vec![0.0; nx * ny];
        let h2 = h * h;
        for q in 0..ny {
            let ty = 2.0 * PI * q as f64 / ny as f64;
            for p in 0..nx {
                let tx = 2.0 * PI * p as f64 / nx as f64;
                let sym = (a * (2.0 * tx.cos() - 2.0) + c * (2.0 * ty.cos() - 2.0)
                    + 2.0 * b * tx.sin() * ty.sin())
                    / h2;
                inv_symbol[q * nx + p] = if p == 0 && q == 0 || sym.abs() < 1e-300 {
                    0.0
                } else {
                    1.0 / sym
                };
            }
        }
        PeriodicConstSolver {
            nx,
            ny,
            fft: Fft2::new(nx, ny),
            inv_symbol,
        }
    }

    pub fn solve(&self, rhs: &[f64], out: &mut [f64]) {
        let mut data: Vec<Complex<f64>> = rhs.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.forward(&mut data);
        for (d, s) in data.iter_mut().zip(&self.inv_symbol) {
            *d *= *s;
        }
        self.fft.inverse(&mut data);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        for (o, d) in out.iter_mut().zip(&data) {
            *o = d.re * scale;
        }
    }
}

/// DST-I of length `n - 1` (entries `1..n` of an odd extension).
struct Dst1 {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Dst1 {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Dst1 {
            n,
            fft: planner.plan_fft_forward(2 * n),
        }
    }

    /// `X_k = sum_j a_j sin(pi j k / n)`, `j, k = 1..n-1`.
    fn apply(&self, a: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        let n = self.n;
        buf.clear();
        buf.resize(2 * n, Complex::new(0.0, 0.0));
        for j in 1..n {
            buf[j] = Complex::new(a[j - 1], 0.0);
            buf[2 * n - j] = Complex::new(-a[j - 1], 0.0);
        }
        self.fft.process(buf);
        for k in 1..n {
            a[k - 1] = -0.5 * buf[k].im;
        }
    }
}

/// Exact inverse of `a Dxx + c Dyy` with homogeneous Dirichlet data on the
/// `(nx - 1) x (ny - 1)` interior of a box, by sine transforms.
pub struct DirichletConstSolver {
    nx: usize,
    ny: usize,
    dx: Dst1,
    dy: Dst1,
    inv_symbol: Vec<f64>,
}

impl DirichletConstSolver {
    pub fn new(nx: usize, ny: usize, h: f64, a: f64, c: f64) -> Self {
        use std::f64::consts::PI;
        let (ix, iy) = (nx - 1, ny - 1);
        let mut inv_symbol = vec![0.0; ix * iy];
        for q in 1..ny {
            for p in 1..nx {
                let sx = (2.0 * (PI * p as f64 / nx as f64).cos() - 2.0) / (h * h);
                let sy = (2.0 * (PI * q as f64 / ny as f64).cos() - 2.0) / (h * h);
                inv_symbol[(q - 1) * ix + (p - 1)] = 1.0 / (a * sx + c * sy);
            }
        }
        DirichletConstSolver {
            nx,
            ny,
            dx: Dst1::new(nx),
            dy: Dst1::new(ny),
            inv_symbol,
        }
    }

    fn transform(&self, data: &mut [f64]) {
        let (ix, iy) = (self.nx - 1, self.ny - 1);
        let mut buf = Vec::new();
        for row in data.chunks_mut(ix) {
            self.dx.apply(row, &mut buf);
        }
        let mut col = vec![0.0; iy];
        for i in 0..ix {
            for j in 0..iy {
                col[j] = data[j * ix + i];
            }
            self.dy.apply(&mut col, &mut buf);
            for j in 0..iy {
                data[j * ix + i] = col[j];
            }
        }
    }

    /// `rhs` and `out` are interior arrays of length `(nx-1)(ny-1)`.
    pub fn solve(&self, rhs: &[f64], out: &mut [f64]) {
        out.copy_from_slice(rhs);
        self.transform(out);
        for (o, s) in out.iter_mut().zip(&self.inv_symbol) {
            *o *= s;
        }
        self.transform(out);
        let scale = 4.0 / (self.nx * self.ny) as f64;
        for o in out.iter_mut() {
            *o *= scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn periodic_apply(n: usize, h: f64, a: f64, b: f64, c: f64, x: &[f64], y: &mut [f64]) {
        let at = |i: isize, j: isize| {
            let ii = i.rem_euclid(n as isize) as usize;
            let jj = j.rem_euclid(n as isize) as usize;
            x[jj * n + ii]
        };
        for j in 0..n as isize {
            for i in 0..n as isize {
                let dxx = at(i + 1, j) - 2.0 * at(i, j) + at(i - 1, j);
                let dyy = at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1);
                let dxy =
                    (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1)) / 4.0;
                y[j as usize * n + i as usize] = (a * dxx + c * dyy - 2.0 * b * dxy) / (h * h);
            }
        }
    }

    #[test]
    fn csr_matches_dense() {
        let mut m = CsrMatrix::with_capacity(2, 3);
        m.push(0, 2.0);
        m.push(1, -1.0);
        m.finish_row();
        m.push(1, 3.0);
        m.finish_row();
        let mut y = [0.0; 2];
        m.apply(&[1.0, 2.0], &mut y);
        assert_eq!(y, [0.0, 6.0]);
        assert_eq!(m.rows(), 2);
    }

    #[test]
    fn periodic_solver_inverts_operator() {
        let n = 16;
        let h = 1.0 / n as f64;
        let (a, b, c) = (1.3, 0.4, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        crate::numeric::remove_mean(&mut x);
        let mut rhs = vec![0.0; n * n];
        periodic_apply(n, h, a, b, c, &x, &mut rhs);
        let solver = PeriodicConstSolver::new(n, n, h, a, b, c);
        let mut out = vec![0.0; n * n];
        solver.solve(&rhs, &mut out);
        let err = x.iter().zip(&out).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn dirichlet_solver_and_bicgstab() {
        let n = 12;
        let h = 1.0 / n as f64;
        let m = n - 1;
        let (a, c) = (2.0, 0.5);
        let apply = |x: &[f64], y: &mut [f64]| {
            let at = |i: isize, j: isize| {
                if i < 0 || j < 0 || i >= m as isize || j >= m as isize {
                    0.0
                } else {
                    x[j as usize * m + i as usize]
                }
            };
            for j in 0..m as isize {
                for i in 0..m as isize {
                    y[j as usize * m + i as usize] = (a * (at(i + 1, j) - 2.0 * at(i, j) + at(i - 1, j))
                        + c * (at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1)))
                        / (h * h);
                }
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..m * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut rhs = vec![0.0; m * m];
        apply(&x, &mut rhs);
        let solver = DirichletConstSolver::new(n, n, h, a, c);
        let mut out = vec![0.0; m * m];
        solver.solve(&rhs, &mut out);
        let err = x.iter().zip(&out).fold(0.0f64, |s, (p, q)| s.max((p - q).abs()));
        assert!(err < 1e-10, "{err}");

        // unpreconditioned BiCGSTAB on the same system
        let mut sol = vec![0.0; m * m];
        let stats = bicgstab(apply, |r, z| z.copy_from_slice(r), &rhs, &mut sol, 1e-12, 2000);
        assert!(stats.converged, "{stats:?}");
        let err = x.iter().zip(&sol).fold(0.0f64, |s, (p, q)| s.max((p - q).abs()));
        assert!(err < 1e-8, "{err}");
    }
}
