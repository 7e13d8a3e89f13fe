use super::{GridFunction, GridSpec};

/// Nodewise symmetric Hessian approximations with sorted eigenvalues.
///
/// On a box only nodes with a one-node margin carry values; `defined`
/// marks them. Undefined nodes hold zeros.
#[derive(Clone, Debug)]
pub struct HessianField {
    pub spec: GridSpec,
    pub uxx: Vec<f64>,
    pub uxy: Vec<f64>,
    pub uyy: Vec<f64>,
    /// Smaller eigenvalue.
    pub lam1: Vec<f64>,
    /// Larger eigenvalue.
    pub lam2: Vec<f64>,
    pub defined: Vec<bool>,
}

impl HessianField {
    #[inline]
    pub fn det(&self, k: usize) -> f64 {
        self.uxx[k] * self.uyy[k] - self.uxy[k] * self.uxy[k]
    }

    #[inline]
    pub fn frobenius(&self, k: usize) -> f64 {
        (self.uxx[k].powi(2) + 2.0 * self.uxy[k].powi(2) + self.uyy[k].powi(2)).sqrt()
    }
}

/// Eigenvalues `(l1, l2)`, `l1 <= l2`, of `[[a, b], [b, c]]`.
///
/// The small-magnitude eigenvalue is recovered from the determinant so that
/// `l1 * l2` reproduces `a c - b^2` to rounding.
pub fn sym_eigen(a: f64, b: f64, c: f64) -> (f64, f64) {
    let m = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let det = a * c - b * b;
    let big = if m >= 0.0 { m + r } else { m - r };
    let small = if big != 0.0 { det / big } else { 0.0 };
    if big >= small {
        (small, big)
    } else {
        (big, small)
    }
}

/// Second-order central differences: the 3-point stencil for `uxx`, `uyy`
/// and the 4-point diagonal stencil for `uxy`.
pub fn hessian_central(u: &GridFunction) -> HessianField {
    let spec = *u.spec();
    let n = spec.len();
    let h2 = spec.h() * spec.h();
    let v = u.values();
    let mut out = HessianField {
        spec,
        uxx: vec![0.0; n],
        uxy: vec![0.0; n],
        uyy: vec![0.0; n],
        lam1: vec![0.0; n],
        lam2: vec![0.0; n],
        defined: vec![false; n],
    };
    for j in 0..spec.my() {
        for i in 0..spec.mx() {
            if spec.margin(i, j) < 1 {
                continue;
            }
            let k = spec.idx(i, j);
            let at = |di, dj| v[spec.offset(i, j, di, dj).unwrap()];
            let c = v[k];
            let uxx = (at(1, 0) - 2.0 * c + at(-1, 0)) / h2;
            let uyy = (at(0, 1) - 2.0 * c + at(0, -1)) / h2;
            let uxy = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h2);
            let (l1, l2) = sym_eigen(uxx, uxy, uyy);
            out.uxx[k] = uxx;
            out.uyy[k] = uyy;
            out.uxy[k] = uxy;
            out.lam1[k] = l1;
            out.lam2[k] = l2;
            out.defined[k] = true;
        }
    }
    out
}
