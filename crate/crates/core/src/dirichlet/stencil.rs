//! Node layout, directional differences and the two discretizations used by
//! the Dirichlet solver.

use crate::grid::{
    hessian_central, sym_eigen, GridFunction, GridSpec, CONVEXITY_DIRECTIONS, DEGENERACY_FLOOR,
};
use crate::linalg::CsrMatrix;
use crate::numeric::norm2;

/// One side of a directional stencil: a grid node, or a boundary crossing at
/// fraction `theta` of the step carrying the boundary value.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Arm {
    pub node: Option<usize>,
    pub theta: f64,
    pub value: f64,
}

/// Arms along [`CONVEXITY_DIRECTIONS`], `[plus, minus]` per direction.
pub(crate) type Arms = [[Arm; 2]; 8];

/// Unknowns of a solve. Linear systems live on the `(nx - 1) x (ny - 1)`
/// interior with identity rows for fixed nodes.
pub(crate) struct Layout {
    pub spec: GridSpec,
    pub unknown: Vec<bool>,
    /// Grid indices of the unknowns in ascending order.
    pub nodes: Vec<usize>,
    /// Boundary-cut stencils, per unknown, where the domain is curved.
    pub walls: Vec<Option<Box<Arms>>>,
    /// Nodes a regular stencil may end on.
    pub reach: Vec<bool>,
}

impl Layout {
    pub fn slots(&self) -> usize {
        (self.spec.nx - 1) * (self.spec.ny - 1)
    }

    #[inline]
    pub fn slot(&self, k: usize) -> usize {
        let (i, j) = self.spec.ij(k);
        (j - 1) * (self.spec.nx - 1) + (i - 1)
    }

    pub fn slot_node(&self, q: usize) -> usize {
        let w = self.spec.nx - 1;
        self.spec.idx(q % w + 1, q / w + 1)
    }

    /// Second difference along `e` at the `p`-th unknown, normalized by
    /// `|e|^2 h^2`, or `None` when a regular stencil leaves `reach`.
    ///
    /// Cut arms use the nonuniform three-point formula
    /// `2 / (L (tp + tm)) [(u+ - u) / tp + (u- - u) / tm]`, exact on
    /// quadratics.
    pub fn dir_diff(&self, v: &[f64], p: usize, e: (isize, isize)) -> Option<DirDiff> {
        let k = self.nodes[p];
        let l = (e.0 * e.0 + e.1 * e.1) as f64 * (self.spec.h() * self.spec.h());
        if let Some(arms) = &self.walls[p] {
            let (d, flip) = direction_index(e);
            let [plus, minus] = if flip { [arms[d][1], arms[d][0]] } else { arms[d] };
            let (tp, tm) = (plus.theta, minus.theta);
            let cp = 2.0 / (l * tp * (tp + tm));
            let cm = 2.0 / (l * tm * (tp + tm));
            let up = plus.node.map_or(plus.value, |n| v[n]);
            let um = minus.node.map_or(minus.value, |n| v[n]);
            return Some(DirDiff {
                value: cp * up + cm * um - (cp + cm) * v[k],
                terms: [(plus.node, cp), (minus.node, cm), (Some(k), -(cp + cm))],
                wall: plus.node.map_or(cp * plus.value, |_| 0.0)
                    + minus.node.map_or(cm * minus.value, |_| 0.0),
            });
        }
        let (i, j) = self.spec.ij(k);
        let pn = self.spec.offset(i, j, e.0, e.1).filter(|&n| self.reach[n])?;
        let mn = self.spec.offset(i, j, -e.0, -e.1).filter(|&n| self.reach[n])?;
        Some(DirDiff {
            value: (v[pn] - 2.0 * v[k] + v[mn]) / l,
            terms: [(Some(pn), 1.0 / l), (Some(mn), 1.0 / l), (Some(k), -2.0 / l)],
            wall: 0.0,
        })
    }

    /// Builds the boundary-cut arms for a domain `{phi < 0}` with boundary
    /// data `g`. Returns `None` for nodes whose full stencil stays inside.
    pub fn cut_arms(
        spec: &GridSpec,
        k: usize,
        inside: &[bool],
        phi: &dyn Fn(f64, f64) -> f64,
        g: &dyn Fn(f64, f64) -> f64,
    ) -> Option<Box<Arms>> {
        let (i, j) = spec.ij(k);
        let x = spec.coord(i, j);
        let h = spec.h();
        let mut regular = true;
        let mut arms = [[Arm {
            node: None,
            theta: 1.0,
            value: 0.0,
        }; 2]; 8];
        for (d, &(di, dj)) in CONVEXITY_DIRECTIONS.iter().enumerate() {
            for (s, sign) in [1isize, -1].into_iter().enumerate() {
                let (ei, ej) = (sign * di, sign * dj);
                let n = spec.offset(i, j, ei, ej).filter(|&n| inside[n]);
                arms[d][s] = match n {
                    Some(n) => Arm {
                        node: Some(n),
                        theta: 1.0,
                        value: 0.0,
                    },
                    None => {
                        regular = false;
                        let step = [ei as f64 * h, ej as f64 * h];
                        let at = |t: f64| phi(x[0] + t * step[0], x[1] + t * step[1]);
                        let (mut lo, mut hi) = (0.0, 1.0);
                        if at(1.0) < 0.0 {
                            // endpoint off the grid but inside the level set;
                            // treat the step end as the boundary
                            lo = 1.0;
                        } else {
                            for _ in 0..60 {
                                let mid = 0.5 * (lo + hi);
                                if at(mid) < 0.0 {
                                    lo = mid;
                                } else {
                                    hi = mid;
                                }
                            }
                        }
                        let t = lo.max(1e-8);
                        Arm {
                            node: None,
                            theta: t,
                            value: g(x[0] + t * step[0], x[1] + t * step[1]),
                        }
                    }
                };
            }
        }
        if regular {
            None
        } else {
            Some(Box::new(arms))
        }
    }
}

/// Index into [`CONVEXITY_DIRECTIONS`] of `e` or `-e`, and whether `-e` matched.
fn direction_index(e: (isize, isize)) -> (usize, bool) {
    for (d, &c) in CONVEXITY_DIRECTIONS.iter().enumerate() {
        if c == e {
            return (d, false);
        }
        if c == (-e.0, -e.1) {
            return (d, true);
        }
    }
    unreachable!("stencil direction {e:?} is not tabulated")
}

/// A directional second difference as an affine function of the unknowns:
/// `value = sum coef * u[node] + wall`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DirDiff {
    pub value: f64,
    pub terms: [(Option<usize>, f64); 3],
    pub wall: f64,
}

/// Residual of a discretization at the unknowns.
pub(crate) struct Evaluation {
    pub residual: Vec<f64>,
    pub sup: f64,
    pub l2: f64,
    /// Hessian positive definite, per unknown.
    pub convex: Vec<bool>,
}

impl Evaluation {
    fn new(residual: Vec<f64>, convex: Vec<bool>) -> Self {
        let sup = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        Evaluation {
            sup,
            l2: norm2(&residual),
            residual,
            convex,
        }
    }
}

pub(crate) trait Discretization {
    fn evaluate(&self, layout: &Layout, f: &GridFunction, u: &GridFunction) -> Evaluation;
    /// Newton matrix and right-hand side at `u`.
    fn linearize(
        &self,
        layout: &Layout,
        f: &GridFunction,
        u: &GridFunction,
        ev: &Evaluation,
    ) -> (CsrMatrix, Vec<f64>);
    /// Whether steps must keep the Hessian positive definite.
    fn guards_convexity(&self) -> bool;
}

/// Accumulates a matrix row, merging repeated columns.
struct RowBuilder {
    row: Vec<(usize, f64)>,
}

impl RowBuilder {
    fn new() -> Self {
        RowBuilder {
            row: Vec::with_capacity(17),
        }
    }

    fn add(&mut self, layout: &Layout, d: &DirDiff, scale: f64) {
        for &(node, c) in &d.terms {
            if let Some(n) = node.filter(|&n| layout.unknown[n]) {
                let col = layout.slot(n);
                match self.row.iter_mut().find(|(cc, _)| *cc == col) {
                    Some(entry) => entry.1 += c * scale,
                    None => self.row.push((col, c * scale)),
                }
            }
        }
    }

    fn flush(&mut self, mat: &mut CsrMatrix) {
        for &(col, c) in &self.row {
            mat.push(col, c);
        }
        mat.finish_row();
        self.row.clear();
    }
}

/// Axis, diagonal and mixed differences `(uxx, uyy, uxy)` at a cut node,
/// with `uxy = (D_(1,1) - D_(1,-1)) / 2`.
fn cut_hessian(layout: &Layout, v: &[f64], p: usize) -> ([f64; 3], [DirDiff; 4]) {
    let d = [(1, 0), (0, 1), (1, 1), (1, -1)].map(|e| layout.dir_diff(v, p, e).expect("cut arms"));
    ([d[0].value, d[1].value, 0.5 * (d[2].value - d[3].value)], d)
}

/// `det` of the central Hessian.
pub(crate) struct Central;

impl Discretization for Central {
    fn evaluate(&self, layout: &Layout, f: &GridFunction, u: &GridFunction) -> Evaluation {
        let hf = hessian_central(u);
        let v = u.values();
        let mut residual = Vec::with_capacity(layout.nodes.len());
        let mut convex = Vec::with_capacity(layout.nodes.len());
        for (p, &k) in layout.nodes.iter().enumerate() {
            let (det, lam1) = if layout.walls[p].is_some() {
                let ([a, c, b], _) = cut_hessian(layout, v, p);
                (a * c - b * b, sym_eigen(a, b, c).0)
            } else {
                (hf.det(k), hf.lam1[k])
            };
            residual.push(det - f.values()[k]);
            convex.push(lam1 > DEGENERACY_FLOOR);
        }
        Evaluation::new(residual, convex)
    }

    fn linearize(
        &self,
        layout: &Layout,
        _f: &GridFunction,
        u: &GridFunction,
        ev: &Evaluation,
    ) -> (CsrMatrix, Vec<f64>) {
        // d det(D^2 u)[w] = u_yy w_xx + u_xx w_yy - 2 u_xy w_xy
        let spec = layout.spec;
        let hf = hessian_central(u);
        let v = u.values();
        let h2 = spec.h() * spec.h();
        let slots = layout.slots();
        let mut rhs = vec![0.0; slots];
        let mut pos = vec![usize::MAX; spec.len()];
        for (p, &k) in layout.nodes.iter().enumerate() {
            rhs[layout.slot(k)] = -ev.residual[p];
            pos[k] = p;
        }
        let mut mat = CsrMatrix::with_capacity(slots, 9 * slots);
        let mut row = RowBuilder::new();
        for q in 0..slots {
            let k = layout.slot_node(q);
            if !layout.unknown[k] {
                mat.push(q, 1.0);
                mat.finish_row();
                continue;
            }
            let p = pos[k];
            if layout.walls[p].is_some() {
                let ([a, c, b], d) = cut_hessian(layout, v, p);
                row.add(layout, &d[0], c);
                row.add(layout, &d[1], a);
                row.add(layout, &d[2], -b);
                row.add(layout, &d[3], b);
                row.flush(&mut mat);
                continue;
            }
            let (i, j) = spec.ij(k);
            let cx = hf.uyy[k] / h2;
            let cy = hf.uxx[k] / h2;
            let cm = -hf.uxy[k] / (2.0 * h2);
            let stencil = [
                ((0, 0), -2.0 * cx - 2.0 * cy),
                ((1, 0), cx),
                ((-1, 0), cx),
                ((0, 1), cy),
                ((0, -1), cy),
                ((1, 1), cm),
                ((-1, -1), cm),
                ((1, -1), -cm),
                ((-1, 1), -cm),
            ];
            for ((di, dj), c) in stencil {
                let n = spec.offset(i, j, di, dj).expect("interior node");
                if layout.unknown[n] {
                    mat.push(layout.slot(n), c);
                }
            }
            mat.finish_row();
        }
        (mat, rhs)
    }

    fn guards_convexity(&self) -> bool {
        true
    }
}

use crate::grid::Frame;

/// Wide-stencil operator: minimum over frames of the floored product.
pub(crate) struct Monotone {
    pub frames: &'static [Frame],
}

impl Monotone {
    /// Operator value, active frame and its two differences.
    fn at(&self, layout: &Layout, v: &[f64], p: usize) -> (f64, [DirDiff; 2]) {
        let mut best: Option<(f64, [DirDiff; 2])> = None;
        for frame in self.frames {
            let (Some(a), Some(b)) = (layout.dir_diff(v, p, frame[0]), layout.dir_diff(v, p, frame[1]))
            else {
                continue;
            };
            let val = a.value.max(DEGENERACY_FLOOR) * b.value.max(DEGENERACY_FLOOR);
            if best.as_ref().is_none_or(|(bv, _)| val < *bv) {
                best = Some((val, [a, b]));
            }
        }
        best.expect("axis frame always fits")
    }

    /// Nonlinear Gauss-Seidel.
    ///
    /// With the neighbours frozen, a difference is `D = gamma (s - t)` in the
    /// centre value `t`, and a frame gives `gamma1 gamma2 (s1 - t)(s2 - t) =
    /// f` with admissible root `t = (s1 + s2 - sqrt((s1 - s2)^2 + 4 f /
    /// (gamma1 gamma2))) / 2`. The operator is the minimum over frames and
    /// decreasing in `t`, so the nodal solution is the smallest frame root.
    /// Sweeps stop once the residual sup-norm falls below `target` or after
    /// a budget proportional to the number of unknowns.
    pub fn relax(&self, layout: &Layout, f: &GridFunction, u: &mut GridFunction, target: f64) {
        let budget = 4 * layout.nodes.len() + 100;
        for sweep in 0..budget {
            if sweep % 10 == 0 && self.evaluate(layout, f, u).sup <= target {
                return;
            }
            for (p, &k) in layout.nodes.iter().enumerate() {
                let mut t = f64::INFINITY;
                for frame in self.frames {
                    let v = u.values();
                    let (Some(a), Some(b)) =
                        (layout.dir_diff(v, p, frame[0]), layout.dir_diff(v, p, frame[1]))
                    else {
                        continue;
                    };
                    // D = gamma (s - t) with gamma = -centre coefficient
                    let split = |d: &DirDiff| {
                        let gamma = -d.terms[2].1;
                        (gamma, (d.value + gamma * v[k]) / gamma)
                    };
                    let (g1, s1) = split(&a);
                    let (g2, s2) = split(&b);
                    let fk = f.values()[k];
                    let root = 0.5 * (s1 + s2 - ((s1 - s2).powi(2) + 4.0 * fk / (g1 * g2)).sqrt());
                    t = t.min(root);
                }
                u.values_mut()[k] = t;
            }
        }
    }
}

impl Discretization for Monotone {
    fn evaluate(&self, layout: &Layout, f: &GridFunction, u: &GridFunction) -> Evaluation {
        let v = u.values();
        let residual: Vec<f64> = layout
            .nodes
            .iter()
            .enumerate()
            .map(|(p, &k)| self.at(layout, v, p).0 - f.values()[k])
            .collect();
        let n = residual.len();
        Evaluation::new(residual, vec![true; n])
    }

    fn linearize(
        &self,
        layout: &Layout,
        f: &GridFunction,
        u: &GridFunction,
        _ev: &Evaluation,
    ) -> (CsrMatrix, Vec<f64>) {
        // Policy linearization: the active frame is frozen and the product
        // c1 c2, c = max(D, floor), is expanded to first order about the
        // clamped values but evaluated at the raw differences,
        // c2 D1 + c1 D2 - c1 c2. Off the floor this is plain Newton.
        let spec = layout.spec;
        let v = u.values();
        let slots = layout.slots();
        let mut pos = vec![usize::MAX; spec.len()];
        for (p, &k) in layout.nodes.iter().enumerate() {
            pos[k] = p;
        }
        let mut mat = CsrMatrix::with_capacity(slots, 5 * slots);
        let mut rhs = vec![0.0; slots];
        let mut row = RowBuilder::new();
        for q in 0..slots {
            let k = layout.slot_node(q);
            if !layout.unknown[k] {
                mat.push(q, 1.0);
                mat.finish_row();
                continue;
            }
            let (_, [a, b]) = self.at(layout, v, pos[k]);
            let c = [a.value.max(DEGENERACY_FLOOR), b.value.max(DEGENERACY_FLOOR)];
            rhs[q] = f.values()[k] - (c[1] * a.value + c[0] * b.value - c[0] * c[1]);
            row.add(layout, &a, c[1]);
            row.add(layout, &b, c[0]);
            row.flush(&mut mat);
        }
        (mat, rhs)
    }

    fn guards_convexity(&self) -> bool {
        false
    }
}

/// Matrix and right-hand side of `D_(1,0) u + D_(0,1) u = rhs` on the
/// unknowns, with fixed nodes and walls moved to the right.
pub(crate) fn laplacian_system(
    layout: &Layout,
    fixed: &[f64],
    source: impl Fn(usize) -> f64,
) -> (CsrMatrix, Vec<f64>) {
    let slots = layout.slots();
    let mut pos = vec![usize::MAX; layout.spec.len()];
    for (p, &k) in layout.nodes.iter().enumerate() {
        pos[k] = p;
    }
    let mut mat = CsrMatrix::with_capacity(slots, 5 * slots);
    let mut rhs = vec![0.0; slots];
    let mut row = RowBuilder::new();
    for q in 0..slots {
        let k = layout.slot_node(q);
        if !layout.unknown[k] {
            mat.push(q, 1.0);
            mat.finish_row();
            continue;
        }
        let mut b = source(k);
        for e in [(1, 0), (0, 1)] {
            let d = layout.dir_diff(fixed, pos[k], e).expect("axis stencil");
            row.add(layout, &d, 1.0);
            b -= d.wall;
            for &(node, c) in &d.terms {
                if let Some(n) = node.filter(|&n| !layout.unknown[n]) {
                    b -= c * fixed[n];
                }
            }
        }
        row.flush(&mut mat);
        rhs[q] = b;
    }
    (mat, rhs)
}
