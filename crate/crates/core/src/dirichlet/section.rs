//! Sections `{u < l}` cut from the graph of a convex function: the growth of
//! `u` away from its supporting plane, and normalization of the section by
//! its minimum-volume enclosing ellipse.

use super::{AffineMap, ConvexSolution};
use crate::error::{Error, Result};
use crate::grid::hull::{convex_hull, inner_distance, polygon_area};
use crate::grid::GridFunction;
use crate::numeric::fit_line;
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

/// Affine function `l(x, y) = a x + b y + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineFunction {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AffineFunction {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        AffineFunction { a, b, c }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(0.0, 0.0, c)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

/// The nodes where `u < l`.
#[derive(Clone, Debug)]
pub struct SliceSection {
    pub l: AffineFunction,
    pub mask: Vec<bool>,
    /// No node of the section lies on the box boundary.
    pub compact: bool,
    u: GridFunction,
}

impl SliceSection {
    pub fn new(u: &GridFunction, l: AffineFunction) -> Result<Self> {
        let spec = *u.spec();
        if spec.is_torus() {
            return Err(Error::SpecMismatch("sections are cut on a box grid".into()));
        }
        let mut mask = vec![false; spec.len()];
        let mut compact = true;
        for j in 0..spec.my() {
            for i in 0..spec.mx() {
                let [x, y] = spec.coord(i, j);
                let k = spec.idx(i, j);
                if u.values()[k] < l.eval(x, y) {
                    mask[k] = true;
                    compact &= spec.margin(i, j) > 0;
                }
            }
        }
        Ok(SliceSection {
            l,
            mask,
            compact,
            u: u.clone(),
        })
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        let spec = self.u.spec();
        (0..spec.len())
            .filter(|&k| self.mask[k])
            .map(|k| {
                let (i, j) = spec.ij(k);
                spec.coord(i, j)
            })
            .collect()
    }

    /// Every grid row and column meets the section in one interval, as it
    /// must for a convex `u`.
    pub fn is_line_convex(&self) -> bool {
        let spec = self.u.spec();
        let interval = |it: &mut dyn Iterator<Item = bool>| {
            let mut runs = 0;
            let mut prev = false;
            for m in it {
                if m && !prev {
                    runs += 1;
                }
                prev = m;
            }
            runs <= 1
        };
        (0..spec.my()).all(|j| interval(&mut (0..spec.mx()).map(|i| self.mask[spec.idx(i, j)])))
            && (0..spec.mx())
                .all(|i| interval(&mut (0..spec.my()).map(|j| self.mask[spec.idx(i, j)])))
    }
}

/// Growth of `u` away from its supporting plane at the contact point.
#[derive(Clone, Debug)]
pub struct Growth {
    /// Node where `u - l` is smallest.
    pub contact: [f64; 2],
    /// `min (u - l)`; the supporting plane is `l + depth`.
    pub depth: f64,
    pub radii: Vec<f64>,
    /// `max_{|x - x0| <= r} (u - p)` for each radius.
    pub excess: Vec<f64>,
    /// Fitted exponent in `excess ~ c r^beta`.
    pub beta: f64,
    pub prefactor: f64,
}

impl Growth {
    /// `u` separates from the plane at a polynomial rate.
    pub fn polynomial_separation(&self) -> bool {
        self.beta.is_finite() && self.excess.iter().all(|&e| e > 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct ConvexityProbe {
    pub section: SliceSection,
    /// Absent when the section reaches the boundary.
    pub growth: Option<Growth>,
}

/// Smallest dyadic radius, in mesh widths, used in the growth fit.
const FIRST_RADIUS: f64 = 2.0;

/// Cuts the section `{u < l}` and, when it stays off the boundary, measures
/// how fast `u` leaves its supporting plane at the contact point over dyadic
/// radii `2h, 4h, ...` up to the distance from the contact point to the
/// complement of the section.
pub fn strict_convexity_probe(sol: &ConvexSolution, l: AffineFunction) -> Result<ConvexityProbe> {
    let section = SliceSection::new(&sol.u, l)?;
    if section.count() == 0 {
        return Err(Error::Degenerate("section is empty, no contact point".into()));
    }
    if !section.compact {
        return Ok(ConvexityProbe {
            section,
            growth: None,
        });
    }
    let u = &sol.u;
    let spec = *u.spec();
    let h = spec.h();
    let gap = |k: usize| {
        let (i, j) = spec.ij(k);
        let [x, y] = spec.coord(i, j);
        u.values()[k] - l.eval(x, y)
    };
    let (k0, depth) = (0..spec.len())
        .filter(|&k| section.mask[k])
        .map(|k| (k, gap(k)))
        .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
    let (i0, j0) = spec.ij(k0);
    let contact = spec.coord(i0, j0);
    let dist = |k: usize| {
        let (i, j) = spec.ij(k);
        let (di, dj) = (i as f64 - i0 as f64, j as f64 - j0 as f64);
        (di * di + dj * dj).sqrt() * h
    };
    let reach = (0..spec.len())
        .filter(|&k| !section.mask[k])
        .map(dist)
        .fold(f64::INFINITY, f64::min);
    let mut radii = Vec::new();
    let mut r = FIRST_RADIUS * h;
    while r < reach {
        radii.push(r);
        r *= 2.0;
    }
    if radii.len() < 2 {
        return Err(Error::Degenerate(format!(
            "section too small for a growth fit ({} dyadic radii)",
            radii.len()
        )));
    }
    let excess: Vec<f64> = radii
        .iter()
        .map(|&r| {
            (0..spec.len())
                .filter(|&k| dist(k) <= r * (1.0 + 1e-12))
                .map(|k| gap(k) - depth)
                .fold(0.0, f64::max)
        })
        .collect();
    let (beta, prefactor) = if excess.iter().all(|&e| e > 0.0) {
        let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let ys: Vec<f64> = excess.iter().map(|e| e.ln()).collect();
        let fit = fit_line(&xs, &ys).expect("distinct radii");
        (fit.slope, fit.intercept.exp())
    } else {
        (f64::INFINITY, 0.0)
    };
    Ok(ConvexityProbe {
        section,
        growth: Some(Growth {
            contact,
            depth,
            radii,
            excess,
            beta,
            prefactor,
        }),
    })
}

/// Map that sends a compact section to a set between the unit ball and the
/// ball of radius `2` (up to the enclosing-ellipse tolerance): the hull of
/// the section's nodes is mapped so its minimum-volume enclosing ellipse
/// becomes a disc centred at the origin, then scaled until the largest disc
/// about the origin inside the image has radius 1.
pub fn normalize_section(s: &SliceSection) -> Result<AffineMap> {
    if !s.compact {
        return Err(Error::InvalidParameter("section touches the boundary".into()));
    }
    let hull = convex_hull(&s.points());
    let area = polygon_area(&hull);
    if hull.len() < 3 || area <= 0.0 {
        return Err(Error::Degenerate(format!("section hull has zero area ({} vertices)", hull.len())));
    }
    let (center, shape) = enclosing_ellipse(&hull, 1e-12);
    let eig = shape.symmetric_eigen();
    let root = eig.eigenvectors
        * Matrix2::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
        * eig.eigenvectors.transpose();
    let to_disc = AffineMap::new(
        [[root[(0, 0)], root[(0, 1)]], [root[(1, 0)], root[(1, 1)]]],
        {
            let t = -(root * center);
            [t[0], t[1]]
        },
    );
    let image: Vec<[f64; 2]> = hull.iter().map(|&p| to_disc.apply(p)).collect();
    let rho = inner_distance(&convex_hull(&image), [0.0, 0.0]);
    if !(rho > 0.0) {
        return Err(Error::Degenerate("ellipse centre outside the section".into()));
    }
    let scale = 1.0 / rho;
    Ok(AffineMap::new(
        [
            [scale * to_disc.a[0][0], scale * to_disc.a[0][1]],
            [scale * to_disc.a[1][0], scale * to_disc.a[1][1]],
        ],
        [scale * to_disc.b[0], scale * to_disc.b[1]],
    ))
}

/// Radii `(inner, outer)` of the largest disc about the origin inside, and
/// the smallest disc about the origin containing, the image of the
/// section's hull.
pub fn sandwich_radii(s: &SliceSection, map: &AffineMap) -> (f64, f64) {
    let hull = convex_hull(&s.points());
    let image = convex_hull(&hull.iter().map(|&p| map.apply(p)).collect::<Vec<_>>());
    let inner = inner_distance(&image, [0.0, 0.0]);
    let outer = image
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
        .fold(0.0, f64::max);
    (inner, outer)
}

/// Minimum-volume enclosing ellipse `{x : (x - c)^T M (x - c) <= 1}` by
/// Khachiyan's coordinate ascent with Wolfe-Atwood away steps.
fn enclosing_ellipse(points: &[[f64; 2]], tol: f64) -> (Vector2<f64>, Matrix2<f64>) {
    let n = points.len();
    let q: Vec<Vector3<f64>> = points.iter().map(|p| Vector3::new(p[0], p[1], 1.0)).collect();
    let mut w = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let mut x = Matrix3::zeros();
        for (qi, wi) in q.iter().zip(&w) {
            x += *wi * qi * qi.transpose();
        }
        let xi = x.try_inverse().expect("hull spans the plane");
        let m: Vec<f64> = q.iter().map(|qi| (qi.transpose() * xi * qi)[0]).collect();
        let (up, m_up) = m
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        let (down, m_down) = m
            .iter()
            .copied()
            .enumerate()
            .filter(|&(i, _)| w[i] > 0.0)
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        // toward the most violated point, or away from the least useful one
        let (j, step) = if m_up - 3.0 >= 3.0 - m_down {
            (up, (m_up - 3.0) / (3.0 * (m_up - 1.0)))
        } else {
            let full = -w[down] / (1.0 - w[down]);
            (down, ((m_down - 3.0) / (3.0 * (m_down - 1.0))).max(full))
        };
        if (m_up - 3.0).max(3.0 - m_down) < tol * 3.0 {
            break;
        }
        for wi in w.iter_mut() {
            *wi *= 1.0 - step;
        }
        w[j] = (w[j] + step).max(0.0);
    }
    let mut c = Vector2::zeros();
    for (p, wi) in points.iter().zip(&w) {
        c += *wi * Vector2::new(p[0], p[1]);
    }
    let mut cov = Matrix2::zeros();
    for (p, wi) in points.iter().zip(&w) {
        let v = Vector2::new(p[0], p[1]);
        cov += *wi * v * v.transpose();
    }
    cov -= c * c.transpose();
    let m = cov.try_inverse().expect("hull spans the plane") / 2.0;
    (c, m)
}
