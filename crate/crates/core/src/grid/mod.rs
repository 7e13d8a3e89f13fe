//! Uniform two-dimensional grids and the calculus built on them.
//!
//! A [`GridSpec`] describes either a box `[0, lx] x [0, ly]` with nodes on
//! the boundary, or a periodic torus of the same extent. Node `(i, j)` sits
//! at `(i h, j h)`. Boxes carry `(nx + 1) x (ny + 1)` nodes, tori `nx x ny`.
//! Values are stored row-major with `i` running fastest.

mod diagnostics;
mod hessian;
pub mod hull;
pub mod interp;
pub(crate) mod monge_ampere;

pub use diagnostics::{
    cell_integral, energy_inequality_constant, gradient_field, gradient_image_volume,
    hessian_lp_norm, is_discretely_convex, oscillation, CONVEXITY_DIRECTIONS,
};
pub use hessian::{hessian_central, sym_eigen, HessianField};
pub use monge_ampere::{
    det_conservative, ma_det, ma_det_conservative, ma_monotone, monotone_frames, DEGENERACY_FLOOR,
};
pub(crate) use monge_ampere::Frame;

use crate::error::{Error, Result};

/// Boundary behaviour of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Topology {
    Box,
    Torus,
}

impl Topology {
    pub fn as_str(self) -> &'static str {
        match self {
            Topology::Box => "box",
            Topology::Torus => "torus",
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(Topology::Box),
            "torus" => Ok(Topology::Torus),
            other => Err(Error::InvalidParameter(format!("unknown topology '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub topology: Topology,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64, topology: Topology) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 4 cells per side (got {nx} x {ny})"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "side lengths must be positive (got {lx} x {ly})"
            )));
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        if (hx - hy).abs() > 1e-12 * hx.max(hy) {
            return Err(Error::InvalidParameter(format!(
                "cells must be square: lx/nx = {hx} but ly/ny = {hy}"
            )));
        }
        Ok(GridSpec {
            nx,
            ny,
            lx,
            ly,
            topology,
        })
    }

    /// `[0, 1]^2` with `n` cells per side.
    pub fn unit_box(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0, Topology::Box)
    }

    /// The unit torus with `n x n` nodes.
    pub fn unit_torus(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0, Topology::Torus)
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn is_torus(&self) -> bool {
        self.topology == Topology::Torus
    }

    /// Number of nodes along x.
    #[inline]
    pub fn mx(&self) -> usize {
        match self.topology {
            Topology::Box => self.nx + 1,
            Topology::Torus => self.nx,
        }
    }

    /// Number of nodes along y.
    #[inline]
    pub fn my(&self) -> usize {
        match self.topology {
            Topology::Box => self.ny + 1,
            Topology::Torus => self.ny,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.mx() * self.my()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.mx() + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.mx(), k / self.mx())
    }

    #[inline]
    pub fn coord(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.h();
        [i as f64 * h, j as f64 * h]
    }

    /// Index of the node offset by `(di, dj)` from `(i, j)`. Wraps on a torus;
    /// `None` when the offset leaves a box.
    #[inline]
    pub fn offset(&self, i: usize, j: usize, di: isize, dj: isize) -> Option<usize> {
        let (mx, my) = (self.mx() as isize, self.my() as isize);
        let (mut a, mut b) = (i as isize + di, j as isize + dj);
        match self.topology {
            Topology::Torus => {
                a = a.rem_euclid(mx);
                b = b.rem_euclid(my);
            }
            Topology::Box => {
                if a < 0 || b < 0 || a >= mx || b >= my {
                    return None;
                }
            }
        }
        Some(b as usize * self.mx() + a as usize)
    }

    /// Distance in nodes from `(i, j)` to the nearest boundary node of a box.
    /// Unbounded on a torus.
    #[inline]
    pub fn margin(&self, i: usize, j: usize) -> usize {
        match self.topology {
            Topology::Torus => usize::MAX,
            Topology::Box => i.min(j).min(self.nx - i).min(self.ny - j),
        }
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SpecMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    pub(crate) fn ensure_torus(&self) -> Result<()> {
        if self.is_torus() {
            Ok(())
        } else {
            Err(Error::SpecMismatch("operation requires a periodic grid".into()))
        }
    }
}

/// Scalar field sampled on the nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::SpecMismatch(format!(
                "expected {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at node {k}")));
        }
        Ok(GridFunction { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        GridFunction {
            spec,
            values: vec![0.0; spec.len()],
        }
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        GridFunction {
            spec,
            values: vec![c; spec.len()],
        }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.len());
        for j in 0..spec.my() {
            for i in 0..spec.mx() {
                let [x, y] = spec.coord(i, j);
                values.push(f(x, y));
            }
        }
        GridFunction { spec, values }
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.spec.idx(i, j)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        crate::numeric::pairwise_sum(&self.values) / self.values.len() as f64
    }

    /// Largest absolute difference to another field on the same grid.
    pub fn sup_distance(&self, other: &GridFunction) -> Result<f64> {
        self.spec.ensure_same(&other.spec)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            spec: self.spec,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// A set of nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    spec: GridSpec,
    mask: Vec<bool>,
}

impl Region {
    pub fn from_mask(spec: GridSpec, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != spec.len() {
            return Err(Error::SpecMismatch("region mask size".into()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyRegion);
        }
        Ok(Region { spec, mask })
    }

    pub fn full(spec: GridSpec) -> Self {
        Region {
            spec,
            mask: vec![true; spec.len()],
        }
    }

    /// Nodes at least `margin` nodes away from the boundary of a box. On a
    /// torus every node qualifies.
    pub fn interior(spec: GridSpec, margin: usize) -> Result<Self> {
        let mut mask = vec![false; spec.len()];
        for j in 0..spec.my() {
            for i in 0..spec.mx() {
                mask[spec.idx(i, j)] = spec.margin(i, j) >= margin;
            }
        }
        Self::from_mask(spec, mask)
    }

    /// Nodes whose coordinates satisfy `pred`.
    pub fn from_predicate(spec: GridSpec, pred: impl Fn(f64, f64) -> bool) -> Result<Self> {
        let mut mask = vec![false; spec.len()];
        for j in 0..spec.my() {
            for i in 0..spec.mx() {
                let [x, y] = spec.coord(i, j);
                mask[spec.idx(i, j)] = pred(x, y);
            }
        }
        Self::from_mask(spec, mask)
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn contains(&self, k: usize) -> bool {
        self.mask[k]
    }

    #[inline]
    pub fn contains_ij(&self, i: usize, j: usize) -> bool {
        self.mask[self.spec.idx(i, j)]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Flat indices of the member nodes, in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(k, &m)| m.then_some(k))
    }

    /// Smallest distance (in nodes) from a member node to the box boundary.
    pub fn min_margin(&self) -> usize {
        self.nodes()
            .map(|k| {
                let (i, j) = self.spec.ij(k);
                self.spec.margin(i, j)
            })
            .min()
            .unwrap_or(0)
    }

    pub fn intersect(&self, other: &Region) -> Result<Region> {
        self.spec.ensure_same(&other.spec)?;
        let mask = self
            .mask
            .iter()
            .zip(&other.mask)
            .map(|(a, b)| *a && *b)
            .collect();
        Region::from_mask(self.spec, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_nonsquare_grids() {
        assert!(GridSpec::new(3, 8, 1.0, 1.0, Topology::Box).is_err());
        assert!(GridSpec::new(8, 8, 1.0, 2.0, Topology::Box).is_err());
        assert!(GridSpec::new(8, 16, 1.0, 2.0, Topology::Box).is_ok());
    }

    #[test]
    fn node_counts_follow_topology() {
        let b = GridSpec::unit_box(8).unwrap();
        let t = GridSpec::unit_torus(8).unwrap();
        assert_eq!(b.len(), 81);
        assert_eq!(t.len(), 64);
        assert_eq!(t.offset(0, 0, -1, -1), Some(t.idx(7, 7)));
        assert_eq!(b.offset(0, 0, -1, 0), None);
    }

    #[test]
    fn interior_region_respects_margin() {
        let b = GridSpec::unit_box(8).unwrap();
        let r = Region::interior(b, 2).unwrap();
        assert_eq!(r.count(), 5 * 5);
        assert_eq!(r.min_margin(), 2);
        assert!(matches!(
            Region::from_predicate(b, |_, _| false),
            Err(Error::EmptyRegion)
        ));
    }
}
