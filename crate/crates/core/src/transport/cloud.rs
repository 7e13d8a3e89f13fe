use crate::error::{Error, Result};

/// Largest supported point dimension.
pub const MAX_DIM: usize = 4;

/// Weighted points in `R^d`, `1 <= d <= 4`, with weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.is_empty() {
            return Err(Error::InvalidParameter("point cloud is empty".into()));
        }
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidParameter(format!("dimension must be 1..={MAX_DIM} (got {dim})")));
        }
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidParameter("points have mixed dimensions".into()));
        }
        if weights.len() != points.len() {
            return Err(Error::InvalidParameter(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("weights sum to {total:.15}, not 1")));
        }
        Ok(PointCloud {
            dim,
            coords: points.into_iter().flatten().collect(),
            weights,
        })
    }

    /// Equal weights `1/k`.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let k = points.len().max(1);
        Self::new(points, vec![1.0 / k as f64; k])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// All weights equal `1/k` (to rounding).
    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| (x - w).abs() <= 1e-12)
    }

    /// Second moment `sum w |X|^2`.
    pub fn second_moment(&self) -> f64 {
        self.points()
            .zip(&self.weights)
            .map(|(p, w)| w * dot(p, p))
            .sum()
    }

    pub(crate) fn ensure_same_dim(&self, other: &PointCloud) -> Result<()> {
        if self.dim == other.dim {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "clouds live in different dimensions ({} vs {})",
                self.dim, other.dim
            )))
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|a - b|^2 / 2`.
#[inline]
pub fn half_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}
