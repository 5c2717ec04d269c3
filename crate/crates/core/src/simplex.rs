//! Simplex geometry and path containers.
//!
//! Market weights live on the lateral face of the unit simplex. Points are
//! validated against a fixed absolute tolerance on the sum and are never
//! renormalized silently.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on `Σ xᵢ = 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("simplex dimension must be at least 2, got {0}")]
    TooFewAssets(usize),
    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights sum to {0}, expected 1")]
    SumNotOne(f64),
    #[error("point does not lie on the hyperplane sum(x) = 1 (sum = {0})")]
    NotOnHyperplane(f64),
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("capitalization must be strictly positive (row {row}, column {col})")]
    NonpositiveCap { row: usize, col: usize },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
}

/// A validated point of the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(x: Vec<f64>) -> Result<Self, SimplexError> {
        check_simplex(&x)?;
        Ok(SimplexPoint(x))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// True when every weight is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|&w| w > 0.0)
    }
}

impl AsRef<[f64]> for SimplexPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Validates a raw vector as a simplex point without renormalizing it.
pub fn validate_simplex(x: &[f64]) -> Result<SimplexPoint, SimplexError> {
    SimplexPoint::new(x.to_vec())
}

pub(crate) fn check_simplex(x: &[f64]) -> Result<(), SimplexError> {
    if x.len() < 2 {
        return Err(SimplexError::TooFewAssets(x.len()));
    }
    for (index, &value) in x.iter().enumerate() {
        if !value.is_finite() {
            return Err(SimplexError::NonFinite(index));
        }
        if value < 0.0 {
            return Err(SimplexError::NegativeWeight { index, value });
        }
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(SimplexError::SumNotOne(sum));
    }
    Ok(())
}

fn check_hyperplane3(x: &[f64]) -> Result<(), SimplexError> {
    if x.len() != 3 {
        return Err(SimplexError::DimensionMismatch {
            expected: 3,
            got: x.len(),
        });
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(SimplexError::NotOnHyperplane(sum));
    }
    Ok(())
}

/// Squared distance from the node `(1/3, 1/3, 1/3)` for a point of the
/// three-asset hyperplane, in the pairwise-difference form
/// `(1/3)[(x₁−x₂)² + (x₁−x₃)² + (x₂−x₃)²]`.
pub fn radial_r(x: &[f64]) -> Result<f64, SimplexError> {
    check_hyperplane3(x)?;
    Ok(radial_r_pairwise(x))
}

/// Pairwise form of `r`; no hyperplane check.
#[inline]
pub fn radial_r_pairwise(x: &[f64]) -> f64 {
    let a = x[0] - x[1];
    let b = x[0] - x[2];
    let c = x[1] - x[2];
    (a * a + b * b + c * c) / 3.0
}

/// Centered form `Σ (xᵢ − 1/3)²`; equals the pairwise form on the hyperplane.
#[inline]
pub fn radial_r_centered(x: &[f64]) -> f64 {
    x.iter().map(|&v| (v - 1.0 / 3.0) * (v - 1.0 / 3.0)).sum()
}

/// Uniform time grid `t₀, t₀ + dt, …, t₀ + n·dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self, SimplexError> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(SimplexError::InvalidGrid(format!(
                "t0 = {t0}, dt = {dt}"
            )));
        }
        Ok(TimeGrid { t0, dt, n_steps })
    }

    /// Grid over `[0, horizon]` with `round(horizon/dt)` steps.
    pub fn covering(dt: f64, horizon: f64) -> Result<Self, SimplexError> {
        if !(horizon >= dt) {
            return Err(SimplexError::InvalidGrid(format!(
                "horizon {horizon} shorter than dt {dt}"
            )));
        }
        let n = (horizon / dt).round() as usize;
        TimeGrid::new(0.0, dt, n)
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Number of grid points.
    #[inline]
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn end(&self) -> f64 {
        self.time(self.n_steps)
    }

    /// Largest grid index whose time does not exceed `t` (clamped to the grid).
    pub fn index_at_or_before(&self, t: f64) -> usize {
        if t <= self.t0 {
            return 0;
        }
        let k = ((t - self.t0) / self.dt + 1e-9).floor() as usize;
        k.min(self.n_steps)
    }

    /// Coarsens the grid by an integer factor.
    pub fn coarsen(&self, factor: usize) -> Result<Self, SimplexError> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(SimplexError::InvalidGrid(format!(
                "cannot coarsen {} steps by {}",
                self.n_steps, factor
            )));
        }
        TimeGrid::new(self.t0, self.dt * factor as f64, self.n_steps / factor)
    }
}

/// A path of simplex points on a uniform grid, optionally absorbed at
/// `stop_index` (points are constant from there on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPath {
    grid: TimeGrid,
    d: usize,
    data: Vec<f64>,
    stop_index: Option<usize>,
}

impl WeightPath {
    pub fn new(
        grid: TimeGrid,
        d: usize,
        data: Vec<f64>,
        stop_index: Option<usize>,
    ) -> Result<Self, SimplexError> {
        if d < 2 {
            return Err(SimplexError::TooFewAssets(d));
        }
        if data.len() != d * grid.len() {
            return Err(SimplexError::DimensionMismatch {
                expected: d * grid.len(),
                got: data.len(),
            });
        }
        for chunk in data.chunks_exact(d) {
            check_simplex(chunk)?;
        }
        if let Some(s) = stop_index {
            if s > grid.n_steps {
                return Err(SimplexError::InvalidGrid(format!(
                    "stop index {s} beyond grid"
                )));
            }
            let frozen = &data[s * d..(s + 1) * d];
            if data[s * d..].chunks_exact(d).any(|p| p != frozen) {
                return Err(SimplexError::InvalidGrid(
                    "path is not constant after its stop index".into(),
                ));
            }
        }
        Ok(WeightPath {
            grid,
            d,
            data,
            stop_index,
        })
    }

    /// Builds a path from a list of points.
    pub fn from_points(grid: TimeGrid, points: &[Vec<f64>]) -> Result<Self, SimplexError> {
        let d = points.first().map(|p| p.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(d * points.len());
        for p in points {
            if p.len() != d {
                return Err(SimplexError::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        WeightPath::new(grid, d, data, None)
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn point(&self, k: usize) -> &[f64] {
        &self.data[k * self.d..(k + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn stop_index(&self) -> Option<usize> {
        self.stop_index
    }

    /// Index past which nothing moves: the stop index or the last grid index.
    pub fn active_end(&self) -> usize {
        self.stop_index.unwrap_or(self.grid.n_steps)
    }

    pub fn last(&self) -> &[f64] {
        self.point(self.grid.n_steps)
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Freezes the path from grid index `k` onward.
    pub fn stopped_at(&self, k: usize) -> WeightPath {
        let k = k.min(self.grid.n_steps);
        if let Some(s) = self.stop_index {
            if s <= k {
                return self.clone();
            }
        }
        let mut data = self.data.clone();
        let frozen: Vec<f64> = self.point(k).to_vec();
        for chunk in data[k * self.d..].chunks_exact_mut(self.d) {
            chunk.copy_from_slice(&frozen);
        }
        WeightPath {
            grid: self.grid,
            d: self.d,
            data,
            stop_index: Some(k),
        }
    }

    /// Restricts the path to the first `n_steps` steps.
    pub fn truncated(&self, n_steps: usize) -> WeightPath {
        let n = n_steps.min(self.grid.n_steps);
        let grid = TimeGrid {
            n_steps: n,
            ..self.grid
        };
        WeightPath {
            grid,
            d: self.d,
            data: self.data[..(n + 1) * self.d].to_vec(),
            stop_index: self.stop_index.filter(|&s| s <= n),
        }
    }
}

/// Strictly positive capitalizations on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CapPath {
    grid: TimeGrid,
    d: usize,
    caps: Vec<f64>,
}

impl CapPath {
    pub fn new(grid: TimeGrid, d: usize, caps: Vec<f64>) -> Result<Self, SimplexError> {
        if d < 2 {
            return Err(SimplexError::TooFewAssets(d));
        }
        if caps.len() != d * grid.len() {
            return Err(SimplexError::DimensionMismatch {
                expected: d * grid.len(),
                got: caps.len(),
            });
        }
        for (k, row) in caps.chunks_exact(d).enumerate() {
            for (col, &c) in row.iter().enumerate() {
                if !(c > 0.0) || !c.is_finite() {
                    return Err(SimplexError::NonpositiveCap { row: k, col });
                }
            }
        }
        Ok(CapPath { grid, d, caps })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.caps[k * self.d..(k + 1) * self.d]
    }
}

/// `μᵢ = Sᵢ / Σⱼ Sⱼ` at every grid time.
pub fn weights_from_caps(c: &CapPath) -> Result<WeightPath, SimplexError> {
    let d = c.d;
    let mut data = Vec::with_capacity(c.caps.len());
    for row in c.caps.chunks_exact(d) {
        let total: f64 = row.iter().sum();
        data.extend(row.iter().map(|&s| s / total));
    }
    WeightPath::new(c.grid, d, data, None)
}
