//! Quadratic covariation of weight paths and the functionals built on it.
//!
//! All Stieltjes sums use the left endpoint of each step.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::genfn::{GenFnError, GeneratingFunction};
use crate::linalg::{eigen_sym2, eigen_sym3};
use crate::simplex::{TimeGrid, WeightPath};

#[derive(Debug, Error)]
pub enum QuadVarError {
    #[error(transparent)]
    GenFn(#[from] GenFnError),
    #[error("nonpositive weight {value} at step {step}, asset {asset}")]
    NonpositiveWeight { step: usize, asset: usize, value: f64 },
    #[error("grids or dimensions do not match")]
    GridMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CovSource {
    Realized,
    Analytic,
}

/// Per-step covariation increments `d⟨μᵢ, μⱼ⟩`, row-major `d×d` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariationPath {
    grid: TimeGrid,
    d: usize,
    increments: Vec<f64>,
    source: CovSource,
}

impl CovariationPath {
    pub fn new(
        grid: TimeGrid,
        d: usize,
        increments: Vec<f64>,
        source: CovSource,
    ) -> Result<Self, QuadVarError> {
        if increments.len() != grid.n_steps * d * d {
            return Err(QuadVarError::GridMismatch);
        }
        Ok(CovariationPath {
            grid,
            d,
            increments,
            source,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn source(&self) -> CovSource {
        self.source
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    #[inline]
    pub fn increment(&self, k: usize) -> &[f64] {
        let b = self.d * self.d;
        &self.increments[k * b..(k + 1) * b]
    }

    /// Trace of step `k`, i.e. the `Γ^Q` increment.
    pub fn trace(&self, k: usize) -> f64 {
        let m = self.increment(k);
        (0..self.d).map(|i| m[i * self.d + i]).sum()
    }

    /// Zeroes every increment from step `k` on (stopping at grid index `k`).
    pub fn stopped_at(&self, k: usize) -> CovariationPath {
        let mut c = self.clone();
        let b = self.d * self.d;
        let start = (k * b).min(c.increments.len());
        c.increments[start..].iter_mut().for_each(|v| *v = 0.0);
        c
    }

    /// Cumulative `⟨μᵢ, μⱼ⟩` entry at every grid point.
    pub fn cumulative(&self, i: usize, j: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.len());
        let mut acc = 0.0;
        out.push(0.0);
        for k in 0..self.grid.n_steps {
            acc += self.increment(k)[i * self.d + j];
            out.push(acc);
        }
        out
    }
}

/// Realized covariation: outer products of consecutive differences.
pub fn realized_cov(path: &WeightPath) -> CovariationPath {
    let d = path.dim();
    let n = path.grid().n_steps;
    let mut inc = vec![0.0; n * d * d];
    let mut delta = vec![0.0; d];
    for k in 0..n {
        let (a, b) = (path.point(k), path.point(k + 1));
        for i in 0..d {
            delta[i] = b[i] - a[i];
        }
        let block = &mut inc[k * d * d..(k + 1) * d * d];
        for i in 0..d {
            for j in 0..d {
                block[i * d + j] = delta[i] * delta[j];
            }
        }
    }
    CovariationPath {
        grid: *path.grid(),
        d,
        increments: inc,
        source: CovSource::Realized,
    }
}

/// Cumulative values of a functional on the grid, starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl GammaPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self, QuadVarError> {
        if values.len() != grid.len() {
            return Err(QuadVarError::GridMismatch);
        }
        Ok(GammaPath { grid, values })
    }

    pub fn from_increments(grid: TimeGrid, incs: impl IntoIterator<Item = f64>) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        values.push(0.0);
        for v in incs {
            acc += v;
            values.push(acc);
        }
        debug_assert_eq!(values.len(), grid.len());
        GammaPath { grid, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }

    pub fn write_csv<W: Write>(&self, w: W, header: &str) -> Result<(), QuadVarError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", header])?;
        for (k, v) in self.values.iter().enumerate() {
            wr.write_record([self.grid.time(k).to_string(), v.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn check_same(path: &WeightPath, cov: &CovariationPath) -> Result<(), QuadVarError> {
    if path.grid() != cov.grid() || path.dim() != cov.dim() {
        return Err(QuadVarError::GridMismatch);
    }
    Ok(())
}

/// `Γᴳ(tₖ₊₁) = Γᴳ(tₖ) − ½ Σᵢⱼ D²ᵢⱼG(μ(tₖ)) covincₖ[i][j]`, frozen after the
/// path's stop index.
pub fn gamma_g(
    g: &dyn GeneratingFunction,
    path: &WeightPath,
    cov: &CovariationPath,
) -> Result<GammaPath, QuadVarError> {
    check_same(path, cov)?;
    let d = path.dim();
    let n = path.grid().n_steps;
    let stop = path.active_end();
    let mut h = vec![0.0; d * d];
    let mut values = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    values.push(0.0);
    for k in 0..n {
        if k < stop {
            g.hessian_into(path.point(k), &mut h)?;
            let m = cov.increment(k);
            let s: f64 = h.iter().zip(m).map(|(a, b)| a * b).sum();
            acc -= 0.5 * s;
        }
        values.push(acc);
    }
    Ok(GammaPath {
        grid: *path.grid(),
        values,
    })
}

/// `½ Σᵢ Σₖ μᵢ(tₖ) (Δ log μᵢ(tₖ))²`. Accumulation ends at the step that
/// reaches the path's stop point if a weight vanishes there.
pub fn gamma_h_weighted(path: &WeightPath) -> Result<GammaPath, QuadVarError> {
    let d = path.dim();
    let n = path.grid().n_steps;
    let stop = path.stop_index();
    let mut values = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    let mut frozen = false;
    values.push(0.0);
    for (asset, &value) in path.point(0).iter().enumerate() {
        if !(value > 0.0) {
            return Err(QuadVarError::NonpositiveWeight {
                step: 0,
                asset,
                value,
            });
        }
    }
    for k in 0..n {
        if !frozen && stop.map_or(true, |s| k < s) {
            let (a, b) = (path.point(k), path.point(k + 1));
            if let Some(asset) = b.iter().position(|&v| !(v > 0.0)) {
                if stop == Some(k + 1) {
                    frozen = true;
                } else {
                    return Err(QuadVarError::NonpositiveWeight {
                        step: k + 1,
                        asset,
                        value: b[asset],
                    });
                }
            } else {
                let mut s = 0.0;
                for i in 0..d {
                    let l = (b[i] / a[i]).ln();
                    s += a[i] * l * l;
                }
                acc += 0.5 * s;
            }
        }
        values.push(acc);
    }
    Ok(GammaPath {
        grid: *path.grid(),
        values,
    })
}

/// Trace threshold under which a step is flagged degenerate.
pub const ALPHA_TRACE_MIN: f64 = 1e-14;

/// Covariation density with respect to `Γ^Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaPath {
    grid: TimeGrid,
    d: usize,
    alpha: Vec<f64>,
    gamma_q_inc: Vec<f64>,
    degenerate: Vec<bool>,
}

impl AlphaPath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_steps(&self) -> usize {
        self.gamma_q_inc.len()
    }

    pub fn alpha(&self, k: usize) -> &[f64] {
        let b = self.d * self.d;
        &self.alpha[k * b..(k + 1) * b]
    }

    pub fn gamma_q_increment(&self, k: usize) -> f64 {
        self.gamma_q_inc[k]
    }

    pub fn is_degenerate(&self, k: usize) -> bool {
        self.degenerate[k]
    }

    /// Ascending eigenvalues of `α` at step `k`; `None` for degenerate steps
    /// or dimensions other than 2 and 3.
    pub fn eigenvalues(&self, k: usize) -> Option<Vec<f64>> {
        if self.degenerate[k] {
            return None;
        }
        let a = self.alpha(k);
        match self.d {
            2 => Some(eigen_sym2(a[0], 0.5 * (a[1] + a[2]), a[3]).to_vec()),
            3 => {
                let m: [f64; 9] = a.try_into().ok()?;
                eigen_sym3(&m).ok().map(|v| v.to_vec())
            }
            _ => None,
        }
    }

    /// Smallest second eigenvalue over non-degenerate steps.
    pub fn min_second_eigenvalue(&self) -> Option<f64> {
        (0..self.n_steps())
            .filter_map(|k| self.eigenvalues(k))
            .filter(|ev| ev.len() >= 2)
            .map(|ev| ev[ev.len() - 2])
            .min_by(|a, b| a.total_cmp(b))
    }

    /// CSV with columns `t,a11,a12,...,add,lambda1,...,lambdad`; the time is
    /// the left end of each step.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), QuadVarError> {
        let d = self.d;
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        for i in 1..=d {
            for j in 1..=d {
                header.push(format!("a{i}{j}"));
            }
        }
        for i in 1..=d {
            header.push(format!("lambda{i}"));
        }
        wr.write_record(&header)?;
        for k in 0..self.n_steps() {
            let mut row = vec![self.grid.time(k).to_string()];
            row.extend(self.alpha(k).iter().map(|v| v.to_string()));
            match self.eigenvalues(k) {
                Some(ev) => row.extend(ev.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat("NaN".to_string()).take(d)),
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn alpha_decompose(cov: &CovariationPath) -> AlphaPath {
    let d = cov.dim();
    let n = cov.n_steps();
    let mut alpha = vec![0.0; n * d * d];
    let mut gamma_q_inc = Vec::with_capacity(n);
    let mut degenerate = Vec::with_capacity(n);
    for k in 0..n {
        let tr = cov.trace(k);
        gamma_q_inc.push(tr);
        if tr > ALPHA_TRACE_MIN {
            let m = cov.increment(k);
            for (a, v) in alpha[k * d * d..(k + 1) * d * d].iter_mut().zip(m) {
                *a = v / tr;
            }
            degenerate.push(false);
        } else {
            degenerate.push(true);
        }
    }
    AlphaPath {
        grid: *cov.grid(),
        d,
        alpha,
        gamma_q_inc,
        degenerate,
    }
}

/// Outcome of a per-step inequality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepVerdict {
    pub holds: bool,
    pub first_violation: Option<usize>,
    /// Largest shortfall below the required increment (0 when none).
    pub max_violation: f64,
    pub steps_checked: usize,
}

impl StepVerdict {
    fn from_shortfalls(shortfalls: impl Iterator<Item = (usize, f64)>, tol: f64) -> Self {
        let mut first = None;
        let mut max_violation = 0.0f64;
        let mut steps = 0;
        for (k, s) in shortfalls {
            steps += 1;
            if s > tol {
                first.get_or_insert(k);
            }
            max_violation = max_violation.max(s);
        }
        StepVerdict {
            holds: first.is_none(),
            first_violation: first,
            max_violation,
            steps_checked: steps,
        }
    }
}

/// Slack on per-step inequalities.
pub const STEP_TOL: f64 = 1e-10;

/// Checks `Γ(tₖ₊₁) − Γ(tₖ) ≥ η·dt − 1e-10` on every step ending by `t_end`.
pub fn slope_monotone_check(g: &GammaPath, eta: f64, t_end: f64) -> StepVerdict {
    let grid = *g.grid();
    let v = g.values();
    let limit = t_end + 1e-9 * grid.dt;
    StepVerdict::from_shortfalls(
        (0..grid.n_steps)
            .take_while(|&k| grid.time(k + 1) <= limit)
            .map(|k| (k, eta * grid.dt - (v[k + 1] - v[k]))),
        STEP_TOL,
    )
}

/// Checks `2ΔΓᴴ ≥ ΔΓ^Q − 1e-10` on every step.
pub fn excess_dominance_check(
    gh: &GammaPath,
    gq: &GammaPath,
) -> Result<StepVerdict, QuadVarError> {
    if gh.grid() != gq.grid() {
        return Err(QuadVarError::GridMismatch);
    }
    let (h, q) = (gh.values(), gq.values());
    Ok(StepVerdict::from_shortfalls(
        (0..gh.grid().n_steps).map(|k| (k, (q[k + 1] - q[k]) - 2.0 * (h[k + 1] - h[k]))),
        STEP_TOL,
    ))
}

/// `Kₙ` and `C = 2η/Kₙ` for the region `{min xᵢ ≥ 1/n}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HessianBound {
    pub k_n: f64,
    pub c: f64,
    pub grid_points: usize,
}

/// `Kₙ = max Σᵢⱼ |D²ᵢⱼG|` over the grid of pitch `1/(50n)` on
/// `{x ∈ Δᵈ : min xᵢ ≥ 1/n}`; the last coordinate is `1 − Σ` of the others.
pub fn hessian_bound_constant(
    g: &dyn GeneratingFunction,
    d: usize,
    n: usize,
    eta: f64,
) -> Result<HessianBound, QuadVarError> {
    if d < 2 || n < d {
        return Err(QuadVarError::InvalidArgument(format!(
            "region min x >= 1/n is empty or d too small (d = {d}, n = {n})"
        )));
    }
    let lo = 1.0 / n as f64;
    let pitch = lo / 50.0;
    let mut x = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    let mut k_n = 0.0f64;
    let mut count = 0usize;

    fn recurse(
        g: &dyn GeneratingFunction,
        x: &mut [f64],
        h: &mut [f64],
        idx: usize,
        remaining: f64,
        lo: f64,
        pitch: f64,
        k_n: &mut f64,
        count: &mut usize,
    ) -> Result<(), GenFnError> {
        let d = x.len();
        if idx == d - 1 {
            if remaining < lo - 1e-12 {
                return Ok(());
            }
            x[idx] = remaining;
            g.hessian_into(x, h)?;
            let s: f64 = h.iter().map(|v| v.abs()).sum();
            *k_n = k_n.max(s);
            *count += 1;
            return Ok(());
        }
        let slots_after = (d - 1 - idx) as f64;
        let mut j = 0usize;
        loop {
            let v = lo + j as f64 * pitch;
            if remaining - v < slots_after * lo - 1e-12 {
                break;
            }
            x[idx] = v;
            recurse(g, x, h, idx + 1, remaining - v, lo, pitch, k_n, count)?;
            j += 1;
        }
        Ok(())
    }

    recurse(g, &mut x, &mut h, 0, 1.0, lo, pitch, &mut k_n, &mut count)?;
    let c = if eta == 0.0 { 0.0 } else { 2.0 * eta / k_n };
    Ok(HessianBound {
        k_n,
        c,
        grid_points: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genfn::GenFn;

    fn path(points: &[Vec<f64>], dt: f64) -> WeightPath {
        let grid = TimeGrid::new(0.0, dt, points.len() - 1).unwrap();
        WeightPath::from_points(grid, points).unwrap()
    }

    #[test]
    fn realized_outer_product() {
        let p = path(&[vec![0.5, 0.25, 0.25], vec![0.6, 0.15, 0.25]], 1.0);
        let c = realized_cov(&p);
        let want = [0.01, -0.01, 0.0, -0.01, 0.01, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in c.increment(0).iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = path(&[vec![0.25, 0.75], vec![0.625, 0.375]], 1.0);
        let m = realized_cov(&p);
        let m = m.increment(0);
        assert_eq!(m[0] + m[1], 0.0);
    }

    #[test]
    fn constant_path_is_flat() {
        let p = path(&vec![vec![0.2, 0.3, 0.5]; 5], 0.1);
        let c = realized_cov(&p);
        assert!(c.increment(2).iter().all(|&v| v == 0.0));
        let g = gamma_g(&GenFn::Entropy, &p, &c).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        assert_eq!(gamma_h_weighted(&p).unwrap().last(), 0.0);
        let a = alpha_decompose(&c);
        assert!(a.is_degenerate(0));
    }

    #[test]
    fn doubling_contribution() {
        // asset 1 doubles its cap in one step: (1/2,1/4,1/4) -> (2/3,1/6,1/6)
        let p = path(
            &[vec![0.5, 0.25, 0.25], vec![2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0]],
            1.0,
        );
        let l43 = (4.0f64 / 3.0).ln();
        let l23 = (2.0f64 / 3.0).ln();
        let want = 0.5 * (0.5 * l43 * l43 + 2.0 * 0.25 * l23 * l23);
        assert!((gamma_h_weighted(&p).unwrap().last() - want).abs() < 1e-15);
    }

    #[test]
    fn dominance_hand_example() {
        let p = path(&[vec![0.5, 0.25, 0.25], vec![0.6, 0.15, 0.25]], 1.0);
        let c = realized_cov(&p);
        let gh = gamma_g(&GenFn::Entropy, &p, &c).unwrap();
        let gq = gamma_g(&GenFn::Quadratic, &p, &c).unwrap();
        assert!((2.0 * gh.last() - 0.06).abs() < 1e-15);
        assert!((gq.last() - 0.02).abs() < 1e-15);
        assert!(excess_dominance_check(&gh, &gq).unwrap().holds);
    }

    #[test]
    fn slope_checks() {
        let grid = TimeGrid::new(0.0, 0.1, 10).unwrap();
        let g = GammaPath::from_increments(grid, std::iter::repeat(0.1).take(10));
        assert!(slope_monotone_check(&g, 1.0, 1.0).holds);
        let v = slope_monotone_check(&g, 1.01, 1.0);
        assert!(!v.holds);
        assert_eq!(v.first_violation, Some(0));
    }

    #[test]
    fn alpha_rank_one() {
        let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let v = [0.3, -0.1, -0.2];
        let inc: Vec<f64> = (0..9).map(|k| v[k / 3] * v[k % 3]).collect();
        let cov = CovariationPath::new(grid, 3, inc, CovSource::Analytic).unwrap();
        let a = alpha_decompose(&cov);
        let ev = a.eigenvalues(0).unwrap();
        assert!(ev[0].abs() < 1e-12 && ev[1].abs() < 1e-12);
        assert!((ev[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hessian_bound_for_quadratic() {
        for n in [3, 5, 10] {
            let c = hessian_bound_constant(&GenFn::Quadratic, 3, n, 1.5).unwrap();
            assert_eq!(c.k_n, 6.0);
            assert!((c.c - 0.5).abs() < 1e-15);
        }
        assert_eq!(hessian_bound_constant(&GenFn::Entropy, 3, 10, 0.0).unwrap().c, 0.0);
    }
}
