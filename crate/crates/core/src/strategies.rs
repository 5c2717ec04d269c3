//! Self-financing wealth, functionally generated strategies, concatenation
//! and the two constructive arbitrages.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::genfn::{GenFn, GenFnError, GeneratingFunction};
use crate::quadvar::{gamma_g, slope_monotone_check, CovariationPath, GammaPath, QuadVarError};
use crate::simplex::{TimeGrid, WeightPath};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    GenFn(#[from] GenFnError),
    #[error(transparent)]
    QuadVar(#[from] QuadVarError),
    #[error("strategy and path are on different grids or dimensions")]
    GridMismatch,
    #[error("G(mu) = {value} too close to zero at step {step}")]
    GeneratorNearZero { step: usize, value: f64 },
    #[error("mu_1 = {value} too close to zero at step {step}")]
    Mu1NearZero { step: usize, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Below this, `1/G(μ)` (or `1/μ₁`) is treated as unbounded.
pub const NEAR_ZERO: f64 = 1e-8;

/// Slack for the long-only check.
pub const LONG_ONLY_TOL: f64 = 1e-12;

/// Share holdings `θ(tₖ)` on a grid, `(n_steps + 1) × d`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Strategy {
    grid: TimeGrid,
    d: usize,
    holdings: Vec<f64>,
    pub label: String,
}

impl Strategy {
    pub fn new(grid: TimeGrid, d: usize, holdings: Vec<f64>, label: impl Into<String>) -> Result<Self, StrategyError> {
        if holdings.len() != grid.len() * d {
            return Err(StrategyError::GridMismatch);
        }
        Ok(Strategy {
            grid,
            d,
            holdings,
            label: label.into(),
        })
    }

    /// `θ ≡ c·(1, …, 1)`.
    pub fn constant(grid: TimeGrid, d: usize, c: f64) -> Self {
        Strategy {
            grid,
            d,
            holdings: vec![c; grid.len() * d],
            label: format!("constant:{c}"),
        }
    }

    /// The market portfolio `θ ≡ 1`.
    pub fn market(grid: TimeGrid, d: usize) -> Self {
        let mut s = Strategy::constant(grid, d, 1.0);
        s.label = "market".into();
        s
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn theta(&self, k: usize) -> &[f64] {
        &self.holdings[k * self.d..(k + 1) * self.d]
    }

    /// Most negative holding over grid points `0..=end`.
    pub fn min_holding(&self, end: usize) -> f64 {
        self.holdings[..(end + 1) * self.d]
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn is_long_only(&self, end: usize) -> bool {
        self.min_holding(end) >= -LONG_ONLY_TOL
    }

    /// `c·θ`; wealth scales by the same factor.
    pub fn scaled(&self, c: f64) -> Strategy {
        Strategy {
            holdings: self.holdings.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// Wealth `V(tₖ)` in units of total market capitalization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WealthPath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl WealthPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self, StrategyError> {
        if values.len() != grid.len() {
            return Err(StrategyError::GridMismatch);
        }
        Ok(WealthPath { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("grid has at least one point")
    }

    pub fn scaled(&self, c: f64) -> WealthPath {
        WealthPath {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// `max_k |self(tₖ) − other(tₖ)|`.
    pub fn max_abs_diff(&self, other: &WealthPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// `V(t₀) = Σ θᵢ(t₀)μᵢ(t₀)`, `V(tₖ₊₁) = V(tₖ) + Σ θᵢ(tₖ)(μᵢ(tₖ₊₁) − μᵢ(tₖ))`.
pub fn wealth_selffinancing(s: &Strategy, path: &WeightPath) -> Result<WealthPath, StrategyError> {
    if s.grid != *path.grid() || s.d != path.dim() {
        return Err(StrategyError::GridMismatch);
    }
    let n = s.grid.n_steps;
    let mut values = Vec::with_capacity(n + 1);
    let mut v: f64 = s.theta(0).iter().zip(path.point(0)).map(|(a, b)| a * b).sum();
    values.push(v);
    for k in 0..n {
        let (x, y) = (path.point(k), path.point(k + 1));
        v += s
            .theta(k)
            .iter()
            .zip(x.iter().zip(y))
            .map(|(th, (a, b))| th * (b - a))
            .sum::<f64>();
        values.push(v);
    }
    Ok(WealthPath { grid: s.grid, values })
}

/// Evaluates `f` at every grid point from which the path still moves, and
/// repeats the last result afterwards (holdings on a frozen path earn
/// nothing, and the frozen point may sit on the boundary).
fn per_point<F>(path: &WeightPath, d: usize, mut f: F) -> Result<Vec<f64>, StrategyError>
where
    F: FnMut(usize, &[f64], &mut [f64]) -> Result<(), StrategyError>,
{
    let n = path.grid().n_steps;
    let last_live = match path.stop_index() {
        Some(s) => s.saturating_sub(1),
        None => n,
    };
    let mut out = vec![0.0; (n + 1) * d];
    for k in 0..=last_live {
        f(k, path.point(k), &mut out[k * d..(k + 1) * d])?;
    }
    for k in last_live + 1..=n {
        out.copy_within(last_live * d..(last_live + 1) * d, k * d);
    }
    Ok(out)
}

/// Additively generated strategy
/// `φᵢ = DᵢG + Γᴳ + G − Σⱼ μⱼ DⱼG`, with wealth `G(μ) + Γᴳ`.
pub fn additive_generate(
    g: &dyn GeneratingFunction,
    path: &WeightPath,
    cov: &CovariationPath,
) -> Result<(Strategy, WealthPath), StrategyError> {
    let gamma = gamma_g(g, path, cov)?;
    additive_with_gamma(g, path, &gamma)
}

fn additive_with_gamma(
    g: &dyn GeneratingFunction,
    path: &WeightPath,
    gamma: &GammaPath,
) -> Result<(Strategy, WealthPath), StrategyError> {
    let d = path.dim();
    let gv = gamma.values();
    let mut dg = vec![0.0; d];
    let holdings = per_point(path, d, |k, x, out| {
        g.gradient_into(x, &mut dg)?;
        let c = gv[k] + g.value(x) - x.iter().zip(&dg).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..d {
            out[i] = dg[i] + c;
        }
        Ok(())
    })?;
    let values = path
        .points()
        .zip(gv)
        .map(|(x, gam)| g.value(x) + gam)
        .collect();
    Ok((
        Strategy {
            grid: *path.grid(),
            d,
            holdings,
            label: format!("additive:{}", g.label()),
        },
        WealthPath {
            grid: *path.grid(),
            values,
        },
    ))
}

/// Multiplicatively generated strategy with wealth
/// `Zᴳ(tₖ) = G(μ(tₖ))·exp(Σ_{j<k} ΔΓᴳ(tⱼ)/G(μ(tⱼ)))` and
/// `ψᵢ = Zᴳ(1 + (DᵢG − Σⱼ μⱼ DⱼG)/G)`.
pub fn multiplicative_generate(
    g: &dyn GeneratingFunction,
    path: &WeightPath,
    cov: &CovariationPath,
) -> Result<(Strategy, WealthPath), StrategyError> {
    let gamma = gamma_g(g, path, cov)?;
    let gv = gamma.values();
    let d = path.dim();
    let n = path.grid().n_steps;
    let stop = path.active_end();
    let mut log_acc = vec![0.0; n + 1];
    for k in 0..n {
        let inc = gv[k + 1] - gv[k];
        log_acc[k + 1] = log_acc[k];
        if k < stop {
            let gk = g.value(path.point(k));
            if !(gk.abs() >= NEAR_ZERO) {
                return Err(StrategyError::GeneratorNearZero { step: k, value: gk });
            }
            log_acc[k + 1] += inc / gk;
        }
    }
    let values: Vec<f64> = path
        .points()
        .zip(&log_acc)
        .map(|(x, l)| g.value(x) * l.exp())
        .collect();
    let mut dg = vec![0.0; d];
    let holdings = per_point(path, d, |k, x, out| {
        let gk = g.value(x);
        if !(gk.abs() >= NEAR_ZERO) {
            return Err(StrategyError::GeneratorNearZero { step: k, value: gk });
        }
        g.gradient_into(x, &mut dg)?;
        let m: f64 = x.iter().zip(&dg).map(|(a, b)| a * b).sum();
        for i in 0..d {
            out[i] = values[k] * (1.0 + (dg[i] - m) / gk);
        }
        Ok(())
    })?;
    Ok((
        Strategy {
            grid: *path.grid(),
            d,
            holdings,
            label: format!("multiplicative:{}", g.label()),
        },
        WealthPath {
            grid: *path.grid(),
            values,
        },
    ))
}

/// Output of [`power_psi`].
#[derive(Debug, Clone)]
pub struct PowerStrategy {
    pub strategy: Strategy,
    pub wealth: WealthPath,
    /// `maxᵢₖ ψᵢ(tₖ)`; at most 1 whenever the path stays in the simplex.
    pub max_psi: f64,
}

/// The strategy multiplicatively generated by `F(x) = x₁^q`:
/// `ψ₁ = (q/μ₁ + 1 − q)·Zᶠ`, `ψᵢ = (1 − q)·Zᶠ` for `i ≥ 2`, and
/// `Zᶠ = μ₁^q·exp(−½q(q−1) Σ μ₁(tⱼ)⁻² Δ⟨μ₁⟩ⱼ)`.
pub fn power_psi(q: f64, path: &WeightPath, cov: &CovariationPath) -> Result<PowerStrategy, StrategyError> {
    if !(q >= 1.0) || !q.is_finite() {
        return Err(StrategyError::InvalidParameter(format!(
            "power exponent must be >= 1, got {q}"
        )));
    }
    if cov.grid() != path.grid() || cov.dim() != path.dim() {
        return Err(StrategyError::GridMismatch);
    }
    let d = path.dim();
    let n = path.grid().n_steps;
    let stop = path.active_end();
    let c = -0.5 * q * (q - 1.0);
    let mut acc = 0.0f64;
    let mut values = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let m1 = path.point(k)[0];
        if !(m1 >= NEAR_ZERO) {
            return Err(StrategyError::Mu1NearZero { step: k, value: m1 });
        }
        values.push(m1.powf(q) * acc.exp());
        if k < n && k < stop {
            acc += c * cov.increment(k)[0] / (m1 * m1);
        }
    }
    let mut holdings = vec![0.0; (n + 1) * d];
    let mut max_psi = f64::NEG_INFINITY;
    for k in 0..=n {
        let m1 = path.point(k)[0];
        let z = values[k];
        let row = &mut holdings[k * d..(k + 1) * d];
        row[0] = (q / m1 + 1.0 - q) * z;
        for v in row.iter_mut().skip(1) {
            *v = (1.0 - q) * z;
        }
        max_psi = row.iter().fold(max_psi, |m, &v| m.max(v));
    }
    Ok(PowerStrategy {
        strategy: Strategy {
            grid: *path.grid(),
            d,
            holdings,
            label: format!("power:q={q}"),
        },
        wealth: WealthPath {
            grid: *path.grid(),
            values,
        },
        max_psi,
    })
}

/// Concatenation: `ψ = b` before `τ`, `ψ = b + φ − V^φ(τ)` from `τ` on.
/// Returns the strategy and the wealth `b + (V^φ − V^φ(τ))·1{k ≥ τ}` it
/// generates.
pub fn concat(
    b: f64,
    tau: Option<usize>,
    phi: &Strategy,
    v_phi: &WealthPath,
) -> Result<(Strategy, WealthPath), StrategyError> {
    if phi.grid != v_phi.grid {
        return Err(StrategyError::GridMismatch);
    }
    let n = phi.grid.n_steps;
    let d = phi.d;
    let mut holdings = vec![b; (n + 1) * d];
    let mut values = vec![b; n + 1];
    if let Some(tau) = tau {
        if tau > n {
            return Err(StrategyError::InvalidParameter(format!(
                "switch index {tau} beyond grid"
            )));
        }
        let v_tau = v_phi.values[tau];
        for k in tau..=n {
            for i in 0..d {
                holdings[k * d + i] = b + phi.holdings[k * d + i] - v_tau;
            }
            values[k] = b + (v_phi.values[k] - v_tau);
        }
    }
    Ok((
        Strategy {
            grid: phi.grid,
            d,
            holdings,
            label: format!("concat:b={b},{}", phi.label),
        },
        WealthPath {
            grid: phi.grid,
            values,
        },
    ))
}

/// `q(T) = 1 + (2/(ηT))·log(1/μ₁(0)) + 0.5`.
pub fn one_asset_q(mu1_0: f64, eta: f64, horizon: f64) -> f64 {
    1.0 + 2.0 / (eta * horizon) * (1.0 / mu1_0).ln() + 0.5
}

/// Output of [`one_asset_arbitrage`].
#[derive(Debug, Clone)]
pub struct OneAssetArb {
    pub strategy: Strategy,
    pub wealth: WealthPath,
    pub q: f64,
    /// First grid index with `μ₁ ≤ μ₁(0)/2`.
    pub d_star: Option<usize>,
    /// `⟨ν₁⟩(T)` from the covariation increments.
    pub qv_nu1: f64,
}

/// Long-only strategy `φᵢ = 1 + ν₁(0)^q − ψᵢᶠ` on the path stopped when
/// `μ₁` first halves, with `V = 1 + ν₁(0)^q − Zᶠ`.
pub fn one_asset_arbitrage(
    horizon: f64,
    eta: f64,
    path: &WeightPath,
    cov: &CovariationPath,
) -> Result<OneAssetArb, StrategyError> {
    if !(eta > 0.0) || !(horizon > 0.0) {
        return Err(StrategyError::InvalidParameter(format!(
            "need eta > 0 and T > 0 (eta = {eta}, T = {horizon})"
        )));
    }
    let mu1_0 = path.point(0)[0];
    if !(mu1_0 > 0.0) {
        return Err(StrategyError::Mu1NearZero { step: 0, value: mu1_0 });
    }
    let n = path.grid().n_steps;
    let d_star = (0..=n).find(|&k| path.point(k)[0] <= mu1_0 / 2.0);
    let (nu, cov_nu) = match d_star {
        Some(k) if path.stop_index().map_or(true, |s| k < s) => {
            (path.stopped_at(k), cov.stopped_at(k))
        }
        _ => (path.clone(), cov.clone()),
    };
    let q = one_asset_q(mu1_0, eta, horizon);
    let power = power_psi(q, &nu, &cov_nu)?;
    let a = mu1_0.powf(q);
    let d = path.dim();
    let holdings = power
        .strategy
        .holdings
        .iter()
        .map(|psi| 1.0 + a - psi)
        .collect();
    // 1 + (a − Z) keeps V(0) = 1 exactly
    let values = power.wealth.values.iter().map(|z| 1.0 + (a - z)).collect();
    let qv_nu1 = (0..n).map(|k| cov_nu.increment(k)[0]).sum();
    Ok(OneAssetArb {
        strategy: Strategy {
            grid: *path.grid(),
            d,
            holdings,
            label: format!("one_asset:q={q}"),
        },
        wealth: WealthPath {
            grid: *path.grid(),
            values,
        },
        q,
        d_star,
        qv_nu1,
    })
}

/// Output of [`switching_arbitrage`].
#[derive(Debug, Clone)]
pub struct SwitchingArb {
    pub strategy: Strategy,
    pub wealth: WealthPath,
    pub tau: Option<usize>,
    /// Whether `Γᴳ(t) − ηt` is nondecreasing on `[0, T]` along this path.
    pub slope_ok: bool,
    /// `1{t < τ} + 3(t − τ)/T·1{t ≥ τ}` at every grid point.
    pub lower_bound: Vec<f64>,
}

/// Holds the market until `τ`, the first grid time `≤ T/2` with
/// `G(μ) < h + ηT/3`, then switches (with `b = 1`) to the strategy
/// additively generated by `G★ = (G − h)·3/(ηT)`.
pub fn switching_arbitrage(
    g: &GenFn,
    h: f64,
    eta: f64,
    horizon: f64,
    path: &WeightPath,
    cov: &CovariationPath,
) -> Result<SwitchingArb, StrategyError> {
    let grid = *path.grid();
    let star = g
        .clone()
        .shift_scaled(h, eta, horizon)
        .map_err(StrategyError::GenFn)?;
    let gamma = gamma_g(g, path, cov)?;
    let slope_ok = slope_monotone_check(&gamma, eta, horizon).holds;
    let level = h + eta * horizon / 3.0;
    let tau = (0..grid.len())
        .take_while(|&k| grid.time(k) <= horizon / 2.0 + 1e-12 * grid.dt)
        .find(|&k| g.value(path.point(k)) < level);
    let (strategy, wealth) = match tau {
        Some(_) => {
            let gamma_star = GammaPath::from_increments(
                grid,
                gamma
                    .values()
                    .windows(2)
                    .map(|w| (w[1] - w[0]) * 3.0 / (eta * horizon)),
            );
            let (phi, v_phi) = additive_with_gamma(&star, path, &gamma_star)?;
            concat(1.0, tau, &phi, &v_phi)?
        }
        None => {
            let s = Strategy::market(grid, path.dim());
            let w = WealthPath {
                grid,
                values: vec![1.0; grid.len()],
            };
            (s, w)
        }
    };
    let lower_bound = (0..grid.len())
        .map(|k| match tau {
            Some(t) if k >= t => 3.0 * (grid.time(k) - grid.time(t)) / horizon,
            _ => 1.0,
        })
        .collect();
    Ok(SwitchingArb {
        strategy: Strategy {
            label: format!("switching:{},h={h},eta={eta},T={horizon}", g.label()),
            ..strategy
        },
        wealth,
        tau,
        slope_ok,
        lower_bound,
    })
}

/// Writes `t,theta1,...,thetad,V`.
pub fn write_strategy_csv<W: Write>(
    s: &Strategy,
    v: &WealthPath,
    w: W,
) -> Result<(), StrategyError> {
    if s.grid != v.grid {
        return Err(StrategyError::GridMismatch);
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=s.d).map(|i| format!("theta{i}")));
    header.push("V".into());
    out.write_record(&header)?;
    for k in 0..s.grid.len() {
        let mut row = vec![s.grid.time(k).to_string()];
        row.extend(s.theta(k).iter().map(|v| v.to_string()));
        row.push(v.values[k].to_string());
        out.write_record(&row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
