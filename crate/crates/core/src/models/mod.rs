//! The market-model zoo, simulation engine and boundary stopping.

pub mod oracle;
pub mod sde;

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::genfn::{level_range, lyapunov_sigma, GenFn, GenFnError, GeneratingFunction};
use crate::quadvar::{CovSource, CovariationPath};
use crate::rng::{brownian_increments, RngKind};
use crate::simplex::{radial_r_centered, validate_simplex, SimplexError, TimeGrid, WeightPath};

pub use sde::{integrate_sde, Refinement, SdeRun, SdeSystem};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("drift/diffusion structure violated at step {step}: {what}")]
    SpecViolation { step: usize, what: String },
    #[error("start point is the node (1/3, 1/3, 1/3)")]
    AtNode,
    #[error(transparent)]
    GenFn(#[from] GenFnError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("no exact solution for this model")]
    NoExactSolution,
    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    #[default]
    Milstein,
    /// Closed-form solution evaluated on the Brownian path.
    Exact,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" | "euler_maruyama" | "em" => Ok(Scheme::EulerMaruyama),
            "milstein" => Ok(Scheme::Milstein),
            "exact" => Ok(Scheme::Exact),
            other => Err(format!("unknown scheme '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub rng: RngKind,
    pub scheme: Scheme,
    pub boundary_epsilon: f64,
    /// Brownian-bridge refinement of steps close to the boundary.
    pub refine: bool,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            dt,
            horizon,
            n_paths,
            seed,
            rng: RngKind::Chacha8,
            scheme: Scheme::default(),
            boundary_epsilon: 0.0,
            refine: true,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(ModelError::InvalidConfig(format!("dt = {}", self.dt)));
        }
        if !(self.horizon >= self.dt) {
            return Err(ModelError::InvalidConfig(format!(
                "horizon {} shorter than dt {}",
                self.horizon, self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(ModelError::InvalidConfig("n_paths must be >= 1".into()));
        }
        if !(self.boundary_epsilon >= 0.0 && self.boundary_epsilon < 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "boundary_epsilon = {}",
                self.boundary_epsilon
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid, ModelError> {
        self.validate()?;
        Ok(TimeGrid::covering(self.dt, self.horizon)?)
    }
}

/// Stopping rules for `boundary_stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Some weight `≤ 0`.
    ExitSimplex,
    /// Some weight `< 1/n`.
    MinWeightBelow(usize),
    /// `μ₁ ≤ μ₁(0)/2`.
    FirstAssetHalved,
    /// `t ≥ T`.
    Horizon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HitRecord {
    pub rule: StopRule,
    pub stop_index: Option<usize>,
    /// Refined crossing time; `None` means the rule never triggered.
    pub time: Option<f64>,
}

impl HitRecord {
    pub fn none(rule: StopRule) -> Self {
        HitRecord {
            rule,
            stop_index: None,
            time: None,
        }
    }

    /// Hitting time with `∞` for paths that never stop.
    pub fn time_or_inf(&self) -> f64 {
        self.time.unwrap_or(f64::INFINITY)
    }
}

/// First grid index satisfying `rule`, with the crossing time refined by
/// linear interpolation of the triggering coordinate; the path is frozen
/// from that index on.
pub fn boundary_stop(path: &WeightPath, rule: StopRule) -> (WeightPath, HitRecord) {
    let grid = *path.grid();
    let n = grid.n_steps;
    let mu1_0 = path.point(0)[0];
    let trigger = |k: usize| -> Option<(usize, f64)> {
        let p = path.point(k);
        match rule {
            StopRule::ExitSimplex => p.iter().position(|&v| v <= 0.0).map(|i| (i, 0.0)),
            StopRule::MinWeightBelow(m) => {
                let level = 1.0 / m as f64;
                p.iter().position(|&v| v < level).map(|i| (i, level))
            }
            StopRule::FirstAssetHalved => (p[0] <= mu1_0 / 2.0).then_some((0, mu1_0 / 2.0)),
            StopRule::Horizon(_) => None,
        }
    };
    if let StopRule::Horizon(t_end) = rule {
        if t_end > grid.end() {
            return (path.clone(), HitRecord::none(rule));
        }
        let k = (0..=n).find(|&k| grid.time(k) >= t_end - 1e-12 * grid.dt).unwrap_or(n);
        return (
            path.stopped_at(k),
            HitRecord {
                rule,
                stop_index: Some(k),
                time: Some(t_end),
            },
        );
    }
    for k in 0..=n {
        if let Some((i, level)) = trigger(k) {
            let time = if k == 0 {
                grid.time(0)
            } else {
                let (a, b) = (path.point(k - 1)[i], path.point(k)[i]);
                let theta = if a != b {
                    ((a - level) / (a - b)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                grid.time(k - 1) + theta * grid.dt
            };
            return (
                path.stopped_at(k),
                HitRecord {
                    rule,
                    stop_index: Some(k),
                    time: Some(time),
                },
            );
        }
    }
    (path.clone(), HitRecord::none(rule))
}

/// One of the zoo's market models.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// `dv = (v_{i+1} − v_{i+2})/√3 dW`.
    ExpandingCircle { v0: [f64; 3] },
    /// `dw = (w_{i+1} − w_{i+2})/√(ε ∨ 3r(w)) dW`.
    Slowed { w0: [f64; 3], eps: f64 },
    /// Driver pair `(W, Ψ)` mapped to weights in closed form.
    Spiral { delta: f64 },
    /// `μᵢ = 1/3 + δ cos(W + 2π(i−1)/3)`.
    StationaryCircle { delta: f64 },
    /// `dμ = σ(μ)/√L(μ) dW` for a concave `G`.
    LyapunovFlow {
        g: GenFn,
        mu0: [f64; 3],
        gfrak: f64,
        gmax: f64,
    },
    /// Reflected Brownian first weight in `[μ₁(0)/4, 1 − μ₁(0)/4]`, `d = 2`.
    Reflected2 { mu1_0: f64, kappa: f64 },
}

pub const MODEL_IDS: [&str; 6] = [
    "expanding_circle",
    "slowed",
    "spiral",
    "stationary_circle",
    "lyapunov_flow",
    "reflected2",
];

fn interior3(x: &[f64]) -> Result<[f64; 3], ModelError> {
    let p = validate_simplex(x)?;
    if p.dim() != 3 {
        return Err(ModelError::InvalidParameter(format!(
            "expected 3 weights, got {}",
            p.dim()
        )));
    }
    if !p.is_interior() {
        return Err(ModelError::InvalidParameter(
            "start point must be interior".into(),
        ));
    }
    let s = p.as_slice();
    Ok([s[0], s[1], s[2]])
}

impl ModelSpec {
    pub fn expanding_circle(v0: &[f64]) -> Result<Self, ModelError> {
        Ok(ModelSpec::ExpandingCircle { v0: interior3(v0)? })
    }

    /// Start `vᵢ(0) = 1/3 + δ cos(2π(u + (i−1)/3))`.
    pub fn expanding_circle_trig(delta: f64, u: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0 / 3.0).contains(&delta) {
            return Err(ModelError::InvalidParameter(format!(
                "delta must lie in [0, 1/3], got {delta}"
            )));
        }
        ModelSpec::expanding_circle(&oracle::expanding_circle_trig(delta, u, 0.0, 0.0))
    }

    pub fn slowed(w0: &[f64]) -> Result<Self, ModelError> {
        let w0 = interior3(w0)?;
        let r0 = radial_r_centered(&w0);
        if r0 < 1e-15 {
            return Err(ModelError::AtNode);
        }
        Ok(ModelSpec::Slowed {
            w0,
            eps: 1.5 * r0,
        })
    }

    pub fn spiral(delta: f64) -> Result<Self, ModelError> {
        if !(delta > 0.0 && delta < 1.0 / 9.0) {
            return Err(ModelError::InvalidParameter(format!(
                "spiral delta must lie in (0, 1/9), got {delta}"
            )));
        }
        Ok(ModelSpec::Spiral { delta })
    }

    pub fn stationary_circle(delta: f64) -> Result<Self, ModelError> {
        if !(delta > 0.0 && delta < 1.0 / 3.0) {
            return Err(ModelError::InvalidParameter(format!(
                "stationary_circle delta must lie in (0, 1/3), got {delta}"
            )));
        }
        Ok(ModelSpec::StationaryCircle { delta })
    }

    /// Lyapunov flow for `g` from `mu0`; `gfrak` defaults to the numerically
    /// computed supremum of `g` over the boundary.
    pub fn lyapunov_flow(g: GenFn, mu0: &[f64], gfrak: Option<f64>) -> Result<Self, ModelError> {
        let mu0 = interior3(mu0)?;
        if !g.is_concave() {
            return Err(ModelError::InvalidParameter(format!(
                "{} is not concave",
                g.label()
            )));
        }
        let lr = level_range(&g);
        let gfrak = gfrak.unwrap_or(lr.gfrak);
        let g0 = g.value(&mu0);
        if !(g0 > gfrak && g0 < lr.max) {
            return Err(ModelError::InvalidParameter(format!(
                "G(mu0) = {g0} must lie in ({gfrak}, {})",
                lr.max
            )));
        }
        lyapunov_sigma(&g, &mu0)?;
        Ok(ModelSpec::LyapunovFlow {
            g,
            mu0,
            gfrak,
            gmax: lr.max,
        })
    }

    pub fn reflected2(mu1_0: f64, kappa: f64) -> Result<Self, ModelError> {
        if !(mu1_0 > 0.0 && mu1_0 < 1.0) || !(kappa > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "reflected2 needs mu1_0 in (0, 1) and kappa > 0 (got {mu1_0}, {kappa})"
            )));
        }
        Ok(ModelSpec::Reflected2 { mu1_0, kappa })
    }

    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::ExpandingCircle { .. } => "expanding_circle",
            ModelSpec::Slowed { .. } => "slowed",
            ModelSpec::Spiral { .. } => "spiral",
            ModelSpec::StationaryCircle { .. } => "stationary_circle",
            ModelSpec::LyapunovFlow { .. } => "lyapunov_flow",
            ModelSpec::Reflected2 { .. } => "reflected2",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Reflected2 { .. } => 2,
            _ => 3,
        }
    }

    pub fn n_drivers(&self) -> usize {
        match self {
            ModelSpec::Spiral { .. } => 2,
            _ => 1,
        }
    }

    pub fn initial(&self) -> Vec<f64> {
        match self {
            ModelSpec::ExpandingCircle { v0 } => v0.to_vec(),
            ModelSpec::Slowed { w0, .. } => w0.to_vec(),
            ModelSpec::Spiral { delta } => oracle::spiral(2.0 * delta, 0.0, 0.0).to_vec(),
            ModelSpec::StationaryCircle { delta } => oracle::stationary_circle(*delta, 0.0).to_vec(),
            ModelSpec::LyapunovFlow { mu0, .. } => mu0.to_vec(),
            ModelSpec::Reflected2 { mu1_0, .. } => vec![*mu1_0, 1.0 - mu1_0],
        }
    }

    /// Model-specific lower bound on the exit time, where one exists.
    pub fn t_star(&self) -> Option<f64> {
        match self {
            ModelSpec::ExpandingCircle { v0 } => {
                Some((1.0 / (6.0 * radial_r_centered(v0))).ln())
            }
            ModelSpec::Slowed { w0, .. } => Some(q_value(w0) - 0.5),
            ModelSpec::Spiral { delta } => Some(-2.0 * (9.0 * delta).ln()),
            ModelSpec::LyapunovFlow { g, mu0, gfrak, .. } => Some(g.value(mu0) - gfrak),
            _ => None,
        }
    }

    pub fn default_horizon(&self) -> f64 {
        match self {
            ModelSpec::ExpandingCircle { .. } => self.t_star().unwrap_or(1.0).min(1.0),
            ModelSpec::Slowed { .. } => self.t_star().unwrap_or(0.1).max(0.01),
            ModelSpec::Spiral { .. } => self.t_star().unwrap_or(1.0),
            ModelSpec::StationaryCircle { .. } => 1.0,
            ModelSpec::LyapunovFlow { g, mu0, .. } => g.value(mu0) + 0.05,
            ModelSpec::Reflected2 { .. } => 1.0,
        }
    }

    /// Whether the weights are (stopped) martingales.
    pub fn is_martingale(&self) -> bool {
        !matches!(
            self,
            ModelSpec::StationaryCircle { .. } | ModelSpec::Reflected2 { .. }
        )
    }

    pub fn has_exact(&self) -> bool {
        matches!(
            self,
            ModelSpec::ExpandingCircle { .. }
                | ModelSpec::StationaryCircle { .. }
                | ModelSpec::Reflected2 { .. }
        )
    }

    /// Simulates one path on `grid` from the given Brownian increments
    /// (`n_steps × n_drivers`, step-major).
    pub fn simulate_with_noise(
        &self,
        grid: TimeGrid,
        noise: &[f64],
        scheme: Scheme,
        eps: f64,
        refine: Option<Refinement>,
    ) -> Result<SimPath, ModelError> {
        let m = self.n_drivers();
        if noise.len() != grid.n_steps * m {
            return Err(ModelError::Shape(format!(
                "expected {} increments, got {}",
                grid.n_steps * m,
                noise.len()
            )));
        }
        let (run, phi, rule) = match self {
            ModelSpec::Spiral { delta } => {
                let (run, phi) = simulate_spiral(*delta, grid, noise, scheme)?;
                (run, Some(phi), StopRule::Horizon(self.t_star().unwrap_or(f64::INFINITY)))
            }
            ModelSpec::Reflected2 { mu1_0, kappa } => {
                (simulate_reflected(*mu1_0, *kappa, grid, noise), None, StopRule::ExitSimplex)
            }
            _ if scheme == Scheme::Exact => {
                (self.integrate_exact(grid, noise, eps)?, None, StopRule::ExitSimplex)
            }
            _ => {
                let x0 = self.initial();
                let run = match self {
                    ModelSpec::ExpandingCircle { .. } => integrate_sde(
                        &CircleSystem::EXPANDING,
                        &x0,
                        grid,
                        noise,
                        scheme,
                        eps,
                        refine,
                    )?,
                    ModelSpec::Slowed { eps: cap, .. } => integrate_sde(
                        &CircleSystem {
                            slow_eps: Some(*cap),
                            stationary: false,
                        },
                        &x0,
                        grid,
                        noise,
                        scheme,
                        eps,
                        refine,
                    )?,
                    ModelSpec::StationaryCircle { .. } => integrate_sde(
                        &CircleSystem::STATIONARY,
                        &x0,
                        grid,
                        noise,
                        scheme,
                        eps,
                        refine,
                    )?,
                    ModelSpec::LyapunovFlow { g, .. } => integrate_sde(
                        &LyapunovSystem { g },
                        &x0,
                        grid,
                        noise,
                        scheme,
                        eps,
                        refine,
                    )?,
                    _ => unreachable!("handled above"),
                };
                (run, None, StopRule::ExitSimplex)
            }
        };
        let d = self.dim();
        let path = WeightPath::new(grid, d, run.data, run.stop_index)?;
        let cov = CovariationPath::new(grid, d, run.cov, CovSource::Analytic)
            .map_err(|e| ModelError::Shape(e.to_string()))?;
        Ok(SimPath {
            path,
            noise: noise.to_vec(),
            n_drivers: m,
            analytic_cov: cov,
            hit: HitRecord {
                rule,
                stop_index: run.stop_index,
                time: run.hit_time,
            },
            phi,
        })
    }

    /// Closed-form weights on the grid, with the same absorption convention
    /// as the schemes.
    fn integrate_exact(&self, grid: TimeGrid, noise: &[f64], eps: f64) -> Result<SdeRun, ModelError> {
        let point = |t: f64, w: f64| -> [f64; 3] {
            match self {
                ModelSpec::ExpandingCircle { v0 } => oracle::expanding_circle_general(v0, t, w),
                ModelSpec::StationaryCircle { delta } => oracle::stationary_circle(*delta, w),
                _ => unreachable!(),
            }
        };
        if !matches!(
            self,
            ModelSpec::ExpandingCircle { .. } | ModelSpec::StationaryCircle { .. }
        ) {
            return Err(ModelError::NoExactSolution);
        }
        let sys = if matches!(self, ModelSpec::StationaryCircle { .. }) {
            CircleSystem::STATIONARY
        } else {
            CircleSystem::EXPANDING
        };
        let n = grid.n_steps;
        let x0 = self.initial();
        let mut data = Vec::with_capacity((n + 1) * 3);
        data.extend_from_slice(&x0);
        let mut cov = vec![0.0; n * 9];
        let mut x = [x0[0], x0[1], x0[2]];
        let mut b = [0.0; 3];
        let mut w = 0.0;
        let mut stop_index = None;
        let mut hit_time = None;
        for k in 0..n {
            if stop_index.is_some() {
                data.extend_from_slice(&x);
                continue;
            }
            sys.diffusion(grid.time(k), &x, &mut b)?;
            w += noise[k];
            let mut xn = point(grid.time(k + 1), w);
            let mut frac = 1.0;
            if let Some(theta) = sde::absorb(&x, &mut xn, eps) {
                frac = theta;
                stop_index = Some(k + 1);
                hit_time = Some(grid.time(k) + theta * grid.dt);
            }
            for i in 0..3 {
                for j in 0..3 {
                    cov[k * 9 + i * 3 + j] = b[i] * b[j] * grid.dt * frac;
                }
            }
            x = xn;
            data.extend_from_slice(&x);
        }
        Ok(SdeRun {
            data,
            stop_index,
            hit_time,
            cov,
        })
    }

    /// Simulates path `index` of an ensemble from its own Gaussian stream.
    pub fn simulate_path(&self, cfg: &SimConfig, index: usize) -> Result<SimPath, ModelError> {
        let grid = cfg.grid()?;
        let noise = brownian_increments(cfg.seed, index as u64, cfg.dt, grid.n_steps, self.n_drivers());
        let refine = cfg.refine.then(|| Refinement::new(cfg.seed, index as u64));
        self.simulate_with_noise(grid, &noise, cfg.scheme, cfg.boundary_epsilon, refine)
    }

    /// Parses ids such as `slowed:w0=[0.5,0.3,0.2]` or
    /// `lyapunov_flow:G=geom_mean,mu0=[0.5,0.3,0.2]`.
    pub fn parse(s: &str) -> Result<ModelSpec, ModelError> {
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n.trim(), r.trim()),
            None => (s.trim(), ""),
        };
        let params = split_top_level(rest)
            .into_iter()
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| ModelError::InvalidParameter(format!("'{p}' is not key=value")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let known: &[&str] = match name {
            "expanding_circle" => &["delta", "u", "v0"],
            "slowed" => &["w0"],
            "spiral" => &["delta"],
            "stationary_circle" => &["delta"],
            "lyapunov_flow" => &["G", "mu0", "gfrak"],
            "reflected2" => &["mu1_0", "kappa"],
            _ => return Err(ModelError::UnknownModel(name.to_string())),
        };
        if let Some((k, _)) = params.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            return Err(ModelError::InvalidParameter(format!(
                "unknown parameter '{k}' for {name}"
            )));
        }
        let get = |k: &str| params.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let num = |k: &str, default: f64| -> Result<f64, ModelError> {
            match get(k) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| ModelError::InvalidParameter(format!("{k} = '{v}'"))),
            }
        };
        let vec = |k: &str, default: &[f64]| -> Result<Vec<f64>, ModelError> {
            match get(k) {
                None => Ok(default.to_vec()),
                Some(v) => parse_vector(v)
                    .ok_or_else(|| ModelError::InvalidParameter(format!("{k} = '{v}'"))),
            }
        };
        const MU0: [f64; 3] = [0.5, 0.3, 0.2];
        match name {
            "expanding_circle" => match get("v0") {
                Some(_) => ModelSpec::expanding_circle(&vec("v0", &[])?),
                None => ModelSpec::expanding_circle_trig(num("delta", 0.1)?, num("u", 0.0)?),
            },
            "slowed" => ModelSpec::slowed(&vec("w0", &MU0)?),
            "spiral" => ModelSpec::spiral(num("delta", 0.01)?),
            "stationary_circle" => ModelSpec::stationary_circle(num("delta", 0.1)?),
            "lyapunov_flow" => {
                let g = GenFn::parse(get("G").unwrap_or("geom_mean"), None)?;
                let gfrak = get("gfrak")
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| ModelError::InvalidParameter(format!("gfrak = '{v}'")))
                    })
                    .transpose()?;
                ModelSpec::lyapunov_flow(g, &vec("mu0", &MU0)?, gfrak)
            }
            "reflected2" => ModelSpec::reflected2(num("mu1_0", 0.5)?, num("kappa", 0.3)?),
            _ => unreachable!(),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = |x: &[f64]| {
            x.iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            ModelSpec::ExpandingCircle { v0 } => write!(f, "expanding_circle:v0=[{}]", v(v0)),
            ModelSpec::Slowed { w0, .. } => write!(f, "slowed:w0=[{}]", v(w0)),
            ModelSpec::Spiral { delta } => write!(f, "spiral:delta={delta}"),
            ModelSpec::StationaryCircle { delta } => write!(f, "stationary_circle:delta={delta}"),
            ModelSpec::LyapunovFlow { g, mu0, .. } => {
                write!(f, "lyapunov_flow:G={},mu0=[{}]", g.label(), v(mu0))
            }
            ModelSpec::Reflected2 { mu1_0, kappa } => {
                write!(f, "reflected2:mu1_0={mu1_0},kappa={kappa}")
            }
        }
    }
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out
}

fn parse_vector(s: &str) -> Option<Vec<f64>> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?;
    inner.split(',').map(|v| v.trim().parse().ok()).collect()
}

fn q_value(x: &[f64]) -> f64 {
    1.0 - x.iter().map(|v| v * v).sum::<f64>()
}

/// Expanding, slowed and stationary circles share the rotation field
/// `(x_{i+1} − x_{i+2})/√3`.
struct CircleSystem {
    slow_eps: Option<f64>,
    stationary: bool,
}

impl CircleSystem {
    const EXPANDING: CircleSystem = CircleSystem {
        slow_eps: None,
        stationary: false,
    };
    const STATIONARY: CircleSystem = CircleSystem {
        slow_eps: None,
        stationary: true,
    };
}

impl SdeSystem for CircleSystem {
    fn dim(&self) -> usize {
        3
    }

    fn n_drivers(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        if self.stationary {
            for i in 0..3 {
                out[i] = -0.5 * (x[i] - 1.0 / 3.0);
            }
        } else {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
    }

    fn diffusion(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        let scale = match self.slow_eps {
            // (w_{i+1} − w_{i+2}) / √(ε ∨ 3r)
            Some(eps) => 1.0 / eps.max(3.0 * radial_r_centered(x)).sqrt(),
            None => 1.0 / 3f64.sqrt(),
        };
        out[0] = (x[1] - x[2]) * scale;
        out[1] = (x[2] - x[0]) * scale;
        out[2] = (x[0] - x[1]) * scale;
        Ok(())
    }
}

struct LyapunovSystem<'a> {
    g: &'a GenFn,
}

impl SdeSystem for LyapunovSystem<'_> {
    fn dim(&self) -> usize {
        3
    }

    fn n_drivers(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }

    fn diffusion(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        let c = lyapunov_sigma(self.g, x)?;
        let s = 1.0 / c.l.sqrt();
        for i in 0..3 {
            out[i] = c.sigma[i] * s;
        }
        Ok(())
    }
}

/// Clamp bound for `Ψ` relative to `δ`.
const PSI_CLAMP: f64 = 1.0 - 1e-9;

fn simulate_spiral(
    delta: f64,
    grid: TimeGrid,
    noise: &[f64],
    scheme: Scheme,
) -> Result<(SdeRun, Vec<f64>), ModelError> {
    if scheme == Scheme::Exact {
        return Err(ModelError::NoExactSolution);
    }
    let n = grid.n_steps;
    let t_star = -2.0 * (9.0 * delta).ln();
    let bound = delta * PSI_CLAMP;
    let mut data = Vec::with_capacity((n + 1) * 3);
    let mut phi_path = Vec::with_capacity(n + 1);
    let mut cov = vec![0.0; n * 9];
    let (mut w, mut psi) = (0.0f64, 0.0f64);
    let mut stop_index = None;
    data.extend_from_slice(&oracle::spiral(2.0 * delta, 0.0, 0.0));
    phi_path.push(2.0 * delta);
    for k in 0..n {
        if stop_index.is_none() && grid.time(k + 1) > t_star + 1e-12 * grid.dt {
            stop_index = Some(k);
        }
        if stop_index.is_some() {
            let last: [f64; 3] = data[k * 3..k * 3 + 3].try_into().expect("3 weights");
            data.extend_from_slice(&last);
            phi_path.push(phi_path[k]);
            continue;
        }
        let t = grid.time(k);
        let phi = 2.0 * delta + psi;
        let e = t.exp();
        let vol_psi = (psi - delta) * (psi + delta);
        for i in 0..3 {
            let a = w + 2.0 * PI * i as f64 / 3.0;
            let (si, ci) = a.sin_cos();
            for j in 0..3 {
                let b = w + 2.0 * PI * j as f64 / 3.0;
                let (sj, cj) = b.sin_cos();
                cov[k * 9 + i * 3 + j] =
                    e * (phi * phi * si * sj + vol_psi * vol_psi * ci * cj) * grid.dt;
            }
        }
        let (dw, db) = (noise[2 * k], noise[2 * k + 1]);
        w += dw;
        let mut next = psi + vol_psi * db;
        if scheme == Scheme::Milstein {
            next += 0.5 * vol_psi * 2.0 * psi * (db * db - grid.dt);
        }
        psi = next.clamp(-bound, bound);
        let phi = 2.0 * delta + psi;
        phi_path.push(phi);
        data.extend_from_slice(&oracle::spiral(phi, grid.time(k + 1), w));
    }
    let hit_time = stop_index.map(|_| t_star);
    Ok((
        SdeRun {
            data,
            stop_index,
            hit_time,
            cov,
        },
        phi_path,
    ))
}

fn simulate_reflected(mu1_0: f64, kappa: f64, grid: TimeGrid, noise: &[f64]) -> SdeRun {
    let n = grid.n_steps;
    let (a, b) = (mu1_0 / 4.0, 1.0 - mu1_0 / 4.0);
    let mut data = Vec::with_capacity((n + 1) * 2);
    data.extend_from_slice(&[mu1_0, 1.0 - mu1_0]);
    let mut cov = vec![0.0; n * 4];
    let mut w = 0.0;
    let q = kappa * kappa * grid.dt;
    for k in 0..n {
        w += noise[k];
        let m1 = oracle::fold(mu1_0 + kappa * w, a, b);
        data.extend_from_slice(&[m1, 1.0 - m1]);
        cov[k * 4..k * 4 + 4].copy_from_slice(&[q, -q, -q, q]);
    }
    SdeRun {
        data,
        stop_index: None,
        hit_time: None,
        cov,
    }
}

/// One simulated path with the data needed by oracle comparisons.
#[derive(Debug, Clone)]
pub struct SimPath {
    pub path: WeightPath,
    /// Brownian increments, `n_steps × n_drivers`, step-major.
    pub noise: Vec<f64>,
    pub n_drivers: usize,
    pub analytic_cov: CovariationPath,
    pub hit: HitRecord,
    /// `Φ(tₖ)` for the spiral model.
    pub phi: Option<Vec<f64>>,
}

impl SimPath {
    /// Cumulative value of driver `j` at every grid point.
    pub fn driver_path(&self, j: usize) -> Vec<f64> {
        let m = self.n_drivers;
        let mut out = Vec::with_capacity(self.noise.len() / m + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for k in 0..self.noise.len() / m {
            acc += self.noise[k * m + j];
            out.push(acc);
        }
        out
    }
}

/// All paths of an ensemble, in index order.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub cfg: SimConfig,
    pub paths: Vec<SimPath>,
}

/// Simulates every path with the configured scheme.
pub fn simulate(spec: &ModelSpec, cfg: &SimConfig) -> Result<Ensemble, ModelError> {
    let paths = map_paths(spec, cfg, |_, p| Ok::<_, ModelError>(p))?;
    Ok(Ensemble { cfg: *cfg, paths })
}

/// Euler–Maruyama ensemble.
pub fn simulate_em(spec: &ModelSpec, cfg: &SimConfig) -> Result<Ensemble, ModelError> {
    simulate(spec, &cfg.with_scheme(Scheme::EulerMaruyama))
}

/// Simulates and reduces each path in parallel without keeping the ensemble;
/// results come back in path order.
pub fn map_paths<T, E, F>(spec: &ModelSpec, cfg: &SimConfig, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: From<ModelError> + Send,
    F: Fn(usize, SimPath) -> Result<T, E> + Sync,
{
    cfg.validate()?;
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let p = spec.simulate_path(cfg, i)?;
            f(i, p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_model_ids() {
        let m = ModelSpec::parse("expanding_circle:delta=0.1,u=0.0").unwrap();
        let v = m.initial();
        assert!((v[0] - (1.0 / 3.0 + 0.1)).abs() < 1e-15);
        assert!(matches!(
            ModelSpec::parse("slowed:w0=[0.6,0.3,0.1]").unwrap(),
            ModelSpec::Slowed { .. }
        ));
        assert!(matches!(
            ModelSpec::parse("lyapunov_flow:G=geom_mean,mu0=[0.5,0.3,0.2]").unwrap(),
            ModelSpec::LyapunovFlow { .. }
        ));
        assert!(matches!(
            ModelSpec::parse("bogus"),
            Err(ModelError::UnknownModel(_))
        ));
        assert!(ModelSpec::parse("spiral:delta=0.2").is_err());
        assert!(ModelSpec::parse("spiral:gamma=0.01").is_err());
        assert!(matches!(
            ModelSpec::parse("slowed:w0=[0.3333333333333333,0.3333333333333333,0.3333333333333334]"),
            Err(ModelError::AtNode)
        ));
        for id in MODEL_IDS {
            let m = ModelSpec::parse(id).unwrap();
            assert_eq!(m.id(), id);
            assert_eq!(ModelSpec::parse(&m.to_string()).unwrap().id(), id);
        }
    }

    #[test]
    fn t_star_values() {
        let m = ModelSpec::expanding_circle_trig(0.1, 0.0).unwrap();
        assert!((m.t_star().unwrap() - (1.0f64 / 0.09).ln()).abs() < 1e-12);
        assert!((m.t_star().unwrap() - 2.40795).abs() < 1e-5);
        let s = ModelSpec::spiral(0.01).unwrap();
        assert!((s.t_star().unwrap() - 4.81589).abs() < 1e-5);
    }

    #[test]
    fn node_start_stays_put() {
        let m = ModelSpec::expanding_circle(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let cfg = SimConfig::new(0.01, 1.0, 1, 3);
        for scheme in [Scheme::EulerMaruyama, Scheme::Milstein, Scheme::Exact] {
            let p = m.simulate_path(&cfg.with_scheme(scheme), 0).unwrap();
            let x0 = p.path.point(0).to_vec();
            assert!(p
                .path
                .points()
                .all(|x| x.iter().zip(&x0).all(|(a, b)| (a - b).abs() < 1e-15)));
        }
    }

    #[test]
    fn boundary_stop_linear_crossing() {
        let grid = TimeGrid::new(0.0, 0.01, 40).unwrap();
        let pts: Vec<Vec<f64>> = (0..=40)
            .map(|k| {
                let m1 = 0.5 - grid.time(k);
                vec![m1, 1.0 - m1]
            })
            .collect();
        let path = WeightPath::from_points(grid, &pts).unwrap();
        let (stopped, hit) = boundary_stop(&path, StopRule::FirstAssetHalved);
        let t = hit.time.unwrap();
        assert!((t - 0.25).abs() <= 0.005 + 1e-12);
        let k = hit.stop_index.unwrap();
        assert_eq!(stopped.point(40), stopped.point(k));
        let (_, none) = boundary_stop(&path, StopRule::ExitSimplex);
        assert_eq!(none.time_or_inf(), f64::INFINITY);
    }

    #[test]
    fn reflected_stays_in_band() {
        let m = ModelSpec::reflected2(0.5, 3.0).unwrap();
        let p = m.simulate_path(&SimConfig::new(0.01, 2.0, 1, 9), 0).unwrap();
        assert!(p.path.points().all(|x| x[0] >= 0.125 && x[0] <= 0.875));
    }
}
