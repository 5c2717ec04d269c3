//! Monte Carlo harness: relative-arbitrage verdicts, horizon thresholds,
//! martingale-mean tests and the per-model identity suite.

use serde::Serialize;
use thiserror::Error;

use crate::genfn::{GenFn, GenFnError, GeneratingFunction};
use crate::models::{map_paths, ModelError, ModelSpec, Scheme, SimConfig, SimPath};
use crate::quadvar::{
    alpha_decompose, excess_dominance_check, gamma_g, realized_cov, slope_monotone_check,
    QuadVarError,
};
use crate::simplex::radial_r_centered;
use crate::strategies::{additive_generate, wealth_selffinancing, Strategy, StrategyError, WealthPath};

#[derive(Debug, Error)]
pub enum ArbError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    QuadVar(#[from] QuadVarError),
    #[error(transparent)]
    GenFn(#[from] GenFnError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut s = NeumaierSum::default();
    xs.iter().for_each(|&x| s.add(x));
    let mean = s.value() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let mut v = NeumaierSum::default();
    xs.iter().for_each(|&x| v.add((x - mean) * (x - mean)));
    let var = v.value() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArbClass {
    StrongArbConsistent,
    ArbConsistent,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArbVerdict {
    pub n_paths: usize,
    /// Fraction of paths with `V(T) ≥ 1 − tol`.
    pub frac_at_least_one: f64,
    /// Fraction of paths with `V(T) > 1 + tol`.
    pub frac_above_one: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Paths on which `V` dips below `−tol` somewhere.
    pub nonnegativity_violations: usize,
    pub tol: f64,
    pub class: ArbClass,
}

impl ArbVerdict {
    /// Classifies terminal wealths `v_t` given each path's minimum wealth.
    pub fn from_values(v_t: &[f64], v_min: &[f64], tol: f64) -> ArbVerdict {
        let n = v_t.len();
        let ge = v_t.iter().filter(|&&v| v >= 1.0 - tol).count();
        let gt = v_t.iter().filter(|&&v| v > 1.0 + tol).count();
        let neg = v_min.iter().filter(|&&v| v < -tol).count();
        let (mean, _) = mean_se(v_t);
        let class = if n > 0 && neg == 0 && ge == n && gt == n {
            ArbClass::StrongArbConsistent
        } else if n > 0 && neg == 0 && ge == n && gt > 0 {
            ArbClass::ArbConsistent
        } else {
            ArbClass::Inconsistent
        };
        ArbVerdict {
            n_paths: n,
            frac_at_least_one: if n == 0 { 0.0 } else { ge as f64 / n as f64 },
            frac_above_one: if n == 0 { 0.0 } else { gt as f64 / n as f64 },
            min: v_t.iter().fold(f64::INFINITY, |m, &v| m.min(v)),
            max: v_t.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)),
            mean,
            nonnegativity_violations: neg,
            tol,
            class,
        }
    }
}

/// Evaluates the strategy built by `ctor` on every path through the
/// self-financing sum, at the last grid time `≤ T` (the paths are frozen
/// after their stop index, so this is `V(T ∧ stop)`).
pub fn arb_verdict<F>(
    spec: &ModelSpec,
    cfg: &SimConfig,
    horizon: f64,
    tol: f64,
    ctor: F,
) -> Result<ArbVerdict, ArbError>
where
    F: Fn(&SimPath) -> Result<Strategy, ArbError> + Sync,
{
    let pairs = map_paths(spec, cfg, |_, p| {
        let s = ctor(&p)?;
        let v = wealth_selffinancing(&s, &p.path)?;
        let k = p.path.grid().index_at_or_before(horizon);
        let vmin = v.values()[..=k].iter().fold(f64::INFINITY, |m, &x| m.min(x));
        Ok::<_, ArbError>((v.at(k), vmin))
    })?;
    let (vt, vmin): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(ArbVerdict::from_values(&vt, &vmin, tol))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonReport {
    pub genfn: String,
    pub g_mu0: f64,
    pub eta: f64,
    /// `G(μ(0))/η`.
    pub threshold: f64,
    pub tested: Vec<(f64, ArbVerdict)>,
}

/// Threshold `T > G(μ(0))/η` beyond which a slope-`η` Lyapunov function
/// yields relative arbitrage.
pub fn horizon_threshold(g: &dyn GeneratingFunction, mu0: &[f64], eta: f64) -> Result<HorizonReport, ArbError> {
    let g0 = g.value(mu0);
    if !(g0 > 0.0) || !(eta > 0.0) {
        return Err(ArbError::InvalidArgument(format!(
            "need G(mu0) > 0 and eta > 0 (G(mu0) = {g0}, eta = {eta})"
        )));
    }
    Ok(HorizonReport {
        genfn: g.label(),
        g_mu0: g0,
        eta,
        threshold: g0 / eta,
        tested: Vec::new(),
    })
}

/// Runs the `G/G(μ(0))` additive strategy at each horizon.
pub fn horizon_report(
    spec: &ModelSpec,
    cfg: &SimConfig,
    g: &GenFn,
    eta: f64,
    horizons: &[f64],
    tol: f64,
) -> Result<HorizonReport, ArbError> {
    let mu0 = spec.initial();
    let mut report = horizon_threshold(g, &mu0, eta)?;
    let star = g.clone().normalized(&mu0)?;
    for &t in horizons {
        let c = SimConfig { horizon: t, ..*cfg };
        let v = arb_verdict(spec, &c, t, tol, |p| {
            Ok(additive_generate(&star, &p.path, &p.analytic_cov)?.0)
        })?;
        report.tested.push((t, v));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssetMean {
    pub mu0: f64,
    pub mean: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VGrowth {
    pub slope: f64,
    pub se: f64,
    pub expected: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub horizon: f64,
    pub n_paths: usize,
    pub assets: Vec<AssetMean>,
    pub max_abs_z: f64,
    pub pass: bool,
    /// Slope of the `Q/Q(μ(0))` additive wealth; reported for models with
    /// drift, where it grows linearly.
    pub v_growth: Option<VGrowth>,
}

/// z-score of a sample mean against its target; rounding-level deviations
/// count as exact.
fn z_score(mean: f64, se: f64, target: f64) -> f64 {
    let dev = mean - target;
    if dev.abs() <= 1e-15 {
        0.0
    } else if se > 0.0 {
        dev / se
    } else {
        f64::INFINITY
    }
}

/// Per-asset `z = (mean μᵢ(T∧stop) − μᵢ(0))/SE`; passes when every `|z| ≤ 3`.
pub fn martingale_mean_test(spec: &ModelSpec, cfg: &SimConfig) -> Result<MartingaleReport, ArbError> {
    if cfg.n_paths < 100 {
        return Err(ArbError::InvalidArgument(format!(
            "martingale-mean test needs at least 100 paths, got {}",
            cfg.n_paths
        )));
    }
    let mu0 = spec.initial();
    let d = mu0.len();
    let drifting = !spec.is_martingale() && d == 3;
    let q = GenFn::Quadratic.normalized(&mu0)?;
    let rows = map_paths(spec, cfg, |_, p| {
        let last = p.path.last().to_vec();
        let slope = if drifting {
            let (_, v) = additive_generate(&q, &p.path, &p.analytic_cov)?;
            let t = p.path.grid().end() - p.path.grid().t0;
            Some((v.last() - 1.0) / t)
        } else {
            None
        };
        Ok::<_, ArbError>((last, slope))
    })?;
    let mut assets = Vec::with_capacity(d);
    for i in 0..d {
        let xs: Vec<f64> = rows.iter().map(|r| r.0[i]).collect();
        let (mean, se) = mean_se(&xs);
        assets.push(AssetMean {
            mu0: mu0[i],
            mean,
            se,
            z: z_score(mean, se, mu0[i]),
        });
    }
    let max_abs_z = assets.iter().fold(0.0f64, |m, a| m.max(a.z.abs()));
    let v_growth = if drifting {
        let xs: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
        let (slope, se) = mean_se(&xs);
        let expected = match spec {
            ModelSpec::StationaryCircle { delta } => {
                1.5 * delta * delta / GenFn::Quadratic.value(&mu0)
            }
            _ => f64::NAN,
        };
        Some(VGrowth {
            slope,
            se,
            expected,
            pass: (slope - expected).abs() <= 3.0 * se + 1e-9,
        })
    } else {
        None
    };
    Ok(MartingaleReport {
        horizon: cfg.horizon,
        n_paths: cfg.n_paths,
        assets,
        max_abs_z,
        pass: max_abs_z <= 3.0,
        v_growth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub max_dev: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub model: String,
    pub checks: Vec<IdentityCheck>,
    pub pass: bool,
}

/// Per-path deviations, in a fixed order: `(name, deviation, tolerance)`.
type PathChecks = Vec<(&'static str, f64, f64)>;

fn max_over<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    it.into_iter().fold(0.0f64, f64::max)
}

/// Last grid index whose point lies strictly before absorption.
fn last_live(p: &SimPath) -> usize {
    match p.path.stop_index() {
        Some(s) => s.saturating_sub(1),
        None => p.path.grid().n_steps,
    }
}

fn path_checks(spec: &ModelSpec, cfg: &SimConfig, p: &SimPath) -> Result<PathChecks, ArbError> {
    let grid = *p.path.grid();
    let x0 = p.path.point(0).to_vec();
    let live = last_live(p);
    let t = |k: usize| grid.time(k) - grid.t0;
    let horizon = grid.end() - grid.t0;
    let qv_noise = 6.0 * (2.0 * horizon * grid.dt).sqrt();
    let mut out: PathChecks = Vec::new();

    out.push((
        "sum_to_one",
        max_over(p.path.points().map(|x| (x.iter().sum::<f64>() - 1.0).abs())),
        1e-12,
    ));
    let gq = gamma_g(&GenFn::Quadratic, &p.path, &p.analytic_cov)?;
    let gh = gamma_g(&GenFn::Entropy, &p.path, &p.analytic_cov)?;
    out.push((
        "excess_growth_dominance",
        excess_dominance_check(&gh, &gq)?.max_violation,
        1e-10,
    ));

    let oracle = |p: &SimPath| -> Result<SimPath, ArbError> {
        Ok(spec.simulate_with_noise(grid, &p.noise, Scheme::Exact, cfg.boundary_epsilon, None)?)
    };

    match spec {
        ModelSpec::ExpandingCircle { v0 } => {
            let r0 = radial_r_centered(v0);
            out.push((
                "r_exponential_law",
                max_over((0..=live).map(|k| {
                    (radial_r_centered(p.path.point(k)) / (r0 * t(k).exp()) - 1.0).abs()
                })),
                1e-2,
            ));
            let o = oracle(p)?;
            let olive = last_live(&o);
            out.push((
                "r_exponential_law_oracle",
                max_over((0..=olive).map(|k| {
                    (radial_r_centered(o.path.point(k)) / (r0 * t(k).exp()) - 1.0).abs()
                })),
                1e-12,
            ));
            out.push((
                "circle_radius_oracle",
                max_over((0..=olive).map(|k| {
                    let s2: f64 = o.path.point(k).iter().map(|v| v * v).sum();
                    (s2 - (1.0 / 3.0 + r0 * t(k).exp())).abs()
                })),
                1e-12,
            ));
            let t_star = spec.t_star().unwrap_or(0.0);
            out.push((
                "exit_after_t_star",
                p.hit.time.map_or(0.0, |h| (t_star - h).max(0.0)),
                0.0,
            ));
        }
        ModelSpec::Slowed { w0, .. } => {
            let r0 = radial_r_centered(w0);
            out.push((
                "r_linear_law",
                max_over((0..=live).map(|k| (radial_r_centered(p.path.point(k)) - r0 - t(k)).abs())),
                1e-3,
            ));
            let tau = p.hit.time.unwrap_or(f64::INFINITY);
            out.push((
                "gamma_q_equals_time_analytic",
                max_over((0..=grid.n_steps).map(|k| (gq.values()[k] - t(k).min(tau)).abs())),
                1e-10,
            ));
            let gq_real = gamma_g(&GenFn::Quadratic, &p.path, &realized_cov(&p.path))?;
            out.push((
                "gamma_q_equals_time_realized",
                max_over((0..=live).map(|k| (gq_real.values()[k] - t(k)).abs())),
                qv_noise,
            ));
            let bound = GenFn::Quadratic.value(w0) - 0.5;
            out.push(("stopping_time_bound", (bound - tau).max(0.0), 1e-3));
        }
        ModelSpec::Spiral { .. } => {
            let phi = p.phi.as_ref().expect("spiral paths carry phi");
            out.push((
                "spiral_radius",
                max_over((0..=grid.n_steps).map(|k| {
                    let kk = k.min(p.path.active_end());
                    let s2: f64 = p.path.point(k).iter().map(|v| v * v).sum();
                    (s2 - (1.0 / 3.0 + 1.5 * phi[kk] * phi[kk] * t(kk).exp())).abs()
                })),
                1e-12,
            ));
            let eta = radial_r_centered(&x0) / 4.0;
            let t_end = p.hit.time.unwrap_or(horizon);
            out.push((
                "gamma_q_slope",
                slope_monotone_check(&gq, eta, t_end).max_violation,
                1e-10,
            ));
            let alpha = alpha_decompose(&p.analytic_cov);
            let min2 = alpha.min_second_eigenvalue().unwrap_or(f64::NAN);
            out.push((
                "alpha_second_eigenvalue_positive",
                if min2 > 0.0 { 0.0 } else { 1.0 },
                0.0,
            ));
        }
        ModelSpec::StationaryCircle { delta } => {
            let o = oracle(p)?;
            let r = 1.5 * delta * delta;
            out.push((
                "circle_radius_oracle",
                max_over(o.path.points().map(|x| {
                    (x.iter().map(|v| v * v).sum::<f64>() - (1.0 / 3.0 + r)).abs()
                })),
                1e-12,
            ));
            let q0 = GenFn::Quadratic.value(&x0);
            let star = GenFn::Quadratic.normalized(&x0)?;
            let slope = r / q0;
            let (_, v) = additive_generate(&star, &o.path, &o.analytic_cov)?;
            out.push((
                "q_star_wealth_analytic",
                max_over((0..=grid.n_steps).map(|k| (v.at(k) - (1.0 + slope * t(k))).abs())),
                1e-10,
            ));
            let (_, vr) = additive_generate(&star, &o.path, &realized_cov(&o.path))?;
            out.push((
                "q_star_wealth_realized",
                max_over((0..=grid.n_steps).map(|k| (vr.at(k) - (1.0 + slope * t(k))).abs())),
                slope * qv_noise,
            ));
        }
        ModelSpec::LyapunovFlow { g, mu0, gfrak, .. } => {
            let g0 = g.value(mu0);
            out.push((
                "g_decreases_at_unit_rate",
                max_over((0..=live).map(|k| (g.value(p.path.point(k)) - (g0 - t(k))).abs())),
                1e-3,
            ));
            let gg = gamma_g(g, &p.path, &p.analytic_cov)?;
            let tau = p.hit.time.unwrap_or(f64::INFINITY);
            out.push((
                "gamma_g_equals_time_analytic",
                max_over((0..=grid.n_steps).map(|k| (gg.values()[k] - t(k).min(tau)).abs())),
                1e-10,
            ));
            let dev = match p.hit.time {
                Some(h) => ((g0 - gfrak) - h).max(h - g0).max(0.0),
                None => (horizon - g0).max(0.0),
            };
            out.push(("hitting_time_bounds", dev, 2e-3));
        }
        ModelSpec::Reflected2 { mu1_0, kappa } => {
            let alpha = alpha_decompose(&p.analytic_cov);
            let mut dev = 0.0f64;
            for k in 0..alpha.n_steps() {
                if let Some(ev) = alpha.eigenvalues(k) {
                    dev = dev.max(ev[0].abs()).max((ev[1] - 1.0).abs());
                }
            }
            out.push(("alpha_eigenvalues_zero_one", dev, 1e-12));
            let (a, b) = (mu1_0 / 4.0, 1.0 - mu1_0 / 4.0);
            out.push((
                "reflection_band",
                max_over(p.path.points().map(|x| (a - x[0]).max(x[0] - b).max(0.0))),
                0.0,
            ));
            let qv = p.analytic_cov.cumulative(0, 0);
            out.push((
                "qv_slope_kappa_squared",
                max_over((0..=grid.n_steps).map(|k| (qv[k] - kappa * kappa * t(k)).abs())),
                1e-12,
            ));
        }
    }
    Ok(out)
}

/// Runs every identity applicable to `spec` over the ensemble of `cfg`;
/// martingale models with at least 100 paths also get the martingale-mean
/// test.
pub fn identity_suite(spec: &ModelSpec, cfg: &SimConfig) -> Result<IdentityReport, ArbError> {
    let per_path = map_paths(spec, cfg, |_, p| path_checks(spec, cfg, &p))?;
    let mut checks: Vec<IdentityCheck> = Vec::new();
    for row in &per_path {
        if checks.is_empty() {
            checks = row
                .iter()
                .map(|&(name, _, tol)| IdentityCheck {
                    name: name.to_string(),
                    max_dev: 0.0,
                    tol,
                    pass: true,
                })
                .collect();
        }
        for (c, &(_, dev, _)) in checks.iter_mut().zip(row) {
            // NaN deviations must fail
            c.max_dev = if dev.is_nan() { f64::NAN } else { c.max_dev.max(dev) };
        }
    }
    for c in &mut checks {
        c.pass = c.max_dev <= c.tol;
    }
    if spec.is_martingale() && cfg.n_paths >= 100 {
        let m = martingale_mean_test(spec, cfg)?;
        checks.push(IdentityCheck {
            name: "martingale_mean".into(),
            max_dev: m.max_abs_z,
            tol: 3.0,
            pass: m.pass,
        });
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(IdentityReport {
        model: spec.to_string(),
        checks,
        pass,
    })
}

/// `max_k |V_formula(tₖ) − V_selffinancing(tₖ)| / dt`, the measured constant
/// `K` of the discretization budget.
pub fn oracle_constant(formula: &WealthPath, s: &Strategy, p: &SimPath) -> Result<f64, ArbError> {
    let sf = wealth_selffinancing(s, &p.path)?;
    Ok(formula.max_abs_diff(&sf) / p.path.grid().dt)
}
