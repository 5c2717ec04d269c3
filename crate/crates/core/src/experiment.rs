//! Config-driven runs: simulate, strategy, verify and ingest. Each runner
//! writes its CSV/JSON outputs under the configured directory and returns
//! the report it wrote.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::arbitrage::{
    identity_suite, martingale_mean_test, mean_se, ArbError, ArbVerdict, IdentityCheck,
    MartingaleReport,
};
use crate::config::{ConfigError, ExperimentConfig, StrategySpec};
use crate::ingest::{empirical_gamma_h, read_caps, GammaSummary, IngestError};
use crate::models::{map_paths, ModelError, SimPath};
use crate::strategies::{
    additive_generate, multiplicative_generate, one_asset_arbitrage, power_psi,
    switching_arbitrage, wealth_selffinancing, write_strategy_csv, Strategy, StrategyError,
    WealthPath,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Arb(#[from] ArbError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join(name);
    Ok(BufWriter::new(File::create(&p).map_err(io_err(&p))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), RunError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(&dir.join(name)))
}

/// Runs `f` on a pool of `threads` workers, or the global pool when `None`.
pub fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, RunError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| RunError::Pool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// A strategy with `V(0) = 1` and its closed-form wealth.
pub struct BuiltStrategy {
    pub strategy: Strategy,
    pub formula: WealthPath,
}

/// Builds the configured strategy on one path, normalized to `V(0) = 1`.
pub fn build_strategy(exp: &ExperimentConfig, p: &SimPath) -> Result<BuiltStrategy, ArbError> {
    let path = &p.path;
    let cov = &p.analytic_cov;
    let horizon = path.grid().end() - path.grid().t0;
    let (s, v) = match exp.strategy {
        StrategySpec::Market => {
            let s = Strategy::market(*path.grid(), path.dim());
            let v = WealthPath::new(*path.grid(), vec![1.0; path.len()])?;
            (s, v)
        }
        StrategySpec::Additive => additive_generate(&exp.genfn, path, cov)?,
        StrategySpec::Multiplicative => multiplicative_generate(&exp.genfn, path, cov)?,
        StrategySpec::Power { q } => {
            let r = power_psi(q, path, cov)?;
            (r.strategy, r.wealth)
        }
        StrategySpec::OneAsset { eta } => {
            let r = one_asset_arbitrage(horizon, eta, path, cov)?;
            (r.strategy, r.wealth)
        }
        StrategySpec::Switching { h, eta } => {
            let r = switching_arbitrage(&exp.genfn, h, eta, horizon, path, cov)?;
            (r.strategy, r.wealth)
        }
    };
    let v0 = v.at(0);
    if !(v0.abs() > 0.0) || !v0.is_finite() {
        return Err(ArbError::InvalidArgument(format!(
            "strategy {} has initial wealth {v0}; cannot normalize",
            s.label
        )));
    }
    Ok(BuiltStrategy {
        strategy: s.scaled(1.0 / v0),
        formula: v.scaled(1.0 / v0),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HitStats {
    pub n_hit: usize,
    pub fraction: f64,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl HitStats {
    fn from_times(times: &[Option<f64>]) -> HitStats {
        let hits: Vec<f64> = times.iter().flatten().copied().collect();
        let n = hits.len();
        HitStats {
            n_hit: n,
            fraction: if times.is_empty() { 0.0 } else { n as f64 / times.len() as f64 },
            mean: (n > 0).then(|| mean_se(&hits).0),
            min: hits.iter().copied().reduce(f64::min),
            max: hits.iter().copied().reduce(f64::max),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub model: String,
    pub scheme: String,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub exported_paths: usize,
    pub hitting: HitStats,
    pub martingale: Option<MartingaleReport>,
}

/// Writes `ensemble.csv` (`t,path_id,mu1,...`) for the first
/// `export_paths` paths and `simulate.json`.
pub fn run_simulate(exp: &ExperimentConfig) -> Result<SimulateReport, RunError> {
    let dir = &exp.out;
    let rows = map_paths(&exp.model, &exp.sim, |i, p| {
        let keep = (i < exp.export_paths).then(|| p.path.clone());
        Ok::<_, ModelError>((p.hit.time, keep))
    })?;
    let mut w = create(dir, "ensemble.csv")?;
    let mut csv = csv::Writer::from_writer(&mut w);
    let d = exp.model.dim();
    let mut header = vec!["t".to_string(), "path_id".to_string()];
    header.extend((1..=d).map(|i| format!("mu{i}")));
    csv.write_record(&header).map_err(IngestError::from)?;
    let mut exported = 0;
    for (i, (_, kept)) in rows.iter().enumerate() {
        if let Some(path) = kept {
            exported += 1;
            for (k, x) in path.points().enumerate() {
                let mut rec = vec![path.grid().time(k).to_string(), i.to_string()];
                rec.extend(x.iter().map(|v| v.to_string()));
                csv.write_record(&rec).map_err(IngestError::from)?;
            }
        }
    }
    csv.flush().map_err(io_err(&dir.join("ensemble.csv")))?;
    drop(csv);
    w.flush().map_err(io_err(&dir.join("ensemble.csv")))?;
    let times: Vec<Option<f64>> = rows.iter().map(|r| r.0).collect();
    let martingale = if exp.sim.n_paths >= 100 {
        Some(martingale_mean_test(&exp.model, &exp.sim)?)
    } else {
        None
    };
    let report = SimulateReport {
        model: exp.model.to_string(),
        scheme: format!("{:?}", exp.sim.scheme),
        dt: exp.sim.dt,
        horizon: exp.sim.horizon,
        n_paths: exp.sim.n_paths,
        seed: exp.sim.seed,
        exported_paths: exported,
        hitting: HitStats::from_times(&times),
        martingale,
    };
    write_json(dir, "simulate.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleStats {
    /// `max |V_formula − V_selffinancing|` over paths and grid points.
    pub max_dev: f64,
    /// `max_dev / dt`.
    pub k: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyReport {
    pub model: String,
    pub strategy: String,
    pub genfn: String,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub verdict: ArbVerdict,
    pub oracle: OracleStats,
    pub hitting: HitStats,
}

struct PathOutcome {
    v_t: f64,
    v_min: f64,
    dev: f64,
    hit: Option<f64>,
}

fn evaluate(exp: &ExperimentConfig) -> Result<(Vec<PathOutcome>, OracleStats, ArbVerdict), RunError> {
    let out = map_paths(&exp.model, &exp.sim, |_, p| {
        let b = build_strategy(exp, &p)?;
        let v = wealth_selffinancing(&b.strategy, &p.path)?;
        Ok::<_, ArbError>(PathOutcome {
            v_t: v.last(),
            v_min: v.values().iter().fold(f64::INFINITY, |m, &x| m.min(x)),
            dev: v.max_abs_diff(&b.formula),
            hit: p.hit.time,
        })
    })?;
    let max_dev = out.iter().fold(0.0f64, |m, o| m.max(o.dev));
    let oracle = OracleStats {
        max_dev,
        k: max_dev / exp.sim.dt,
    };
    // tol = 1e-6 + K·dt with the measured K
    let tol = 1e-6 + max_dev;
    let v_t: Vec<f64> = out.iter().map(|o| o.v_t).collect();
    let v_min: Vec<f64> = out.iter().map(|o| o.v_min).collect();
    let verdict = ArbVerdict::from_values(&v_t, &v_min, tol);
    Ok((out, oracle, verdict))
}

/// Writes `strategy.csv` for path 0 and `strategy.json` for the ensemble.
pub fn run_strategy(exp: &ExperimentConfig) -> Result<StrategyReport, RunError> {
    let dir = &exp.out;
    let (out, oracle, verdict) = evaluate(exp)?;
    let p0 = exp.model.simulate_path(&exp.sim, 0)?;
    let b = build_strategy(exp, &p0)?;
    let v = wealth_selffinancing(&b.strategy, &p0.path)?;
    let mut w = create(dir, "strategy.csv")?;
    write_strategy_csv(&b.strategy, &v, &mut w)?;
    w.flush().map_err(io_err(&dir.join("strategy.csv")))?;
    let times: Vec<Option<f64>> = out.iter().map(|o| o.hit).collect();
    let report = StrategyReport {
        model: exp.model.to_string(),
        strategy: exp.strategy.label(),
        genfn: exp.genfn_id.clone(),
        horizon: exp.sim.horizon,
        dt: exp.sim.dt,
        n_paths: exp.sim.n_paths,
        seed: exp.sim.seed,
        verdict,
        oracle,
        hitting: HitStats::from_times(&times),
    };
    write_json(dir, "strategy.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyStats {
    pub oracle: OracleStats,
    pub hitting: HitStats,
    pub mean_terminal_wealth: f64,
    pub se_terminal_wealth: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub model: String,
    pub strategy: String,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub verdict: ArbVerdict,
    pub stats: VerifyStats,
    pub identities: Vec<IdentityCheck>,
    pub pass: bool,
}

/// Identity suite plus the strategy verdict; writes `verify.json`. The run
/// passes when every identity holds.
pub fn run_verify(exp: &ExperimentConfig) -> Result<VerifyReport, RunError> {
    let (out, oracle, verdict) = evaluate(exp)?;
    let suite = identity_suite(&exp.model, &exp.sim)?;
    let v_t: Vec<f64> = out.iter().map(|o| o.v_t).collect();
    let (mean, se) = mean_se(&v_t);
    let times: Vec<Option<f64>> = out.iter().map(|o| o.hit).collect();
    let report = VerifyReport {
        model: exp.model.to_string(),
        strategy: exp.strategy.label(),
        horizon: exp.sim.horizon,
        dt: exp.sim.dt,
        n_paths: exp.sim.n_paths,
        seed: exp.sim.seed,
        verdict,
        stats: VerifyStats {
            oracle,
            hitting: HitStats::from_times(&times),
            mean_terminal_wealth: mean,
            se_terminal_wealth: se,
        },
        identities: suite.checks,
        pass: suite.pass,
    };
    write_json(&exp.out, "verify.json", &report)?;
    Ok(report)
}

/// Reads a capitalization file; writes `gammaH.csv` and `ingest.json`.
pub fn run_ingest(file: &Path, out: &Path) -> Result<GammaSummary, RunError> {
    let caps = read_caps(file)?;
    let (g, summary) = empirical_gamma_h(&caps)?;
    let mut w = create(out, "gammaH.csv")?;
    g.write_csv(&mut w, "gammaH").map_err(IngestError::from)?;
    w.flush().map_err(io_err(&out.join("gammaH.csv")))?;
    write_json(out, "ingest.json", &summary)?;
    Ok(summary)
}
