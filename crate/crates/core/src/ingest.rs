//! Capitalization CSV input and the empirical cumulative excess growth
//! curve.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::quadvar::{gamma_h_weighted, slope_monotone_check, GammaPath, QuadVarError};
use crate::simplex::{weights_from_caps, CapPath, SimplexError, TimeGrid, WeightPath};

/// Allowed deviation of a time step from the first step, relative to it.
pub const GRID_REL_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    /// Rows are numbered as file lines, the header being line 1.
    #[error("parse error at row {row}: {msg}")]
    ParseError { row: usize, msg: String },
    #[error("capitalization must be strictly positive (row {row}, column {col})")]
    NonpositiveCap { row: usize, col: usize },
    #[error("non-uniform time grid starting at row {row}")]
    NonuniformGrid { row: usize },
    #[error("weight {value} of asset {asset} at row {row} is not strictly positive")]
    NonpositiveWeight { row: usize, asset: usize, value: f64 },
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error(transparent)]
    QuadVar(#[from] QuadVarError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Reads a `t,S1,...,Sd` file.
pub fn read_caps(path: impl AsRef<Path>) -> Result<CapPath, IngestError> {
    read_caps_from(File::open(path)?)
}

pub fn read_caps_from<R: Read>(r: R) -> Result<CapPath, IngestError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rd.headers().map_err(|e| IngestError::ParseError { row: 1, msg: e.to_string() })?;
    if header.len() < 3 || header.get(0) != Some("t") {
        return Err(IngestError::ParseError {
            row: 1,
            msg: format!("expected header t,S1,...,Sd with d >= 2, got {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let d = header.len() - 1;
    let mut times = Vec::new();
    let mut caps = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| IngestError::ParseError { row, msg: e.to_string() })?;
        if rec.len() != d + 1 {
            return Err(IngestError::ParseError {
                row,
                msg: format!("expected {} fields, got {}", d + 1, rec.len()),
            });
        }
        let mut vals = rec.iter().map(|f| {
            f.parse::<f64>()
                .map_err(|e| IngestError::ParseError { row, msg: format!("{f:?}: {e}") })
        });
        let t = vals.next().expect("nonempty record")?;
        if !t.is_finite() {
            return Err(IngestError::ParseError { row, msg: format!("time {t} is not finite") });
        }
        times.push(t);
        for (col, v) in vals.enumerate() {
            let v = v?;
            if !(v > 0.0) || !v.is_finite() {
                return Err(IngestError::NonpositiveCap { row, col: col + 1 });
            }
            caps.push(v);
        }
    }
    if times.len() < 2 {
        return Err(IngestError::ParseError {
            row: times.len() + 2,
            msg: "need at least two rows".into(),
        });
    }
    let n = times.len() - 1;
    let first = times[1] - times[0];
    for k in 0..n {
        let step = times[k + 1] - times[k];
        if !(first > 0.0) || (step - first).abs() > GRID_REL_TOL * first {
            return Err(IngestError::NonuniformGrid { row: k + 3 });
        }
    }
    let dt = (times[n] - times[0]) / n as f64;
    Ok(CapPath::new(TimeGrid::new(times[0], dt, n)?, d, caps)?)
}

/// `Sᵢ = μᵢ`, so that the total capitalization is 1.
pub fn caps_from_weights(path: &WeightPath) -> Result<CapPath, IngestError> {
    let data: Vec<f64> = path.points().flatten().copied().collect();
    Ok(CapPath::new(*path.grid(), path.dim(), data)?)
}

pub fn write_caps_csv<W: Write>(c: &CapPath, w: W) -> Result<(), IngestError> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=c.dim()).map(|i| format!("S{i}")));
    wr.write_record(&header)?;
    for k in 0..c.grid().len() {
        let mut rec = vec![c.grid().time(k).to_string()];
        rec.extend(c.row(k).iter().map(|v| v.to_string()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeCheck {
    pub eta: f64,
    pub holds: bool,
    pub first_violation: Option<usize>,
    pub max_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaSummary {
    pub total: f64,
    pub eta_hat: f64,
    /// Slope check at `0.9·η̂`.
    pub slope_check: SlopeCheck,
}

/// Empirical `Γᴴ` of the weights implied by `caps`, with `η̂ = Γᴴ(T)/T`.
pub fn empirical_gamma_h(caps: &CapPath) -> Result<(GammaPath, GammaSummary), IngestError> {
    let w = weights_from_caps(caps)?;
    for (k, x) in w.points().enumerate() {
        if let Some(asset) = x.iter().position(|&v| !(v > 0.0)) {
            return Err(IngestError::NonpositiveWeight { row: k + 2, asset, value: x[asset] });
        }
    }
    let g = gamma_h_weighted(&w)?;
    let span = caps.grid().end() - caps.grid().t0;
    let total = g.last();
    let eta_hat = total / span;
    let eta = 0.9 * eta_hat;
    let v = slope_monotone_check(&g, eta, caps.grid().end());
    Ok((
        g,
        GammaSummary {
            total,
            eta_hat,
            slope_check: SlopeCheck {
                eta,
                holds: v.holds,
                first_violation: v.first_violation,
                max_violation: v.max_violation,
            },
        },
    ))
}
