//! Generating functions on the simplex: value, gradient and Hessian.
//!
//! Hessians are written row-major into a `d*d` slice. Gradients and Hessians
//! of functions that are singular on the boundary are refused there rather
//! than extended.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::simplex::radial_r_centered;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenFnError {
    #[error("{label}: derivative requested at boundary point (weight {index} = {value})")]
    BoundaryEvaluation {
        label: String,
        index: usize,
        value: f64,
    },
    #[error("point is the navel of {0}: sigma vanishes")]
    AtNavel(String),
    #[error("L = {value} is not positive for {label}")]
    NonpositiveL { label: String, value: f64 },
    #[error("lyapunov_sigma needs d = 3, got {0}")]
    WrongDimension(usize),
    #[error("cannot parse generating function id '{0}'")]
    Parse(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A C² function on (a neighbourhood of) the simplex.
pub trait GeneratingFunction: Send + Sync + fmt::Debug {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), GenFnError>;
    fn hessian_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), GenFnError>;
    fn label(&self) -> String;

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, GenFnError> {
        let mut g = vec![0.0; x.len()];
        self.gradient_into(x, &mut g)?;
        Ok(g)
    }

    fn hessian(&self, x: &[f64]) -> Result<Vec<f64>, GenFnError> {
        let mut h = vec![0.0; x.len() * x.len()];
        self.hessian_into(x, &mut h)?;
        Ok(h)
    }
}

/// The built-in generating functions and their affine modifications.
#[derive(Debug, Clone, PartialEq)]
pub enum GenFn {
    /// `H(x) = −Σ xᵢ log xᵢ`, with `0 log 0 = 0`.
    Entropy,
    /// `Q(x) = 1 − Σ xᵢ²`.
    Quadratic,
    /// `R(x) = (Π xᵢ)^{1/d}`.
    GeomMean,
    /// `F(x) = x₁^q`, `q ≥ 1`.
    Power { q: f64 },
    /// `scale·G + shift`.
    Affine {
        base: Box<GenFn>,
        scale: f64,
        shift: f64,
        mode: AffineMode,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AffineMode {
    /// `G / G(μ₀)`.
    Normalized { g0: f64 },
    /// `(G − h)·3/(ηT)`.
    ShiftScaled { h: f64, eta: f64, horizon: f64 },
}

fn refuse_boundary(label: &str, x: &[f64]) -> Result<(), GenFnError> {
    match x.iter().position(|&v| !(v > 0.0)) {
        Some(index) => Err(GenFnError::BoundaryEvaluation {
            label: label.to_string(),
            index,
            value: x[index],
        }),
        None => Ok(()),
    }
}

impl GenFn {
    pub fn power(q: f64) -> Result<GenFn, GenFnError> {
        if !(q >= 1.0) || !q.is_finite() {
            return Err(GenFnError::InvalidParameter(format!(
                "power exponent must be >= 1, got {q}"
            )));
        }
        Ok(GenFn::Power { q })
    }

    /// `G / G(μ₀)`.
    pub fn normalized(self, mu0: &[f64]) -> Result<GenFn, GenFnError> {
        let g0 = self.value(mu0);
        if !(g0 > 0.0) {
            return Err(GenFnError::InvalidParameter(format!(
                "cannot normalize by G(mu0) = {g0}"
            )));
        }
        Ok(GenFn::Affine {
            base: Box::new(self),
            scale: 1.0 / g0,
            shift: 0.0,
            mode: AffineMode::Normalized { g0 },
        })
    }

    /// `(G − h)·3/(ηT)`.
    pub fn shift_scaled(self, h: f64, eta: f64, horizon: f64) -> Result<GenFn, GenFnError> {
        if !(eta > 0.0) || !(horizon > 0.0) {
            return Err(GenFnError::InvalidParameter(format!(
                "shift_scale needs eta > 0 and T > 0 (eta = {eta}, T = {horizon})"
            )));
        }
        let scale = 3.0 / (eta * horizon);
        Ok(GenFn::Affine {
            base: Box::new(self),
            scale,
            shift: -h * scale,
            mode: AffineMode::ShiftScaled { h, eta, horizon },
        })
    }

    /// The underlying builtin with all affine layers removed.
    pub fn base(&self) -> &GenFn {
        match self {
            GenFn::Affine { base, .. } => base.base(),
            other => other,
        }
    }

    pub fn is_concave(&self) -> bool {
        match self {
            GenFn::Entropy | GenFn::Quadratic | GenFn::GeomMean => true,
            GenFn::Power { q } => *q == 1.0,
            GenFn::Affine { base, scale, .. } => {
                if *scale >= 0.0 {
                    base.is_concave()
                } else {
                    matches!(base.base(), GenFn::Power { .. })
                }
            }
        }
    }

    pub fn into_arc(self) -> Arc<dyn GeneratingFunction> {
        Arc::new(self)
    }

    /// Parses `entropy`, `quadratic`, `geom_mean`, `power:q=<f>`, optionally
    /// followed by `|normalize` and/or `|shift_scale:h=..,eta=..,T=..`.
    /// `normalize` needs the initial point, supplied by the caller.
    pub fn parse(id: &str, mu0: Option<&[f64]>) -> Result<GenFn, GenFnError> {
        let mut parts = id.split('|').map(str::trim);
        let head = parts.next().unwrap_or("");
        let mut g = parse_builtin(head)?;
        for modifier in parts {
            let (name, params) = split_params(modifier);
            match name {
                "normalize" => {
                    let mu0 = mu0.ok_or_else(|| {
                        GenFnError::InvalidParameter("normalize needs an initial point".into())
                    })?;
                    g = g.normalized(mu0)?;
                }
                "shift_scale" => {
                    let h = param(&params, "h", modifier)?;
                    let eta = param(&params, "eta", modifier)?;
                    let t = param(&params, "T", modifier)?;
                    g = g.shift_scaled(h, eta, t)?;
                }
                _ => return Err(GenFnError::Parse(id.to_string())),
            }
        }
        Ok(g)
    }
}

fn split_params(s: &str) -> (&str, Vec<(String, String)>) {
    match s.split_once(':') {
        None => (s, Vec::new()),
        Some((name, rest)) => {
            let params = rest
                .split(',')
                .filter_map(|kv| kv.split_once('='))
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .collect();
            (name.trim(), params)
        }
    }
}

fn param(params: &[(String, String)], key: &str, ctx: &str) -> Result<f64, GenFnError> {
    params
        .iter()
        .find(|(k, _)| k == key)
        .and_then(|(_, v)| v.parse::<f64>().ok())
        .ok_or_else(|| GenFnError::Parse(format!("{ctx}: missing or invalid '{key}'")))
}

fn parse_builtin(s: &str) -> Result<GenFn, GenFnError> {
    let (name, params) = split_params(s);
    match name {
        "entropy" => Ok(GenFn::Entropy),
        "quadratic" => Ok(GenFn::Quadratic),
        "geom_mean" => Ok(GenFn::GeomMean),
        "power" => GenFn::power(param(&params, "q", s)?),
        _ => Err(GenFnError::Parse(s.to_string())),
    }
}

impl GeneratingFunction for GenFn {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            GenFn::Entropy => -x
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| v * v.ln())
                .sum::<f64>(),
            GenFn::Quadratic => 1.0 - x.iter().map(|v| v * v).sum::<f64>(),
            GenFn::GeomMean => {
                if x.iter().any(|&v| v <= 0.0) {
                    0.0
                } else {
                    let d = x.len() as f64;
                    (x.iter().map(|v| v.ln()).sum::<f64>() / d).exp()
                }
            }
            GenFn::Power { q } => x[0].max(0.0).powf(*q),
            GenFn::Affine {
                base, scale, shift, ..
            } => scale * base.value(x) + shift,
        }
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), GenFnError> {
        match self {
            GenFn::Entropy => {
                refuse_boundary("entropy", x)?;
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = -v.ln() - 1.0;
                }
            }
            GenFn::Quadratic => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = -2.0 * v;
                }
            }
            GenFn::GeomMean => {
                refuse_boundary("geom_mean", x)?;
                let d = x.len() as f64;
                let r = self.value(x);
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = r / (d * v);
                }
            }
            GenFn::Power { q } => {
                refuse_boundary("power", &x[..1])?;
                out.iter_mut().for_each(|o| *o = 0.0);
                out[0] = q * x[0].powf(q - 1.0);
            }
            GenFn::Affine { base, scale, .. } => {
                base.gradient_into(x, out)?;
                out.iter_mut().for_each(|o| *o *= scale);
            }
        }
        Ok(())
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), GenFnError> {
        let d = x.len();
        match self {
            GenFn::Entropy => {
                refuse_boundary("entropy", x)?;
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..d {
                    out[i * d + i] = -1.0 / x[i];
                }
            }
            GenFn::Quadratic => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..d {
                    out[i * d + i] = -2.0;
                }
            }
            GenFn::GeomMean => {
                refuse_boundary("geom_mean", x)?;
                let df = d as f64;
                let r = self.value(x);
                for i in 0..d {
                    for j in 0..d {
                        let mut v = r / (df * df * x[i] * x[j]);
                        if i == j {
                            v -= r / (df * x[i] * x[i]);
                        }
                        out[i * d + j] = v;
                    }
                }
            }
            GenFn::Power { q } => {
                refuse_boundary("power", &x[..1])?;
                out.iter_mut().for_each(|o| *o = 0.0);
                out[0] = q * (q - 1.0) * x[0].powf(q - 2.0);
            }
            GenFn::Affine { base, scale, .. } => {
                base.hessian_into(x, out)?;
                out.iter_mut().for_each(|o| *o *= scale);
            }
        }
        Ok(())
    }

    fn label(&self) -> String {
        match self {
            GenFn::Entropy => "entropy".into(),
            GenFn::Quadratic => "quadratic".into(),
            GenFn::GeomMean => "geom_mean".into(),
            GenFn::Power { q } => format!("power:q={q}"),
            GenFn::Affine { base, mode, .. } => match mode {
                AffineMode::Normalized { .. } => format!("{}|normalize", base.label()),
                AffineMode::ShiftScaled { h, eta, horizon } => {
                    format!("{}|shift_scale:h={h},eta={eta},T={horizon}", base.label())
                }
            },
        }
    }
}

/// Coefficients of the Lyapunov flow: `σ` from cyclic gradient differences
/// and `L = −½ σᵀ D²G σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovCoeffs {
    pub sigma: [f64; 3],
    pub l: f64,
}

/// Navel test threshold on ‖σ‖.
pub const NAVEL_TOL: f64 = 1e-10;

pub fn lyapunov_sigma(
    g: &dyn GeneratingFunction,
    x: &[f64],
) -> Result<LyapunovCoeffs, GenFnError> {
    if x.len() != 3 {
        return Err(GenFnError::WrongDimension(x.len()));
    }
    let mut dg = [0.0; 3];
    let mut h = [0.0; 9];
    g.gradient_into(x, &mut dg)?;
    g.hessian_into(x, &mut h)?;
    let sigma = [dg[2] - dg[1], dg[0] - dg[2], dg[1] - dg[0]];
    let norm = sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
    if norm < NAVEL_TOL {
        return Err(GenFnError::AtNavel(g.label()));
    }
    let l = -0.5 * quad_form3(&h, &sigma);
    if !(l > 0.0) {
        return Err(GenFnError::NonpositiveL {
            label: g.label(),
            value: l,
        });
    }
    Ok(LyapunovCoeffs { sigma, l })
}

#[inline]
pub(crate) fn quad_form3(h: &[f64], v: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += v[i] * h[i * 3 + j] * v[j];
        }
    }
    s
}

/// Closed form of `L` for the entropy flow:
/// `Σᵢ (1/(2xᵢ)) (log(x_{i+1}/x_{i−1}))²`, indices cyclic.
pub fn entropy_l_closed(x: &[f64; 3]) -> f64 {
    (0..3)
        .map(|i| {
            let next = x[(i + 1) % 3];
            let prev = x[(i + 2) % 3];
            let lg = (next / prev).ln();
            lg * lg / (2.0 * x[i])
        })
        .sum()
}

/// Rescaled direction for the geometric-mean flow,
/// `σ̃ᵢ = 1/x_{i−1} − 1/x_{i+1}`; equals `(3/R)·σ`.
pub fn geom_mean_sigma_tilde(x: &[f64; 3]) -> [f64; 3] {
    let mut s = [0.0; 3];
    for (i, si) in s.iter_mut().enumerate() {
        *si = 1.0 / x[(i + 2) % 3] - 1.0 / x[(i + 1) % 3];
    }
    s
}

/// `r(x) / (2 R(x)⁵)`: the value of `−½ σ̃ᵀ D²R σ̃`.
pub fn geom_mean_l_star_closed(x: &[f64; 3]) -> f64 {
    let r = GenFn::GeomMean.value(x);
    radial_r_centered(x) / (2.0 * r.powi(5))
}

/// `sup` of `G` over the boundary of the 3-simplex and `max` over the simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelRange {
    pub gfrak: f64,
    pub max: f64,
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    let (fa0, fb0) = (f(a), f(b));
    let mut best = (x, fx);
    for cand in [(a, fa0), (b, fb0), (c, fc), (d, fd)] {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    best
}

/// Numerical level range for a concave `G` on the 3-simplex, by golden-section
/// search along each edge and nested search over the face.
pub fn level_range(g: &dyn GeneratingFunction) -> LevelRange {
    let mut gfrak = f64::NEG_INFINITY;
    for k in 0..3 {
        let edge = |s: f64| {
            let mut x = [0.0; 3];
            x[(k + 1) % 3] = s;
            x[(k + 2) % 3] = 1.0 - s;
            g.value(&x)
        };
        gfrak = gfrak.max(golden_max(edge, 0.0, 1.0).1);
    }
    let inner = |x1: f64| {
        golden_max(
            |x2: f64| g.value(&[x1, x2, (1.0 - x1 - x2).max(0.0)]),
            0.0,
            1.0 - x1,
        )
        .1
    };
    let max = golden_max(inner, 0.0, 1.0).1;
    LevelRange { gfrak, max }
}
