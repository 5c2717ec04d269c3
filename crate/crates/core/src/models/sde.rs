//! One-step schemes for simplex-valued SDEs with absorption.

use super::{ModelError, Scheme};
use crate::rng::GaussianStream;
use crate::simplex::TimeGrid;

/// `dx = a(t, x) dt + B(t, x) dW` with `B` of shape `d × m`, row-major.
pub trait SdeSystem: Sync {
    fn dim(&self) -> usize;
    fn n_drivers(&self) -> usize;
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ModelError>;
}

/// Raw outcome of an integration on a grid.
#[derive(Debug, Clone)]
pub struct SdeRun {
    pub data: Vec<f64>,
    pub stop_index: Option<usize>,
    pub hit_time: Option<f64>,
    /// `B Bᵀ` times the step length actually travelled, per step.
    pub cov: Vec<f64>,
}

/// Tolerance for the zero-sum structure of drift and diffusion columns.
const ROW_SUM_TOL: f64 = 1e-12;

fn check_zero_sum(
    a: &[f64],
    b: &[f64],
    d: usize,
    m: usize,
    step: usize,
) -> Result<(), ModelError> {
    let scale = 1.0 + a.iter().chain(b).fold(0.0f64, |s, v| s.max(v.abs()));
    let sa: f64 = a.iter().sum();
    if sa.abs() > ROW_SUM_TOL * scale {
        return Err(ModelError::SpecViolation {
            step,
            what: format!("drift sums to {sa}"),
        });
    }
    for j in 0..m {
        let sb: f64 = (0..d).map(|i| b[i * m + j]).sum();
        if sb.abs() > ROW_SUM_TOL * scale {
            return Err(ModelError::SpecViolation {
                step,
                what: format!("diffusion column {j} sums to {sb}"),
            });
        }
    }
    Ok(())
}

/// Directional derivative `(∂B/∂x)·B` for a single driver, by central
/// differences with a displacement of about 1e-6 kept well inside the simplex.
fn milstein_correction<S: SdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    x: &[f64],
    b: &[f64],
    out: &mut [f64],
    scratch: &mut [f64],
) -> Result<(), ModelError> {
    let d = x.len();
    let bmax = b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if bmax == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return Ok(());
    }
    let xmin = x.iter().fold(f64::INFINITY, |s, &v| s.min(v));
    let disp = 1e-6f64.min(0.5 * xmin);
    let h = disp / bmax;
    let (xp, rest) = scratch.split_at_mut(d);
    let (bp, rest) = rest.split_at_mut(d);
    let bm = &mut rest[..d];
    for i in 0..d {
        xp[i] = x[i] + h * b[i];
    }
    sys.diffusion(t, xp, bp)?;
    for i in 0..d {
        xp[i] = x[i] - h * b[i];
    }
    sys.diffusion(t, xp, bm)?;
    for i in 0..d {
        out[i] = (bp[i] - bm[i]) / (2.0 * h);
    }
    Ok(())
}

/// Absorbs a step that ends with some weight `≤ eps`: returns the fraction
/// `θ ∈ [0, 1]` of the step travelled and overwrites `new` with the crossing
/// point.
pub(crate) fn absorb(old: &[f64], new: &mut [f64], eps: f64) -> Option<f64> {
    let mut theta = f64::INFINITY;
    let mut hit = None;
    for i in 0..old.len() {
        if new[i] <= eps {
            let denom = old[i] - new[i];
            let th = if denom > 0.0 {
                ((old[i] - eps) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            if th < theta {
                theta = th;
                hit = Some(i);
            }
        }
    }
    let i_hit = hit?;
    for i in 0..old.len() {
        let v = old[i] + theta * (new[i] - old[i]);
        new[i] = v.max(0.0);
    }
    new[i_hit] = eps;
    Some(theta)
}

/// Moves the floating-point residual of `Σx = 1` into the largest
/// coordinate. The fields have zero column sums, so the residual is pure
/// rounding; left alone it random-walks past the simplex tolerance on long
/// paths with large coefficients.
pub(crate) fn remove_roundoff(x: &mut [f64]) {
    let s: f64 = x.iter().sum();
    if s != 1.0 {
        let (imax, _) = x
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        x[imax] -= s - 1.0;
    }
}

/// Adaptive Brownian-bridge subdivision near the boundary.
///
/// A step (or sub-step) is bisected while its typical move
/// `max|B|·max(|ΔW|, √h)` exceeds `ratio · min x`, down to `max_depth`
/// halvings. Bridge midpoints are drawn from an auxiliary stream keyed by
/// `(seed, path, step)`, so refined paths stay reproducible and agree with
/// the unrefined ones wherever no refinement is triggered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub seed: u64,
    pub path: u64,
    pub ratio: f64,
    pub max_depth: u32,
}

impl Refinement {
    pub fn new(seed: u64, path: u64) -> Self {
        Refinement {
            seed,
            path,
            ratio: 0.2,
            max_depth: 4,
        }
    }

    fn stream(&self, step: usize) -> GaussianStream {
        let key = self.seed ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        GaussianStream::new(key, self.path ^ (1 << 63))
    }
}

struct Work {
    a: Vec<f64>,
    b: Vec<f64>,
    jb: Vec<f64>,
    scratch: Vec<f64>,
    xn: Vec<f64>,
}

/// One scheme step of length `h` from `x` into `w.xn`; returns `θ` if the
/// step was absorbed.
#[allow(clippy::too_many_arguments)]
fn scheme_step<S: SdeSystem + ?Sized>(
    sys: &S,
    scheme: Scheme,
    t: f64,
    x: &[f64],
    h: f64,
    dw: &[f64],
    eps: f64,
    w: &mut Work,
) -> Result<Option<f64>, ModelError> {
    let d = x.len();
    let m = dw.len();
    // diffusion at x is already in w.b
    for i in 0..d {
        let mut v = x[i] + w.a[i] * h;
        for j in 0..m {
            v += w.b[i * m + j] * dw[j];
        }
        w.xn[i] = v;
    }
    if scheme == Scheme::Milstein {
        milstein_correction(sys, t, x, &w.b, &mut w.jb, &mut w.scratch)?;
        let q = 0.5 * (dw[0] * dw[0] - h);
        for i in 0..d {
            w.xn[i] += w.jb[i] * q;
        }
    }
    let theta = absorb(x, &mut w.xn, eps);
    remove_roundoff(&mut w.xn);
    Ok(theta)
}

/// Integrates on `grid` with increments `noise` (`n_steps × m`, step-major).
/// The path is frozen from the first step that reaches a weight `≤ eps`.
pub fn integrate_sde<S: SdeSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    grid: TimeGrid,
    noise: &[f64],
    scheme: Scheme,
    eps: f64,
    refine: Option<Refinement>,
) -> Result<SdeRun, ModelError> {
    let d = sys.dim();
    let m = sys.n_drivers();
    let n = grid.n_steps;
    if x0.len() != d || noise.len() != n * m {
        return Err(ModelError::Shape(format!(
            "x0 has {} entries (want {d}), noise has {} (want {})",
            x0.len(),
            noise.len(),
            n * m
        )));
    }
    if scheme == Scheme::Milstein && m != 1 {
        return Err(ModelError::UnsupportedScheme(
            "the Milstein step is implemented for a single driver".into(),
        ));
    }
    if scheme == Scheme::Exact {
        return Err(ModelError::NoExactSolution);
    }
    let dt = grid.dt;
    let mut data = Vec::with_capacity((n + 1) * d);
    data.extend_from_slice(x0);
    let mut cov = vec![0.0; n * d * d];
    let mut x = x0.to_vec();
    let mut w = Work {
        a: vec![0.0; d],
        b: vec![0.0; d * m],
        jb: vec![0.0; d],
        scratch: vec![0.0; 3 * d],
        xn: vec![0.0; d],
    };
    // pending sub-steps: (start offset, length, increments, depth)
    let mut stack: Vec<(f64, f64, Vec<f64>, u32)> = Vec::new();
    let mut stop_index = None;
    let mut hit_time = None;
    for k in 0..n {
        if stop_index.is_some() {
            data.extend_from_slice(&x);
            continue;
        }
        // analytic covariation: left-point density times the time elapsed in
        // the step, matching the left-point Γ sums
        sys.diffusion(grid.time(k), &x, &mut w.b)?;
        let block = &mut cov[k * d * d..(k + 1) * d * d];
        for i in 0..d {
            for l in 0..d {
                block[i * d + l] = (0..m).map(|j| w.b[i * m + j] * w.b[l * m + j]).sum();
            }
        }
        let mut elapsed = dt;
        let mut bridge: Option<GaussianStream> = None;
        stack.clear();
        stack.push((0.0, dt, noise[k * m..(k + 1) * m].to_vec(), 0));
        while let Some((off, h, dw, depth)) = stack.pop() {
            let t = grid.time(k) + off;
            sys.drift(t, &x, &mut w.a);
            sys.diffusion(t, &x, &mut w.b)?;
            check_zero_sum(&w.a, &w.b, d, m, k)?;
            if let Some(r) = refine.filter(|r| depth < r.max_depth) {
                let xmin = x.iter().fold(f64::INFINITY, |s, &v| s.min(v));
                let speed = w.b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
                let step = dw.iter().fold(h.sqrt(), |s, v| s.max(v.abs()));
                if speed * step > r.ratio * xmin {
                    let z = bridge.get_or_insert_with(|| r.stream(k));
                    let sd = (h / 4.0).sqrt();
                    let first: Vec<f64> = dw.iter().map(|v| 0.5 * v + sd * z.next_normal()).collect();
                    let second: Vec<f64> = dw.iter().zip(&first).map(|(v, f)| v - f).collect();
                    stack.push((off + 0.5 * h, 0.5 * h, second, depth + 1));
                    stack.push((off, 0.5 * h, first, depth + 1));
                    continue;
                }
            }
            if let Some(theta) = scheme_step(sys, scheme, t, &x, h, &dw, eps, &mut w)? {
                stop_index = Some(k + 1);
                hit_time = Some(t + theta * h);
                elapsed = off + theta * h;
                x.copy_from_slice(&w.xn);
                break;
            }
            x.copy_from_slice(&w.xn);
        }
        block.iter_mut().for_each(|c| *c *= elapsed);
        data.extend_from_slice(&x);
    }
    Ok(SdeRun {
        data,
        stop_index,
        hit_time,
        cov,
    })
}
