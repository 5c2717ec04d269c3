//! Closed-form eigen-decomposition of symmetric 3×3 matrices.
//!
//! The trigonometric solution of the characteristic cubic locates the most
//! isolated eigenvalue; its vector is a cross product of two rows of
//! `A − λI`. The remaining pair is resolved by a Jacobi rotation in the
//! orthogonal complement, and all three values are then read off as Rayleigh
//! quotients. The cubic alone loses about half the digits near a repeated
//! root.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("matrix is not symmetric (|m[{i}][{j}] - m[{j}][{i}]| = {gap})")]
    NotSymmetric { i: usize, j: usize, gap: f64 },
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// Symmetry tolerance on off-diagonal pairs.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues (ascending) and unit eigenvectors; `vectors[k]` belongs to
/// `values[k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen3 {
    pub values: [f64; 3],
    pub vectors: [[f64; 3]; 3],
}

impl SymEigen3 {
    /// `V Λ Vᵀ`, row-major.
    pub fn reconstruct(&self) -> [f64; 9] {
        let mut m = [0.0; 9];
        for k in 0..3 {
            let v = &self.vectors[k];
            for i in 0..3 {
                for j in 0..3 {
                    m[i * 3 + j] += self.values[k] * v[i] * v[j];
                }
            }
        }
        m
    }
}

fn check(m: &[f64; 9]) -> Result<(), EigenError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EigenError::NonFinite);
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let gap = (m[i * 3 + j] - m[j * 3 + i]).abs();
        if gap > SYMMETRY_TOL {
            return Err(EigenError::NotSymmetric { i, j, gap });
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric 3×3 matrix (row-major), ascending.
pub fn eigen_sym3(m: &[f64; 9]) -> Result<[f64; 3], EigenError> {
    Ok(eigen_sym3_vectors(m)?.values)
}

fn cubic_roots(m: &[f64; 9]) -> [f64; 3] {
    let (a00, a11, a22) = (m[0], m[4], m[8]);
    let a01 = 0.5 * (m[1] + m[3]);
    let a02 = 0.5 * (m[2] + m[6]);
    let a12 = 0.5 * (m[5] + m[7]);
    let p1 = a01 * a01 + a02 * a02 + a12 * a12;
    let mut ev = if p1 == 0.0 {
        [a00, a11, a22]
    } else {
        let q = (a00 + a11 + a22) / 3.0;
        let (b00, b11, b22) = (a00 - q, a11 - q, a22 - q);
        let p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        // det((A − qI)/p) / 2
        let det = b00 * (b11 * b22 - a12 * a12) - a01 * (a01 * b22 - a12 * a02)
            + a02 * (a01 * a12 - b11 * a02);
        let r = (det / (2.0 * p * p * p)).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let hi = q + 2.0 * p * phi.cos();
        let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [lo, 3.0 * q - hi - lo, hi]
    };
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalized(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot(&a, &a).sqrt();
    if n > 0.0 && n.is_finite() {
        Some([a[0] / n, a[1] / n, a[2] / n])
    } else {
        None
    }
}

fn mat_vec(m: &[f64; 9], v: &[f64; 3]) -> [f64; 3] {
    [
        m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
        m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
        m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
    ]
}

/// Eigenvalues and eigenvectors of a symmetric 3×3 matrix.
pub fn eigen_sym3_vectors(m: &[f64; 9]) -> Result<SymEigen3, EigenError> {
    check(m)?;
    let mut s = *m;
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let v = 0.5 * (s[i * 3 + j] + s[j * 3 + i]);
        s[i * 3 + j] = v;
        s[j * 3 + i] = v;
    }
    let values = cubic_roots(&s);
    let isolated = if values[1] - values[0] >= values[2] - values[1] {
        0
    } else {
        2
    };
    let lam = values[isolated];
    let rows = [
        [s[0] - lam, s[1], s[2]],
        [s[3], s[4] - lam, s[5]],
        [s[6], s[7], s[8] - lam],
    ];
    let cands = [
        cross(&rows[0], &rows[1]),
        cross(&rows[0], &rows[2]),
        cross(&rows[1], &rows[2]),
    ];
    let best = cands
        .iter()
        .copied()
        .max_by(|a, b| dot(a, a).total_cmp(&dot(b, b)))
        .unwrap_or([1.0, 0.0, 0.0]);
    let v_iso = match normalized(best) {
        Some(v) => v,
        // A − λI vanishes: the matrix is a multiple of the identity.
        None => {
            return Ok(SymEigen3 {
                values: [lam; 3],
                vectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            })
        }
    };
    // Orthonormal basis (u, w) of the complement of v_iso.
    let axis = (0..3)
        .min_by(|&a, &b| v_iso[a].abs().total_cmp(&v_iso[b].abs()))
        .unwrap_or(0);
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let u = normalized(cross(&e, &v_iso)).unwrap_or([0.0, 1.0, 0.0]);
    let w = cross(&v_iso, &u);
    let su = mat_vec(&s, &u);
    let sw = mat_vec(&s, &w);
    let (a, b, c) = (dot(&u, &su), dot(&u, &sw), dot(&w, &sw));
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (sn, cs) = theta.sin_cos();
    let e1 = [
        cs * u[0] + sn * w[0],
        cs * u[1] + sn * w[1],
        cs * u[2] + sn * w[2],
    ];
    let e2 = [
        -sn * u[0] + cs * w[0],
        -sn * u[1] + cs * w[1],
        -sn * u[2] + cs * w[2],
    ];
    let r1 = dot(&e1, &mat_vec(&s, &e1));
    let r2 = dot(&e2, &mat_vec(&s, &e2));
    let r_iso = dot(&v_iso, &mat_vec(&s, &v_iso));
    let mut pairs = [(r_iso, v_iso), (r1, e1), (r2, e2)];
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(SymEigen3 {
        values: [pairs[0].0, pairs[1].0, pairs[2].0],
        vectors: [pairs[0].1, pairs[1].1, pairs[2].1],
    })
}

/// Eigenvalues of a symmetric 2×2 matrix `[[a, b], [b, c]]`, ascending.
pub fn eigen_sym2(a: f64, b: f64, c: f64) -> [f64; 2] {
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    [mean - rad, mean + rad]
}
