//! Closed-form solutions used as exact oracles.

use std::f64::consts::PI;

const THIRD: f64 = 1.0 / 3.0;

/// Solution of the expanding-circle system from a general start `v0` on the
/// hyperplane, driven by `W(t) = w`.
pub fn expanding_circle_general(v0: &[f64; 3], t: f64, w: f64) -> [f64; 3] {
    let (c, s) = (w.cos(), w.sin());
    let r3 = 3f64.sqrt();
    let plus = -c + r3 * s;
    let minus = -c - r3 * s;
    let e = (t / 2.0).exp() / 3.0;
    [
        THIRD + e * (2.0 * v0[0] * c + v0[1] * plus + v0[2] * minus),
        THIRD + e * (v0[0] * minus + 2.0 * v0[1] * c + v0[2] * plus),
        THIRD + e * (v0[0] * plus + v0[1] * minus + 2.0 * v0[2] * c),
    ]
}

/// `vᵢ(t) = 1/3 + δ e^{t/2} cos(W + 2π(u + (i−1)/3))`.
pub fn expanding_circle_trig(delta: f64, u: f64, t: f64, w: f64) -> [f64; 3] {
    let e = delta * (t / 2.0).exp();
    let mut v = [0.0; 3];
    for (i, vi) in v.iter_mut().enumerate() {
        *vi = THIRD + e * (w + 2.0 * PI * (u + i as f64 / 3.0)).cos();
    }
    v
}

/// `(δ, u)` such that the trigonometric start reproduces `v0`.
pub fn trig_parameters(v0: &[f64; 3]) -> (f64, f64) {
    let y1 = v0[0] - THIRD;
    let r: f64 = v0.iter().map(|&x| (x - THIRD) * (x - THIRD)).sum();
    let delta = (2.0 * r / 3.0).sqrt();
    if delta == 0.0 {
        return (0.0, 0.0);
    }
    // v₂ − v₃ = −√3 δ sin θ with θ = 2πu
    let sin_t = -(v0[1] - v0[2]) / (3f64.sqrt() * delta);
    let cos_t = y1 / delta;
    let theta = sin_t.atan2(cos_t);
    (delta, theta / (2.0 * PI))
}

/// Weights of the stationary circle, `1/3 + δ cos(W + 2π(i−1)/3)`.
pub fn stationary_circle(delta: f64, w: f64) -> [f64; 3] {
    let mut v = [0.0; 3];
    for (i, vi) in v.iter_mut().enumerate() {
        *vi = THIRD + delta * (w + 2.0 * PI * i as f64 / 3.0).cos();
    }
    v
}

/// Spiral weights from the driver pair: `1/3 + Φ e^{t/2} cos(W + 2π(i−1)/3)`.
pub fn spiral(phi: f64, t: f64, w: f64) -> [f64; 3] {
    expanding_circle_trig(phi, 0.0, t, w)
}

/// Folds `y` into `[a, b]` by reflection at both ends.
pub fn fold(y: f64, a: f64, b: f64) -> f64 {
    let len = b - a;
    let mut m = (y - a).rem_euclid(2.0 * len);
    if m > len {
        m = 2.0 * len - m;
    }
    a + m
}
