//! Catalogue of the market models: parameters, checkable identities and
//! deflator metadata.

use std::fmt::Write;

use crate::models::{ModelError, ModelSpec, MODEL_IDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deflator {
    /// The weights are martingales up to absorption, so `Z ≡ 1` works.
    Trivial,
    /// The weights carry drift that no deflator can absorb.
    None,
}

#[derive(Debug, Clone)]
pub struct ZooEntry {
    pub id: &'static str,
    pub summary: &'static str,
    /// `(name, default, meaning)`.
    pub parameters: &'static [(&'static str, &'static str, &'static str)],
    pub identities: &'static [&'static str],
    pub deflator: Deflator,
    pub deflator_note: &'static str,
}

const ENTRIES: [ZooEntry; 6] = [
    ZooEntry {
        id: "expanding_circle",
        summary: "single-driver weights spiralling out of the node; dv_i = (v_{i+1} - v_{i+2})/sqrt(3) dW",
        parameters: &[
            ("delta", "0.1", "initial distance scale, v_i(0) = 1/3 + delta cos(2 pi (u + (i-1)/3))"),
            ("u", "0.0", "initial phase"),
            ("v0", "-", "explicit start [v1,v2,v3], instead of delta/u"),
        ],
        identities: &[
            "r(v(t)) = r(v(0)) e^t",
            "sum v_i^2 = 1/3 + r(v(0)) e^t on the closed-form path",
            "no exit before T* = log(1/(6 r(v(0))))",
        ],
        deflator: Deflator::Trivial,
        deflator_note: "weights are martingales up to absorption; Z = 1 is a deflator",
    },
    ZooEntry {
        id: "slowed",
        summary: "expanding circle slowed by sqrt(3 r), so that r grows linearly",
        parameters: &[
            ("w0", "[0.5,0.3,0.2]", "start point, not the node"),
            ("eps", "1.5 r(w0)", "floor under 3 r in the diffusion"),
        ],
        identities: &[
            "r(w(t)) = r(w(0)) + t",
            "Gamma^Q(t) = t before stopping",
            "stopping time >= Q(w0) - 1/2",
        ],
        deflator: Deflator::Trivial,
        deflator_note: "weights are martingales up to absorption; Z = 1 is a deflator",
    },
    ZooEntry {
        id: "spiral",
        summary: "two-driver spiral 1/3 + Phi e^{t/2} cos(W + 2 pi (i-1)/3)",
        parameters: &[("delta", "0.01", "amplitude bound, 0 < delta < 1/9")],
        identities: &[
            "sum mu_i^2 = 1/3 + 1.5 Phi^2 e^t",
            "Gamma^Q slope >= r(mu(0))/4 per step",
            "second eigenvalue of alpha > 0",
        ],
        deflator: Deflator::Trivial,
        deflator_note: "weights are martingales up to absorption; Z = 1 is a deflator",
    },
    ZooEntry {
        id: "stationary_circle",
        summary: "weights on a fixed circle, mu_i = 1/3 + delta cos(W + 2 pi (i-1)/3)",
        parameters: &[("delta", "0.1", "circle radius scale, 0 < delta < 1/6")],
        identities: &[
            "sum mu_i^2 = 1/3 + 3 delta^2/2",
            "Q* additive wealth V(t) = 1 + (3 delta^2/(2 Q(mu(0)))) t",
        ],
        deflator: Deflator::None,
        deflator_note: "no deflator exists: the Q* strategy beats the market immediately and surely",
    },
    ZooEntry {
        id: "lyapunov_flow",
        summary: "flow along which a concave G decreases at unit rate, dmu = sigma/sqrt(L) dW",
        parameters: &[
            ("G", "geom_mean", "entropy, quadratic or geom_mean"),
            ("mu0", "[0.5,0.3,0.2]", "start point, not the navel"),
            ("gfrak", "min of G on the boundary", "lower level bound"),
        ],
        identities: &[
            "G(mu(t)) = G(mu(0)) - t",
            "Gamma^G(t) = t",
            "hitting time in [G(mu(0)) - gfrak, G(mu(0))], equal to G(mu(0)) for geom_mean",
        ],
        deflator: Deflator::Trivial,
        deflator_note: "weights are martingales up to absorption; Z = 1 is a deflator",
    },
    ZooEntry {
        id: "reflected2",
        summary: "two assets, first weight a reflected Brownian motion with volatility kappa",
        parameters: &[
            ("mu1_0", "0.5", "initial first weight; barriers at mu1_0/4 and 1 - mu1_0/4"),
            ("kappa", "0.3", "volatility"),
        ],
        identities: &[
            "alpha eigenvalues exactly {0, 1}",
            "first weight stays in the reflection band",
            "<mu_1>(t) = kappa^2 t",
        ],
        deflator: Deflator::None,
        deflator_note: "no deflator exists: the reflection term is singular with respect to <mu_1>",
    },
];

pub fn list() -> Vec<&'static ZooEntry> {
    MODEL_IDS
        .iter()
        .map(|id| ENTRIES.iter().find(|e| e.id == *id).expect("catalogue covers every model"))
        .collect()
}

pub fn entry(id: &str) -> Result<&'static ZooEntry, ModelError> {
    ENTRIES
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| ModelError::UnknownModel(id.to_string()))
}

/// Multi-line description, including the default instance.
pub fn describe(id: &str) -> Result<String, ModelError> {
    let e = entry(id)?;
    let spec = ModelSpec::parse(id)?;
    let mut s = String::new();
    let _ = writeln!(s, "{}: {}", e.id, e.summary);
    let _ = writeln!(s, "default instance: {spec}");
    let _ = writeln!(s, "parameters:");
    for (name, default, meaning) in e.parameters {
        let _ = writeln!(s, "  {name} (default {default}): {meaning}");
    }
    let _ = writeln!(s, "exact identities:");
    for i in e.identities {
        let _ = writeln!(s, "  {i}");
    }
    if let Some(t) = spec.t_star() {
        let _ = writeln!(s, "t_star (default instance): {t}");
    }
    let _ = writeln!(s, "martingale weights: {}", spec.is_martingale());
    let _ = writeln!(s, "closed-form oracle: {}", spec.has_exact());
    let _ = writeln!(s, "deflator: {}", e.deflator_note);
    Ok(s)
}
