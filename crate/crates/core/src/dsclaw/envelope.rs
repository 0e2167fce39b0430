//! Deterministic error envelopes of the local laws.

use super::{EdgeData, ModelParams};
use num_complex::Complex64;

/// Distance from an energy to the nearest refined edge.
pub fn kappa_e(e: f64, edges: &EdgeData) -> f64 {
    (e - edges.l_plus).abs().min((e - edges.l_minus).abs())
}

/// Averaged local law envelope at z:
/// min{ q^-3/2 + N^-1/4 q^-1/2, 1/(q^2 sqrt(kappa_E + eta)) } + 1/(N eta).
pub fn local_law_envelope(z: Complex64, params: &ModelParams, edges: &EdgeData) -> f64 {
    let n = params.n as f64;
    let q = params.q;
    let eta = z.im;
    let kappa = kappa_e(z.re, edges);
    let flat = q.powf(-1.5) + n.powf(-0.25) / q.sqrt();
    let edgewise = 1.0 / (q * q * (kappa + eta).sqrt());
    flat.min(edgewise) + 1.0 / (n * eta)
}

/// Entrywise local law envelope: 1/q + sqrt(Im<M>/(N eta)) + 1/(N eta).
pub fn entrywise_envelope(z: Complex64, params: &ModelParams, im_m_tilde: f64) -> f64 {
    let n = params.n as f64;
    let eta = z.im;
    1.0 / params.q + (im_m_tilde.max(0.0) / (n * eta)).sqrt() + 1.0 / (n * eta)
}

/// Control parameter Psi_b = q^-b + N^-1/4 q^-1/2 + sqrt((Im<M> + vartheta)/(N eta)).
/// Nonincreasing in b for q >= 1.
pub fn psi_b(z: Complex64, b: f64, params: &ModelParams, im_m: f64, vartheta: f64) -> f64 {
    debug_assert!(b >= 1.0, "psi_b expects b >= 1, got {b}");
    let n = params.n as f64;
    let eta = z.im;
    params.q.powf(-b) + n.powf(-0.25) / params.q.sqrt() + ((im_m.max(0.0) + vartheta) / (n * eta)).sqrt()
}
