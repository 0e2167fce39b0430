//! Self-consistent Stieltjes-transform laws for deformed sparse matrices:
//! the deformed semicircle law, its sparsity-refined version, the sparse
//! quartic law, spectral edges, classical locations, and error envelopes.

mod edge;
mod envelope;
mod solve;

pub use edge::{
    classical_locations, density_profile, edge_expansion, edge_expansion_for, find_edges,
    find_edges_with, invert_density, DensityOptions, LawCdf,
};
pub use envelope::{entrywise_envelope, kappa_e, local_law_envelope, psi_b};
pub use solve::{
    m_semicircle, solve_mfc, solve_refined, sparse_quartic, subordination_check, vector_m,
    DeformedLaw, RefinedLaw, StieltjesLaw,
};

use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Default stability cushion: laws are treated as single-interval with
/// square-root edges when the margin exceeds 1 + DEFAULT_VARPI.
pub const DEFAULT_VARPI: f64 = 0.05;

/// Model quadruple (lambda, q, s, N) plus the spectral-domain parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Coupling constant of the diagonal deformation.
    pub lambda: f64,
    /// Sparsity parameter, q = sqrt(N p).
    pub q: f64,
    /// Normalized fourth cumulant of the matrix entries.
    pub s: f64,
    /// Matrix size.
    pub n: usize,
    /// Half-width of the spectral domain; must exceed 3 + lambda.
    pub e0: f64,
    /// Domain exponent: eta ranges over [N^(tau-1), 1/tau].
    pub tau: f64,
}

impl ModelParams {
    /// Construct with the default spectral domain (e0 = 3.5 + lambda,
    /// tau = 0.1) and validate all invariants.
    pub fn new(lambda: f64, q: f64, s: f64, n: usize) -> Result<Self> {
        Self::with_domain(lambda, q, s, n, 3.5 + lambda, 0.1)
    }

    pub fn with_domain(lambda: f64, q: f64, s: f64, n: usize, e0: f64, tau: f64) -> Result<Self> {
        let p = ModelParams {
            lambda,
            q,
            s,
            n,
            e0,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ModelParams {
            lambda,
            q,
            s,
            n,
            e0,
            tau,
        } = *self;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(q >= 1.0) || !q.is_finite() {
            return Err(Error::Config(format!("q must be >= 1, got {q}")));
        }
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::Config(format!("s must be >= 0, got {s}")));
        }
        if n == 0 {
            return Err(Error::Config("N must be >= 1".into()));
        }
        if !(e0 > 3.0 + lambda) {
            return Err(Error::Config(format!(
                "domain half-width e0 = {e0} must exceed 3 + lambda = {}",
                3.0 + lambda
            )));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
        }
        let nf = n as f64;
        if q > nf.sqrt() * (1.0 + 1e-12) {
            return Err(Error::Config(format!("q = {q} exceeds sqrt(N) = {}", nf.sqrt())));
        }
        if nf.powf(tau) >= q.powf(20.0 / 9.0) {
            return Err(Error::Config(format!(
                "N^tau = {} must stay below q^(20/9) = {}",
                nf.powf(tau),
                q.powf(20.0 / 9.0)
            )));
        }
        Ok(())
    }

    /// Lower edge of the admissible eta range, N^(tau - 1).
    pub fn eta_min(&self) -> f64 {
        (self.n as f64).powf(self.tau - 1.0)
    }

    /// Upper edge of the admissible eta range, 1/tau.
    pub fn eta_max(&self) -> f64 {
        1.0 / self.tau
    }

    /// The sparse correction coefficient s / q^2.
    pub fn sparse_shift(&self) -> f64 {
        self.s / (self.q * self.q)
    }

    /// Shift size sqrt(s)/q of the refining two-atom convolution.
    pub fn refinement_shift(&self) -> f64 {
        self.s.sqrt() / self.q
    }
}

/// A finite set of half-plane points inside the admissible domain,
/// sorted by (E, eta).
#[derive(Debug, Clone)]
pub struct SpectralDomain {
    points: Vec<Complex64>,
}

impl SpectralDomain {
    /// Rectangular grid: n_e energies across (-e_span, e_span) and n_eta
    /// geometrically spaced etas in [eta_lo, eta_hi], all validated against
    /// the model bounds.
    pub fn grid(
        params: &ModelParams,
        n_e: usize,
        e_span: f64,
        n_eta: usize,
        eta_lo: f64,
        eta_hi: f64,
    ) -> Result<Self> {
        if n_e == 0 || n_eta == 0 {
            return Err(Error::Config("spectral grid needs at least one point per axis".into()));
        }
        let mut points = Vec::with_capacity(n_e * n_eta);
        for i in 0..n_e {
            let e = if n_e == 1 {
                0.0
            } else {
                -e_span + 2.0 * e_span * i as f64 / (n_e - 1) as f64
            };
            for j in 0..n_eta {
                let eta = if n_eta == 1 {
                    eta_lo
                } else {
                    eta_lo * (eta_hi / eta_lo).powf(j as f64 / (n_eta - 1) as f64)
                };
                points.push(Complex64::new(e, eta));
            }
        }
        Self::from_points(params, points)
    }

    /// Validate and sort an arbitrary point set.
    pub fn from_points(params: &ModelParams, mut points: Vec<Complex64>) -> Result<Self> {
        let (eta_min, eta_max) = (params.eta_min(), params.eta_max());
        for z in &points {
            if z.re.abs() >= params.e0 {
                return Err(Error::Config(format!(
                    "domain point E = {} outside (-{}, {})",
                    z.re, params.e0, params.e0
                )));
            }
            if z.im < eta_min * (1.0 - 1e-12) || z.im > eta_max * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "domain point eta = {} outside [{eta_min:e}, {eta_max}]",
                    z.im
                )));
            }
        }
        points.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        Ok(SpectralDomain { points })
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Fixed-point solver knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Residual tolerance on |m - Phi(m)|.
    pub tol: f64,
    /// Initial damping of the Picard step.
    pub damping: f64,
    /// Iteration budget per continuation level.
    pub max_iter: usize,
    /// Descending eta values used to continue from easy to hard points.
    pub eta_ladder: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-12,
            damping: 0.5,
            max_iter: 10_000,
            eta_ladder: vec![1.0, 0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4],
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config("solver tol must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        if !self.eta_ladder.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Config("eta ladder must be strictly decreasing".into()));
        }
        Ok(())
    }
}

/// Which self-consistent equation a solution satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquationKind {
    Standard,
    Refined,
    SparseQuartic,
}

/// Solution of a self-consistent equation over a set of half-plane points.
#[derive(Debug, Clone)]
pub struct FcSolution {
    pub equation: EquationKind,
    pub points: Vec<Complex64>,
    pub values: Vec<Complex64>,
    pub residuals: Vec<f64>,
}

impl FcSolution {
    /// Dump as CSV rows (E, eta, Re m, Im m, residual, envelope).
    pub fn write_csv<W: std::io::Write>(
        &self,
        out: &mut W,
        envelope: impl Fn(Complex64) -> f64,
    ) -> Result<()> {
        writeln!(out, "E,eta,re_m,im_m,residual,envelope")?;
        for ((z, m), r) in self.points.iter().zip(&self.values).zip(&self.residuals) {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                z.re,
                z.im,
                m.re,
                m.im,
                r,
                envelope(*z)
            )?;
        }
        Ok(())
    }
}

/// Solution of the refined quadratic vector equation at one point.
#[derive(Debug, Clone)]
pub struct VectorSolution {
    pub values: Vec<Complex64>,
    pub mean: Complex64,
}

/// Support endpoints and the auxiliary points of the edge equations.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EdgeData {
    #[serde(rename = "L_minus")]
    pub l_minus: f64,
    #[serde(rename = "L_plus")]
    pub l_plus: f64,
    pub zeta_minus: f64,
    pub zeta_plus: f64,
    pub m_at_edge_plus: f64,
    pub split_detected: bool,
}
