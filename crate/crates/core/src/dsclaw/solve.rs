//! Damped fixed-point solvers for the self-consistent equations.
//!
//! The standard equation is m = integral d nu(v) / (lambda v - z - m); the
//! refined equation inserts the sparse correction -(s/q^2)/(lambda v - z - m)
//! into the denominator. Both maps send the upper half-plane to itself, so a
//! damped Picard iteration with eta continuation stays on the physical
//! branch; a guarded Newton step finishes the last digits where Picard's
//! contraction rate degrades like 1 - sqrt(kappa + eta).

use super::{
    DensityOptions, EdgeData, EquationKind, FcSolution, ModelParams, SolverConfig, SpectralDomain,
    VectorSolution, DEFAULT_VARPI,
};
use crate::measure::Measure;
use crate::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;

/// Closed-form semicircle Stieltjes transform on the upper half-plane,
/// m_sc(z) = (-z + sqrt(z - 2) sqrt(z + 2)) / 2.
pub fn m_semicircle(z: Complex64) -> Complex64 {
    let root = (z - 2.0).sqrt() * (z + 2.0).sqrt();
    0.5 * (-z + root)
}

/// A law defined by a self-consistent Stieltjes equation.
pub trait StieltjesLaw: Sync {
    /// Solve the equation at a half-plane point.
    fn solve(&self, z: Complex64) -> Result<Complex64>;

    /// Solve with the certified residual |m - Phi(m)|.
    fn solve_with_residual(&self, z: Complex64) -> Result<(Complex64, f64)>;

    /// The free-convolution partner measure (nu^lambda, or its refinement);
    /// the law is rho_sc boxplus partner.
    fn partner_measure(&self) -> &Measure;

    fn equation(&self) -> EquationKind;

    /// Solve over a whole domain; points are handled by independent workers
    /// and merged in grid order.
    fn solve_grid(&self, domain: &SpectralDomain) -> Result<FcSolution> {
        let results: Vec<Result<(Complex64, f64)>> = domain
            .points()
            .par_iter()
            .map(|&z| self.solve_with_residual(z))
            .collect();
        let mut values = Vec::with_capacity(results.len());
        let mut residuals = Vec::with_capacity(results.len());
        for r in results {
            let (m, res) = r?;
            values.push(m);
            residuals.push(res);
        }
        Ok(FcSolution {
            equation: self.equation(),
            points: domain.points().to_vec(),
            values,
            residuals,
        })
    }

    /// Density values pi^{-1} Im m(E + i eta) over an energy grid, with
    /// optional Richardson extrapolation over {2 eta, eta}, clipped to be
    /// nonnegative.
    fn density(&self, e_grid: &[f64], opts: &DensityOptions) -> Result<Vec<f64>> {
        let rows: Vec<Result<f64>> = e_grid
            .par_iter()
            .map(|&e| {
                let m1 = self.solve(Complex64::new(e, opts.eta_small))?;
                let im = if opts.richardson {
                    let m2 = self.solve(Complex64::new(e, 2.0 * opts.eta_small))?;
                    2.0 * m1.im - m2.im
                } else {
                    m1.im
                };
                Ok(im / std::f64::consts::PI)
            })
            .collect();
        let mut out = Vec::with_capacity(rows.len());
        for r in rows {
            let rho = r?;
            debug_assert!(rho > -1e-10, "density fell below the clip floor: {rho}");
            out.push(rho.max(0.0));
        }
        Ok(out)
    }
}

/// The deformed semicircle law rho_sc boxplus nu^lambda.
#[derive(Debug, Clone)]
pub struct DeformedLaw {
    nu: Measure,
    lambda: f64,
    partner: Measure,
    cfg: SolverConfig,
}

impl DeformedLaw {
    pub fn new(nu: Measure, lambda: f64, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let partner = nu.scale(lambda)?;
        Ok(DeformedLaw {
            nu,
            lambda,
            partner,
            cfg,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn base_measure(&self) -> &Measure {
        &self.nu
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }
}

impl StieltjesLaw for DeformedLaw {
    fn solve(&self, z: Complex64) -> Result<Complex64> {
        Ok(self.solve_with_residual(z)?.0)
    }

    fn solve_with_residual(&self, z: Complex64) -> Result<(Complex64, f64)> {
        solve_self_consistent(&self.nu, self.lambda, 0.0, z, &self.cfg)
    }

    fn partner_measure(&self) -> &Measure {
        &self.partner
    }

    fn equation(&self) -> EquationKind {
        EquationKind::Standard
    }
}

/// The refined deformed semicircle law: rho_sc boxplus nu-tilde^lambda, where
/// the partner is the sparsity convolution of the lambda-scaled base measure.
///
/// Construction checks the stability margin of the refined measure once; all
/// later solves reuse that certificate.
#[derive(Debug, Clone)]
pub struct RefinedLaw {
    nu_hat: Measure,
    params: ModelParams,
    partner: Measure,
    margin: f64,
    cfg: SolverConfig,
}

impl RefinedLaw {
    pub fn new(nu_hat: Measure, params: ModelParams, cfg: SolverConfig) -> Result<Self> {
        Self::with_varpi(nu_hat, params, cfg, DEFAULT_VARPI)
    }

    pub fn with_varpi(
        nu_hat: Measure,
        params: ModelParams,
        cfg: SolverConfig,
        varpi: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        let partner = nu_hat.scale(params.lambda)?.sparsity_convolve(params.s, params.q)?;
        let margin = partner.stability_margin(1.0);
        if margin < 1.0 + varpi {
            return Err(Error::SplitSupport {
                margin,
                threshold: 1.0 + varpi,
            });
        }
        Ok(RefinedLaw {
            nu_hat,
            params,
            partner,
            margin,
            cfg,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn base_measure(&self) -> &Measure {
        &self.nu_hat
    }

    /// The certified stability margin of the refined measure.
    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Support endpoints of the refined law.
    pub fn edges(&self) -> Result<EdgeData> {
        super::find_edges(&self.partner)
    }

    /// The refined quadratic vector equation at z, given the trace solution.
    pub fn vector_m(&self, potential: &[f64], m_tilde: Complex64, z: Complex64) -> Result<VectorSolution> {
        vector_m(potential, &self.params, m_tilde, z)
    }
}

impl StieltjesLaw for RefinedLaw {
    fn solve(&self, z: Complex64) -> Result<Complex64> {
        Ok(self.solve_with_residual(z)?.0)
    }

    fn solve_with_residual(&self, z: Complex64) -> Result<(Complex64, f64)> {
        solve_self_consistent(
            &self.nu_hat,
            self.params.lambda,
            self.params.sparse_shift(),
            z,
            &self.cfg,
        )
    }

    fn partner_measure(&self) -> &Measure {
        &self.partner
    }

    fn equation(&self) -> EquationKind {
        EquationKind::Refined
    }
}

/// One-shot solve of the standard equation m = integral d nu / (lambda v - z - m).
pub fn solve_mfc(nu: &Measure, lambda: f64, z: Complex64, cfg: &SolverConfig) -> Result<Complex64> {
    cfg.validate()?;
    Ok(solve_self_consistent(nu, lambda, 0.0, z, cfg)?.0)
}

/// One-shot solve of the refined equation. The stability precondition is
/// checked per call here; use [`RefinedLaw`] to amortize it over a grid.
pub fn solve_refined(
    nu_hat: &Measure,
    params: &ModelParams,
    z: Complex64,
    cfg: &SolverConfig,
) -> Result<Complex64> {
    let law = RefinedLaw::new(nu_hat.clone(), *params, cfg.clone())?;
    law.solve(z)
}

/// The refined quadratic vector equation entries
/// M_i = (lambda V_i - z - m - (s/q^2)/(lambda V_i - z - m))^{-1}.
pub fn vector_m(
    potential: &[f64],
    params: &ModelParams,
    m_tilde: Complex64,
    z: Complex64,
) -> Result<VectorSolution> {
    let c = params.sparse_shift();
    let mut values = Vec::with_capacity(potential.len());
    let mut sum = Complex64::new(0.0, 0.0);
    for (i, &v) in potential.iter().enumerate() {
        let w = params.lambda * v - z - m_tilde;
        let den = if c == 0.0 { w } else { w - c / w };
        if den.norm() < 1e-14 {
            return Err(Error::Singularity {
                index: i,
                magnitude: den.norm(),
            });
        }
        let m = den.inv();
        sum += m;
        values.push(m);
    }
    let mean = sum / potential.len() as f64;
    Ok(VectorSolution { values, mean })
}

/// Subordination residual: with omega2 = z + m, how far m is from
/// m_partner(omega2). Any failure of Im omega2 >= Im z is folded in.
pub fn subordination_check(m: Complex64, z: Complex64, partner: &Measure) -> Result<f64> {
    let omega2 = z + m;
    let lifted = partner.stieltjes(omega2)?;
    let residual = (lifted - m).norm();
    let im_defect = (z.im - omega2.im).max(0.0);
    Ok(residual.max(im_defect))
}

// ---------------------------------------------------------------------------
// Fixed-point engine
// ---------------------------------------------------------------------------

/// Evaluate Phi(m) for the (possibly refined) self-consistent map.
fn phi(nu: &Measure, lambda: f64, c: f64, z: Complex64, m: Complex64) -> Complex64 {
    if c == 0.0 {
        nu.integrate_complex(|v| (lambda * v - z - m).inv())
    } else {
        nu.integrate_complex(|v| {
            let w = lambda * v - z - m;
            (w - c / w).inv()
        })
    }
}

/// Phi and its m-derivative in one pass (for the Newton step).
fn phi_with_derivative(
    nu: &Measure,
    lambda: f64,
    c: f64,
    z: Complex64,
    m: Complex64,
) -> (Complex64, Complex64) {
    let mut val = Complex64::default();
    let mut der = Complex64::default();
    let mut add = |weight: f64, v: f64| {
        let w = lambda * v - z - m;
        let den = if c == 0.0 { w } else { w - c / w };
        let inv = den.inv();
        val += weight * inv;
        let dd = if c == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(1.0, 0.0) + c / (w * w)
        };
        der += weight * dd * inv * inv;
    };
    match nu.atoms() {
        Some(atoms) => {
            for &(v, w) in atoms {
                add(w, v);
            }
        }
        None => {
            // Gridded: fall back to the generic integrator twice.
            val = phi(nu, lambda, c, z, m);
            der = nu.integrate_complex(|v| {
                let w = lambda * v - z - m;
                let den = if c == 0.0 { w } else { w - c / w };
                let dd = if c == 0.0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(1.0, 0.0) + c / (w * w)
                };
                dd / (den * den)
            });
        }
    }
    (val, der)
}

/// Continuation ladder: configured etas above the target, then the target.
fn ladder_for(cfg: &SolverConfig, eta: f64) -> Vec<f64> {
    let mut ladder: Vec<f64> = cfg.eta_ladder.iter().copied().filter(|&l| l > eta).collect();
    ladder.push(eta);
    ladder
}

fn solve_self_consistent(
    nu: &Measure,
    lambda: f64,
    c: f64,
    z: Complex64,
    cfg: &SolverConfig,
) -> Result<(Complex64, f64)> {
    if z.im <= 0.0 {
        return Err(Error::Config(format!("solver requires Im z > 0, got {}", z.im)));
    }
    let ladder = ladder_for(cfg, z.im);
    let mut m = m_semicircle(Complex64::new(z.re, ladder[0]));
    let mut residual = f64::INFINITY;
    for eta in ladder {
        let zk = Complex64::new(z.re, eta);
        let (mk, res) = iterate_at(nu, lambda, c, zk, m, cfg)?;
        m = mk;
        residual = res;
    }
    Ok((m, residual))
}

/// Damped Picard iteration with oscillation-triggered damping bisection and
/// a guarded Newton finisher.
fn iterate_at(
    nu: &Measure,
    lambda: f64,
    c: f64,
    z: Complex64,
    seed: Complex64,
    cfg: &SolverConfig,
) -> Result<(Complex64, f64)> {
    let mut m = if seed.im > 0.0 && seed.is_finite() {
        seed
    } else {
        m_semicircle(z)
    };
    let mut damping = cfg.damping;
    let mut prev_res = f64::INFINITY;
    let mut improved_streak = 0usize;
    for _ in 0..cfg.max_iter {
        let value = phi(nu, lambda, c, z, m);
        let f = value - m;
        let res = f.norm();
        if res <= cfg.tol {
            return Ok((m, res));
        }
        if res < 1e-4 {
            // Newton step on Phi(m) - m = 0, kept only if it actually helps
            // and stays on the physical branch.
            let (value2, der) = phi_with_derivative(nu, lambda, c, z, m);
            let denom = der - 1.0;
            if denom.norm() > 1e-14 {
                let cand = m - (value2 - m) / denom;
                if cand.im > 0.0 {
                    let cand_res = (phi(nu, lambda, c, z, cand) - cand).norm();
                    if cand_res < res {
                        m = cand;
                        prev_res = cand_res;
                        if cand_res <= cfg.tol {
                            return Ok((m, cand_res));
                        }
                        continue;
                    }
                }
            }
        }
        // Damped Picard; both m and Phi(m) lie in the upper half-plane, so
        // the convex combination stays there.
        if res > prev_res {
            damping = (0.5 * damping).max(0.02);
            improved_streak = 0;
        } else {
            improved_streak += 1;
            if improved_streak >= 4 && damping < cfg.damping {
                damping = (1.5 * damping).min(cfg.damping);
                improved_streak = 0;
            }
        }
        m = (1.0 - damping) * m + damping * value;
        prev_res = res;
    }
    let res = (phi(nu, lambda, c, z, m) - m).norm();
    if res <= cfg.tol {
        return Ok((m, res));
    }
    Err(Error::SolverFailure {
        re: z.re,
        im: z.im,
        residual: res,
    })
}

// ---------------------------------------------------------------------------
// Sparse quartic law
// ---------------------------------------------------------------------------

/// The sparse-corrected semicircle transform: the root of
/// 1 + z m + m^2 + (s/q^2) m^4 = 0 continuously connected to -1/z at large
/// eta, tracked by homotopy down the eta ladder.
pub fn sparse_quartic(params: &ModelParams, z: Complex64) -> Result<Complex64> {
    if z.im <= 0.0 {
        return Err(Error::Config(format!("sparse quartic requires Im z > 0, got {}", z.im)));
    }
    let c = params.sparse_shift();
    if c < 1e-300 {
        return Ok(m_semicircle(z));
    }
    // Path from a very macroscopic eta down to the target.
    let eta_top = 10.0f64.max(2.0 * z.im);
    let mut etas = Vec::new();
    let mut eta = eta_top;
    while eta > z.im {
        etas.push(eta);
        eta *= 0.5;
    }
    etas.push(z.im);

    let mut current = -Complex64::new(z.re, etas[0]).inv();
    for &eta in &etas {
        let zk = Complex64::new(z.re, eta);
        // c m^4 + 0 m^3 + m^2 + z m + 1 = 0
        let roots = durand_kerner(&[
            Complex64::new(1.0, 0.0),
            zk,
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(c, 0.0),
        ])?;
        current = *roots
            .iter()
            .min_by(|a, b| (**a - current).norm().total_cmp(&(**b - current).norm()))
            .expect("quartic has four roots");
    }
    if current.im < -1e-10 {
        return Err(Error::BranchFailure { re: z.re, im: z.im });
    }
    Ok(current)
}

/// Durand-Kerner roots of a polynomial given coefficients in ascending
/// degree order. Deterministic seeds, fixed iteration budget.
fn durand_kerner(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = coeffs.len() - 1;
    let lead = coeffs[n];
    let monic: Vec<Complex64> = coeffs.iter().map(|&a| a / lead).collect();
    let eval = |x: Complex64| {
        let mut p = monic[n];
        for k in (0..n).rev() {
            p = p * x + monic[k];
        }
        p
    };
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32 + 1)).collect();
    for _ in 0..500 {
        let mut max_step = 0.0f64;
        for i in 0..n {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    den *= roots[i] - roots[j];
                }
            }
            if den.norm() < 1e-300 {
                den = Complex64::new(1e-300, 0.0);
            }
            let step = eval(roots[i]) / den;
            roots[i] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-14 {
            return Ok(roots);
        }
    }
    // Accept if the residuals are small even without step convergence.
    if roots.iter().all(|&r| eval(r).norm() < 1e-10) {
        return Ok(roots);
    }
    Err(Error::BranchFailure { re: 0.0, im: 0.0 })
}
