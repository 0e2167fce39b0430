//! Spectral edges and classical locations.
//!
//! The support endpoints of rho_sc boxplus mu solve the system
//!     1 = integral d mu(u) / (u - zeta)^2,    L = zeta - m_mu(zeta),
//! with zeta outside the hull of mu. Under the stability margin the integral
//! is monotone in zeta on each side, so bisection finds zeta; the density
//! between the edges then defines the N-quantile classical locations.

use super::{EdgeData, StieltjesLaw, DEFAULT_VARPI};
use crate::measure::Measure;
use crate::{Error, Result};

/// Edge bisection tolerance in zeta.
const ZETA_TOL: f64 = 1e-12;

/// Outer bracket width for the zeta search.
const BRACKET: f64 = 10.0;

/// Support endpoints of rho_sc boxplus mu for a lambda-scaled (possibly
/// refined) measure mu, with the default stability cushion.
pub fn find_edges(mu: &Measure) -> Result<EdgeData> {
    find_edges_with(mu, DEFAULT_VARPI)
}

/// As [`find_edges`], with an explicit varpi. Refuses (split regime) when the
/// stability margin of mu falls below 1 + varpi.
pub fn find_edges_with(mu: &Measure, varpi: f64) -> Result<EdgeData> {
    let margin = mu.stability_margin(1.0);
    if margin < 1.0 + varpi {
        return Err(Error::SplitSupport {
            margin,
            threshold: 1.0 + varpi,
        });
    }
    let hull = mu.hull();
    let zeta_plus = bisect_edge(mu, hull.hi + ZETA_TOL, hull.hi + BRACKET)?;
    let zeta_minus = bisect_edge(mu, hull.lo - BRACKET, hull.lo - ZETA_TOL)?;
    let m_plus = mu.stieltjes_at_real(zeta_plus);
    let m_minus = mu.stieltjes_at_real(zeta_minus);
    Ok(EdgeData {
        l_minus: zeta_minus - m_minus,
        l_plus: zeta_plus - m_plus,
        zeta_minus,
        zeta_plus,
        m_at_edge_plus: m_plus,
        split_detected: false,
    })
}

/// Solve integral d mu / (u - zeta)^2 = 1 on [a, b] where the integral is
/// monotone decreasing in the distance from the hull.
fn bisect_edge(mu: &Measure, a: f64, b: f64) -> Result<f64> {
    let g = |zeta: f64| mu.inverse_square_integral(zeta) - 1.0;
    // The integral exceeds 1 next to the hull (stability) and decays to
    // below 1 at distance BRACKET (mass 1 over squared distance).
    let (mut near, mut far) = if a > mu.hull().hi { (a, b) } else { (b, a) };
    if g(near) <= 0.0 || g(far) >= 0.0 {
        return Err(Error::SolverFailure {
            re: near,
            im: 0.0,
            residual: g(near).abs().min(g(far).abs()),
        });
    }
    while (near - far).abs() > ZETA_TOL {
        let mid = 0.5 * (near + far);
        if g(mid) > 0.0 {
            near = mid;
        } else {
            far = mid;
        }
    }
    Ok(0.5 * (near + far))
}

/// Four-term edge series 2 + m1 + m2 + m3 + (m4 - 9 m2^2 / 4) for the upper
/// endpoint, from the first four moments of the lambda-scaled refined
/// measure. Remainder O(lambda^5, q^-6).
pub fn edge_expansion(m1: f64, m2: f64, m3: f64, m4: f64) -> f64 {
    2.0 + m1 + m2 + m3 + (m4 - 2.25 * m2 * m2)
}

/// [`edge_expansion`] fed by the moments of a measure.
pub fn edge_expansion_for(mu: &Measure) -> f64 {
    edge_expansion(mu.moment(1), mu.moment(2), mu.moment(3), mu.moment(4))
}

/// Options for Stieltjes inversion.
#[derive(Debug, Clone, Copy)]
pub struct DensityOptions {
    /// Inversion height; callers tied to a matrix size should keep this at
    /// or above N^(tau-1).
    pub eta_small: f64,
    /// Richardson extrapolation over {2 eta, eta}.
    pub richardson: bool,
}

impl Default for DensityOptions {
    fn default() -> Self {
        DensityOptions {
            eta_small: 1e-8,
            richardson: false,
        }
    }
}

/// Stieltjes inversion of an already-solved set of points:
/// rho = Im m / pi, clipped at the -1e-10 floor.
pub fn invert_density(solution: &super::FcSolution) -> Vec<f64> {
    solution
        .values
        .iter()
        .map(|m| {
            let rho = m.im / std::f64::consts::PI;
            debug_assert!(rho > -1e-10);
            rho.max(0.0)
        })
        .collect()
}

/// Density of a law over an energy grid (solves per point, optional
/// Richardson, clipped nonnegative).
pub fn density_profile<L: StieltjesLaw>(
    law: &L,
    e_grid: &[f64],
    opts: &DensityOptions,
) -> Result<Vec<f64>> {
    law.density(e_grid, opts)
}

/// Distribution function of a law between its edges, built once and shared
/// by classical locations, rigidity and density-of-states comparisons.
#[derive(Debug, Clone)]
pub struct LawCdf {
    pub edges: EdgeData,
    e_grid: Vec<f64>,
    cum: Vec<f64>,
    /// Trapezoid mass of the density before normalization (diagnostic).
    pub raw_mass: f64,
}

impl LawCdf {
    /// Integrate the inverted density over `grid_points` nodes spanning the
    /// edges, normalized to total mass one.
    pub fn build<L: StieltjesLaw>(
        law: &L,
        edges: &EdgeData,
        grid_points: usize,
        opts: &DensityOptions,
    ) -> Result<LawCdf> {
        if edges.split_detected {
            return Err(Error::Config("law cdf needs single-interval support".into()));
        }
        let g = grid_points.max(257);
        let (lo, hi) = (edges.l_minus, edges.l_plus);
        let h = (hi - lo) / (g - 1) as f64;
        let e_grid: Vec<f64> = (0..g).map(|k| lo + h * k as f64).collect();
        let rho = law.density(&e_grid, opts)?;
        let mut cum = Vec::with_capacity(g);
        let mut acc = 0.0;
        cum.push(0.0);
        for k in 1..g {
            let inc = 0.5 * h * (rho[k - 1] + rho[k]);
            if inc < 0.0 {
                return Err(Error::NumericalIntegrity { delta: inc });
            }
            acc += inc;
            cum.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::NumericalIntegrity { delta: acc });
        }
        for c in &mut cum {
            *c /= acc;
        }
        Ok(LawCdf {
            edges: *edges,
            e_grid,
            cum,
            raw_mass: acc,
        })
    }

    /// F(e): 0 below the lower edge, 1 above the upper edge, interpolated
    /// between grid nodes inside.
    pub fn value(&self, e: f64) -> f64 {
        if e <= self.edges.l_minus {
            return 0.0;
        }
        if e >= self.edges.l_plus {
            return 1.0;
        }
        let j = self.e_grid.partition_point(|&x| x <= e).min(self.e_grid.len() - 1);
        let (x0, x1) = (self.e_grid[j - 1], self.e_grid[j]);
        let (c0, c1) = (self.cum[j - 1], self.cum[j]);
        (c0 + (c1 - c0) * (e - x0) / (x1 - x0)).clamp(0.0, 1.0)
    }

    /// Generalized inverse of F.
    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return self.edges.l_minus;
        }
        if p >= 1.0 {
            return self.edges.l_plus;
        }
        let j = self.cum.partition_point(|&c| c < p).clamp(1, self.cum.len() - 1);
        let (c0, c1) = (self.cum[j - 1], self.cum[j]);
        let (x0, x1) = (self.e_grid[j - 1], self.e_grid[j]);
        if c1 > c0 {
            (x0 + (x1 - x0) * (p - c0) / (c1 - c0)).min(self.edges.l_plus)
        } else {
            x1
        }
    }

    /// Classical locations gamma_i with F(gamma_i) = i/N; gamma_N lands on
    /// the upper edge by construction.
    pub fn classical_locations(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::Config("classical locations need N >= 1".into()));
        }
        let out: Vec<f64> = (1..=n).map(|i| self.quantile(i as f64 / n as f64)).collect();
        for j in 1..out.len() {
            if out[j] < out[j - 1] {
                return Err(Error::NumericalIntegrity {
                    delta: out[j - 1] - out[j],
                });
            }
        }
        Ok(out)
    }
}

/// Classical locations gamma_i defined by F(gamma_i) = i/N for the law's
/// density between the computed edges.
pub fn classical_locations<L: StieltjesLaw>(
    edges: &EdgeData,
    law: &L,
    n: usize,
    grid_points: usize,
    opts: &DensityOptions,
) -> Result<Vec<f64>> {
    LawCdf::build(law, edges, grid_points, opts)?.classical_locations(n)
}
