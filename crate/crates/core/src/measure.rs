//! Compactly supported probability measures on the real line.
//!
//! Two representations are supported: purely atomic measures (sorted
//! location/weight pairs) and gridded densities (strictly increasing nodes
//! with density values and quadrature weights). Gridded measures also carry
//! the distribution function sampled at the nodes, so quantiles and classical
//! potentials stay accurate through scalings and convolutions.

use crate::quad;
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Total-mass tolerance enforced by every constructor and transform.
pub const MASS_TOL: f64 = 1e-12;

/// Quadrature values above this are treated as a divergent integral.
const DIVERGENCE_CAP: f64 = 1e12;

/// Smallest interval containing the support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportHull {
    pub lo: f64,
    pub hi: f64,
}

impl SupportHull {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone)]
enum Repr {
    /// Atoms sorted by location; exact duplicates are merged.
    Discrete { atoms: Vec<(f64, f64)> },
    /// Strictly increasing nodes with density values, quadrature weights,
    /// and the distribution function F at each node.
    Gridded {
        grid: Vec<f64>,
        density: Vec<f64>,
        weights: Vec<f64>,
        cum: Vec<f64>,
    },
}

/// A compactly supported probability measure.
#[derive(Debug, Clone)]
pub struct Measure {
    repr: Repr,
    hull: SupportHull,
}

impl Measure {
    // ---------------------------------------------------------------------
    // Constructors
    // ---------------------------------------------------------------------

    /// The symmetric two-atom measure (delta_{-a} + delta_{a}) / 2.
    pub fn two_atom(a: f64) -> Result<Measure> {
        if !a.is_finite() || a < 0.0 {
            return Err(Error::InvalidMeasure(format!(
                "two-atom location must be finite and nonnegative, got {a}"
            )));
        }
        let atoms = if a == 0.0 {
            vec![(0.0, 1.0)]
        } else {
            vec![(-a, 0.5), (a, 0.5)]
        };
        Measure::from_atoms(atoms)
    }

    /// Point mass at x.
    pub fn dirac(x: f64) -> Measure {
        Measure {
            repr: Repr::Discrete {
                atoms: vec![(x, 1.0)],
            },
            hull: SupportHull { lo: x, hi: x },
        }
    }

    /// Empirical measure of a sample: one atom of weight 1/N per value.
    pub fn empirical(values: &[f64]) -> Result<Measure> {
        if values.is_empty() {
            return Err(Error::InvalidMeasure("empirical measure of an empty sample".into()));
        }
        let w = 1.0 / values.len() as f64;
        Measure::from_atoms(values.iter().map(|&v| (v, w)).collect())
    }

    /// Discrete measure from raw (location, weight) pairs. Sorts, merges
    /// duplicates, and validates mass and signs.
    pub fn from_atoms(mut atoms: Vec<(f64, f64)>) -> Result<Measure> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        for &(x, w) in &atoms {
            if !x.is_finite() || !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidMeasure(format!("bad atom ({x}, {w})")));
            }
        }
        atoms.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += w,
                _ => merged.push((x, w)),
            }
        }
        let hull = SupportHull {
            lo: merged.first().unwrap().0,
            hi: merged.last().unwrap().0,
        };
        let m = Measure {
            repr: Repr::Discrete { atoms: merged },
            hull,
        };
        m.validate()?;
        Ok(m)
    }

    /// Centered Jacobi measure with density Z^{-1} (1+v)^a (1-v)^b on [-1, 1],
    /// recentred so the first moment vanishes.
    ///
    /// Nodes come from composite Gauss-Legendre panels; when an exponent is
    /// negative the corresponding endpoint uses the substitution v = ±(1-t^2)
    /// so the integrable singularity is resolved.
    pub fn jacobi(a: f64, b: f64, grid_size: usize) -> Result<Measure> {
        if !(a > -1.0 && b > -1.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidMeasure(format!(
                "jacobi exponents must lie in (-1, inf), got a={a}, b={b}"
            )));
        }
        if grid_size < 64 {
            return Err(Error::Config(format!("jacobi grid_size must be >= 64, got {grid_size}")));
        }
        let f = |v: f64| (1.0 + v).powf(a) * (1.0 - v).powf(b);

        // Left half [-1, 0] and right half [0, 1], built separately so each
        // endpoint can get its own substitution.
        let n_left = grid_size / 2 + grid_size % 2;
        let n_right = grid_size / 2;
        let (mut grid, mut weights) = jacobi_half_nodes(n_left, true, a < 0.0);
        let (gr, wr) = jacobi_half_nodes(n_right, false, b < 0.0);
        grid.extend(gr);
        weights.extend(wr);
        let mut density: Vec<f64> = grid.iter().map(|&v| f(v)).collect();

        let mass_raw: f64 = weights.iter().zip(&density).map(|(w, d)| w * d).sum();
        for d in &mut density {
            *d /= mass_raw;
        }

        // Distribution function at the nodes via per-gap quadrature of the
        // analytic density (with the endpoint substitutions when singular).
        let mut cum = Vec::with_capacity(grid.len());
        let mut acc = jacobi_segment(a, b, -1.0, grid[0]) / mass_raw;
        cum.push(acc);
        for i in 1..grid.len() {
            acc += jacobi_segment(a, b, grid[i - 1], grid[i]) / mass_raw;
            cum.push(acc.min(1.0));
        }

        let mut m = Measure {
            repr: Repr::Gridded {
                grid,
                density,
                weights,
                cum,
            },
            hull: SupportHull { lo: -1.0, hi: 1.0 },
        };
        let mean = m.moment(1);
        m.shift_in_place(-mean);
        m.validate()?;
        if m.moment(1).abs() > 1e-10 {
            return Err(Error::InvalidMeasure(format!(
                "jacobi recentring left mean {:.3e}",
                m.moment(1)
            )));
        }
        Ok(m)
    }

    /// Uniform measure on [-1, 1] (the Jacobi measure with a = b = 0).
    pub fn uniform(grid_size: usize) -> Result<Measure> {
        Measure::jacobi(0.0, 0.0, grid_size)
    }

    fn shift_in_place(&mut self, delta: f64) {
        match &mut self.repr {
            Repr::Discrete { atoms } => {
                for a in atoms.iter_mut() {
                    a.0 += delta;
                }
            }
            Repr::Gridded { grid, .. } => {
                for x in grid.iter_mut() {
                    *x += delta;
                }
            }
        }
        self.hull.lo += delta;
        self.hull.hi += delta;
    }

    fn validate(&self) -> Result<()> {
        let mass = self.moment(0);
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("total mass {mass} differs from 1")));
        }
        match &self.repr {
            Repr::Discrete { atoms } => {
                if self.hull.lo != atoms.first().unwrap().0 || self.hull.hi != atoms.last().unwrap().0 {
                    return Err(Error::InvalidMeasure("hull does not match atom range".into()));
                }
            }
            Repr::Gridded {
                grid, density, cum, ..
            } => {
                if !grid.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::InvalidMeasure("grid not strictly increasing".into()));
                }
                if density.iter().any(|&d| d < 0.0 || !d.is_finite()) {
                    return Err(Error::InvalidMeasure("negative or non-finite density".into()));
                }
                if self.hull.lo > grid[0] || self.hull.hi < *grid.last().unwrap() {
                    return Err(Error::InvalidMeasure("hull does not contain the grid".into()));
                }
                if !cum.windows(2).all(|w| w[0] <= w[1]) {
                    return Err(Error::InvalidMeasure("distribution function not monotone".into()));
                }
            }
        }
        Ok(())
    }

    // ---------------------------------------------------------------------
    // Basic queries
    // ---------------------------------------------------------------------

    pub fn hull(&self) -> SupportHull {
        self.hull
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.repr, Repr::Discrete { .. })
    }

    /// Atoms of a discrete measure (None for gridded densities).
    pub fn atoms(&self) -> Option<&[(f64, f64)]> {
        match &self.repr {
            Repr::Discrete { atoms } => Some(atoms),
            Repr::Gridded { .. } => None,
        }
    }

    /// Number of atoms or grid nodes.
    pub fn len(&self) -> usize {
        match &self.repr {
            Repr::Discrete { atoms } => atoms.len(),
            Repr::Gridded { grid, .. } => grid.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false // a valid measure always carries mass 1
    }

    /// Integrate an arbitrary function against the measure.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        match &self.repr {
            Repr::Discrete { atoms } => atoms.iter().map(|&(x, w)| w * f(x)).sum(),
            Repr::Gridded {
                grid,
                density,
                weights,
                ..
            } => grid
                .iter()
                .zip(density)
                .zip(weights)
                .map(|((&x, &d), &w)| w * d * f(x))
                .sum(),
        }
    }

    /// Complex integrand variant used by the Stieltjes solvers.
    pub fn integrate_complex<F: Fn(f64) -> Complex64>(&self, f: F) -> Complex64 {
        match &self.repr {
            Repr::Discrete { atoms } => atoms.iter().map(|&(x, w)| w * f(x)).sum(),
            Repr::Gridded {
                grid,
                density,
                weights,
                ..
            } => grid
                .iter()
                .zip(density)
                .zip(weights)
                .map(|((&x, &d), &w)| (w * d) * f(x))
                .sum(),
        }
    }

    /// k-th moment: integral of x^k.
    pub fn moment(&self, k: usize) -> f64 {
        self.integrate(|x| x.powi(k as i32))
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn variance(&self) -> f64 {
        let m1 = self.moment(1);
        self.moment(2) - m1 * m1
    }

    /// Stieltjes transform m(z) = integral of 1/(x - z), Im z > 0.
    pub fn stieltjes(&self, z: Complex64) -> Result<Complex64> {
        if z.im <= 0.0 {
            return Err(Error::Config(format!(
                "stieltjes transform requires Im z > 0, got {}",
                z.im
            )));
        }
        Ok(self.integrate_complex(|x| (Complex64::new(x, 0.0) - z).inv()))
    }

    /// Stieltjes transform at a real point. Finite only when x lies outside
    /// the support; used by the edge equations.
    pub fn stieltjes_at_real(&self, x: f64) -> f64 {
        self.integrate(|v| 1.0 / (v - x))
    }

    /// Integral of 1/(v - x)^2, the derivative of the Stieltjes transform.
    /// Diverges (returns +inf) when x sits inside an absolutely continuous
    /// region of the support.
    pub fn inverse_square_integral(&self, x: f64) -> f64 {
        if matches!(self.repr, Repr::Gridded { .. })
            && x >= self.hull.lo
            && x <= self.hull.hi
            && self.local_density(x) > 1e-12
        {
            return f64::INFINITY;
        }
        let v = self.integrate(|v| {
            let d = v - x;
            1.0 / (d * d)
        });
        if v > DIVERGENCE_CAP {
            f64::INFINITY
        } else {
            v
        }
    }

    /// Linear interpolation of the stored density values (gridded only).
    /// Between the hull boundary and the first or last node the nearest node
    /// value is extended, so divergence detection works up to the grid
    /// resolution; densities that vanish at the boundary faster than the
    /// node spacing can resolve are treated as positive there.
    fn local_density(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Discrete { .. } => 0.0,
            Repr::Gridded { grid, density, .. } => {
                let j = match grid.binary_search_by(|g| g.total_cmp(&x)) {
                    Ok(j) => return density[j],
                    Err(j) => j,
                };
                if j == 0 {
                    return density[0];
                }
                if j == grid.len() {
                    return *density.last().unwrap();
                }
                let t = (x - grid[j - 1]) / (grid[j] - grid[j - 1]);
                density[j - 1] * (1.0 - t) + density[j] * t
            }
        }
    }

    // ---------------------------------------------------------------------
    // Transforms
    // ---------------------------------------------------------------------

    /// Pushforward under x -> lambda x. lambda = 0 collapses to a point mass.
    pub fn scale(&self, lambda: f64) -> Result<Measure> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("scale factor must be >= 0, got {lambda}")));
        }
        if lambda == 0.0 {
            return Ok(Measure::dirac(0.0));
        }
        let repr = match &self.repr {
            Repr::Discrete { atoms } => Repr::Discrete {
                atoms: atoms.iter().map(|&(x, w)| (lambda * x, w)).collect(),
            },
            Repr::Gridded {
                grid,
                density,
                weights,
                cum,
            } => Repr::Gridded {
                grid: grid.iter().map(|&x| lambda * x).collect(),
                density: density.iter().map(|&d| d / lambda).collect(),
                weights: weights.iter().map(|&w| w * lambda).collect(),
                cum: cum.clone(),
            },
        };
        let m = Measure {
            repr,
            hull: SupportHull {
                lo: lambda * self.hull.lo,
                hi: lambda * self.hull.hi,
            },
        };
        m.validate()?;
        Ok(m)
    }

    /// Classical convolution with (delta_{sqrt(s)/q} + delta_{-sqrt(s)/q})/2:
    /// the sparsity refinement. The input must already carry the lambda
    /// scaling. Exact for both representations (shift-and-average, no
    /// smoothing).
    pub fn sparsity_convolve(&self, s: f64, q: f64) -> Result<Measure> {
        if s < 0.0 || q <= 0.0 || !s.is_finite() || !q.is_finite() {
            return Err(Error::Config(format!(
                "sparsity refinement needs s >= 0 and q > 0, got s={s}, q={q}"
            )));
        }
        let delta = s.sqrt() / q;
        if delta == 0.0 {
            return Ok(self.clone());
        }
        let hull = SupportHull {
            lo: self.hull.lo - delta,
            hi: self.hull.hi + delta,
        };
        let m = match &self.repr {
            Repr::Discrete { atoms } => {
                let mut split = Vec::with_capacity(2 * atoms.len());
                for &(x, w) in atoms {
                    split.push((x - delta, 0.5 * w));
                    split.push((x + delta, 0.5 * w));
                }
                return Measure::from_atoms(split);
            }
            Repr::Gridded {
                grid,
                density,
                weights,
                ..
            } => {
                // Interleave the two shifted copies, each at half weight.
                let n = grid.len();
                let mut gx: Vec<f64> = Vec::with_capacity(2 * n);
                let mut gd: Vec<f64> = Vec::with_capacity(2 * n);
                let mut gw: Vec<f64> = Vec::with_capacity(2 * n);
                let (mut i, mut j) = (0usize, 0usize);
                while i < n || j < n {
                    let (x, d, w) = if j >= n || (i < n && grid[i] - delta <= grid[j] + delta) {
                        let t = (grid[i] - delta, density[i], 0.5 * weights[i]);
                        i += 1;
                        t
                    } else {
                        let t = (grid[j] + delta, density[j], 0.5 * weights[j]);
                        j += 1;
                        t
                    };
                    match gx.last() {
                        Some(&last) if last == x => {
                            // Exact collision: merge mass, keep weighted density.
                            let k = gx.len() - 1;
                            let mass = gw[k] * gd[k] + w * d;
                            gw[k] += w;
                            gd[k] = if gw[k] > 0.0 { mass / gw[k] } else { 0.0 };
                        }
                        _ => {
                            gx.push(x);
                            gd.push(d);
                            gw.push(w);
                        }
                    }
                }
                let cum: Vec<f64> = gx
                    .iter()
                    .map(|&x| 0.5 * (self.cdf(x - delta) + self.cdf(x + delta)))
                    .collect();
                Measure {
                    repr: Repr::Gridded {
                        grid: gx,
                        density: gd,
                        weights: gw,
                        cum,
                    },
                    hull,
                }
            }
        };
        m.validate()?;
        Ok(m)
    }

    /// Stability margin inf_x lambda^{-2} integral d mu(v) / (v - x)^2 over
    /// the hull, via a 2048-point scan with golden-section refinement.
    /// Returns +inf when the integral diverges everywhere on the hull (e.g.
    /// probing inside an absolutely continuous support) or when lambda = 0.
    pub fn stability_margin(&self, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return f64::INFINITY;
        }
        let g = |x: f64| self.inverse_square_integral(x);
        let (lo, hi) = (self.hull.lo, self.hull.hi);
        if lo == hi {
            return f64::INFINITY;
        }
        const SCAN: usize = 2048;
        let step = (hi - lo) / (SCAN - 1) as f64;
        let mut best = (f64::INFINITY, lo);
        let mut values = Vec::with_capacity(SCAN);
        for k in 0..SCAN {
            let x = lo + step * k as f64;
            let v = g(x);
            values.push(v);
            if v < best.0 {
                best = (v, x);
            }
        }
        if !best.0.is_finite() {
            return f64::INFINITY;
        }
        // Refine around the best probe.
        let k = ((best.1 - lo) / step).round() as usize;
        let a = if k == 0 { lo } else { lo + step * (k - 1) as f64 };
        let b = if k + 1 >= SCAN { hi } else { lo + step * (k + 1) as f64 };
        let refined = golden_min(&g, a, b, 1e-10);
        best.0.min(refined) / (lambda * lambda)
    }

    // ---------------------------------------------------------------------
    // Distribution function and quantiles
    // ---------------------------------------------------------------------

    /// Right-continuous distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Discrete { atoms } => {
                let mut acc = 0.0;
                for &(xi, w) in atoms {
                    if xi <= x {
                        acc += w;
                    } else {
                        break;
                    }
                }
                acc.min(1.0)
            }
            Repr::Gridded { grid, cum, .. } => {
                if x < self.hull.lo {
                    return 0.0;
                }
                if x >= self.hull.hi {
                    return 1.0;
                }
                // Piecewise-linear through (hull.lo, 0), (x_i, F_i), (hull.hi, 1).
                let j = grid.partition_point(|&g| g <= x);
                let (x0, f0) = if j == 0 { (self.hull.lo, 0.0) } else { (grid[j - 1], cum[j - 1]) };
                let (x1, f1) = if j == grid.len() {
                    (self.hull.hi, 1.0)
                } else {
                    (grid[j], cum[j])
                };
                if x1 == x0 {
                    return f1;
                }
                (f0 + (f1 - f0) * (x - x0) / (x1 - x0)).clamp(0.0, 1.0)
            }
        }
    }

    /// Left-continuous generalized inverse of the distribution function:
    /// inf { x : F(x) >= p }. p = 0 returns the lower hull endpoint.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("quantile level must lie in [0, 1], got {p}")));
        }
        match &self.repr {
            Repr::Discrete { atoms } => {
                if p == 0.0 {
                    return Ok(self.hull.lo);
                }
                let mut acc = 0.0;
                for &(xi, w) in atoms {
                    acc += w;
                    if acc >= p - 1e-15 {
                        return Ok(xi);
                    }
                }
                Ok(self.hull.hi)
            }
            Repr::Gridded { grid, cum, .. } => {
                if p == 0.0 {
                    return Ok(self.hull.lo);
                }
                if p >= 1.0 {
                    return Ok(self.hull.hi);
                }
                // Anchors as in cdf(); find the first anchor with F >= p.
                let j = cum.partition_point(|&f| f < p);
                let (x0, f0) = if j == 0 { (self.hull.lo, 0.0) } else { (grid[j - 1], cum[j - 1]) };
                let (x1, f1) = if j == grid.len() {
                    (self.hull.hi, 1.0)
                } else {
                    (grid[j], cum[j])
                };
                if f1 <= f0 {
                    return Ok(x0);
                }
                Ok(x0 + (x1 - x0) * (p - f0) / (f1 - f0))
            }
        }
    }

    /// Deterministic potential: V_i = quantile((i - 1/2) / N), ascending.
    pub fn deterministic_potential(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::Config("potential size must be >= 1".into()));
        }
        (1..=n)
            .map(|i| self.quantile((i as f64 - 0.5) / n as f64))
            .collect()
    }

    // ---------------------------------------------------------------------
    // Serialization
    // ---------------------------------------------------------------------

    pub fn to_json(&self) -> MeasureJson {
        match &self.repr {
            Repr::Discrete { atoms } => MeasureJson::Discrete {
                atoms: atoms.clone(),
                hull: self.hull,
            },
            Repr::Gridded {
                grid,
                density,
                weights,
                cum,
            } => MeasureJson::GriddedDensity {
                grid: grid.clone(),
                density: density.clone(),
                weights: weights.clone(),
                cum: cum.clone(),
                hull: self.hull,
            },
        }
    }

    /// CSV rows of (x, weight) for atoms or (x, density) for grids.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        match &self.repr {
            Repr::Discrete { atoms } => {
                writeln!(out, "x,weight")?;
                for &(x, w) in atoms {
                    writeln!(out, "{x},{w}")?;
                }
            }
            Repr::Gridded { grid, density, .. } => {
                writeln!(out, "x,density")?;
                for (x, d) in grid.iter().zip(density) {
                    writeln!(out, "{x},{d}")?;
                }
            }
        }
        Ok(())
    }
}

impl TryFrom<MeasureJson> for Measure {
    type Error = Error;
    fn try_from(j: MeasureJson) -> Result<Measure> {
        let m = match j {
            MeasureJson::Discrete { atoms, hull } => Measure {
                repr: Repr::Discrete { atoms },
                hull,
            },
            MeasureJson::GriddedDensity {
                grid,
                density,
                weights,
                cum,
                hull,
            } => {
                if grid.len() != density.len() || grid.len() != weights.len() || grid.len() != cum.len() {
                    return Err(Error::InvalidMeasure("grid/density/weights/cum length mismatch".into()));
                }
                Measure {
                    repr: Repr::Gridded {
                        grid,
                        density,
                        weights,
                        cum,
                    },
                    hull,
                }
            }
        };
        m.validate()?;
        Ok(m)
    }
}

/// Serialized form: {kind, atoms | (grid, density, weights, cum), hull}.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeasureJson {
    Discrete {
        atoms: Vec<(f64, f64)>,
        hull: SupportHull,
    },
    GriddedDensity {
        grid: Vec<f64>,
        density: Vec<f64>,
        weights: Vec<f64>,
        cum: Vec<f64>,
        hull: SupportHull,
    },
}

fn default_grid_size() -> usize {
    1024
}

/// Constructor-level measure description used in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureSpec {
    TwoAtom {
        a: f64,
    },
    Uniform {
        #[serde(default = "default_grid_size")]
        grid_size: usize,
    },
    Jacobi {
        a: f64,
        b: f64,
        #[serde(default = "default_grid_size")]
        grid_size: usize,
    },
    Empirical {
        values: Vec<f64>,
    },
    Dirac {
        #[serde(default)]
        at: f64,
    },
}

impl MeasureSpec {
    pub fn build(&self) -> Result<Measure> {
        match self {
            MeasureSpec::TwoAtom { a } => Measure::two_atom(*a),
            MeasureSpec::Uniform { grid_size } => Measure::uniform(*grid_size),
            MeasureSpec::Jacobi { a, b, grid_size } => Measure::jacobi(*a, *b, *grid_size),
            MeasureSpec::Empirical { values } => Measure::empirical(values),
            MeasureSpec::Dirac { at } => Ok(Measure::dirac(*at)),
        }
    }
}

// -------------------------------------------------------------------------
// Free-function forms of the spec operations
// -------------------------------------------------------------------------

pub fn make_two_atom(a: f64) -> Result<Measure> {
    Measure::two_atom(a)
}

pub fn make_jacobi(a: f64, b: f64, grid_size: usize) -> Result<Measure> {
    Measure::jacobi(a, b, grid_size)
}

pub fn empirical(values: &[f64]) -> Result<Measure> {
    Measure::empirical(values)
}

pub fn moment(mu: &Measure, k: usize) -> f64 {
    mu.moment(k)
}

pub fn stieltjes_measure(mu: &Measure, z: Complex64) -> Result<Complex64> {
    mu.stieltjes(z)
}

pub fn scale(mu: &Measure, lambda: f64) -> Result<Measure> {
    mu.scale(lambda)
}

pub fn sparsity_convolve(mu_lambda: &Measure, s: f64, q: f64) -> Result<Measure> {
    mu_lambda.sparsity_convolve(s, q)
}

pub fn stability_margin(mu: &Measure, lambda: f64) -> f64 {
    mu.stability_margin(lambda)
}

// -------------------------------------------------------------------------
// Construction helpers
// -------------------------------------------------------------------------

/// Nodes and weights covering one half of [-1, 1]. `left` selects [-1, 0];
/// `substitute` applies v = -1 + t^2 (left) or v = 1 - t^2 (right) so the
/// Jacobi endpoint singularity becomes polynomial in t.
fn jacobi_half_nodes(n: usize, left: bool, substitute: bool) -> (Vec<f64>, Vec<f64>) {
    let per_panel = 16.min(n.max(1));
    let panels = n.div_ceil(per_panel);
    let base = n / panels;
    let extra = n % panels;
    let mut xs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    let mut lo = 0.0;
    for p in 0..panels {
        let k = base + usize::from(p < extra);
        if k == 0 {
            continue;
        }
        let hi = (p + 1) as f64 / panels as f64;
        let (t, w) = quad::gauss_legendre(k);
        let (t, w) = quad::map_to_interval(&t, &w, lo, hi);
        for (ti, wi) in t.iter().zip(&w) {
            if substitute {
                // t parametrizes the distance from the singular endpoint.
                let (v, jac) = if left {
                    (-1.0 + ti * ti, 2.0 * ti)
                } else {
                    (1.0 - ti * ti, 2.0 * ti)
                };
                xs.push(v);
                ws.push(wi * jac);
            } else {
                let v = if left { -1.0 + ti } else { *ti };
                xs.push(v);
                ws.push(*wi);
            }
        }
        lo = hi;
    }
    if substitute && !left {
        // v = 1 - t^2 runs downward in t; restore ascending order.
        xs.reverse();
        ws.reverse();
    }
    (xs, ws)
}

/// Integral of the unnormalized Jacobi density over [lo, hi] within [-1, 1],
/// substituting at a singular touched endpoint.
fn jacobi_segment(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    const N: usize = 24;
    if lo >= hi {
        return 0.0;
    }
    if lo <= -1.0 && a < 0.0 {
        // v = -1 + t^2 on [0, sqrt(1 + hi)]
        let t1 = (1.0 + hi).sqrt();
        return quad::integrate(
            |t| 2.0 * t.powf(2.0 * a + 1.0) * (2.0 - t * t).powf(b),
            0.0,
            t1,
            N,
        );
    }
    if hi >= 1.0 && b < 0.0 {
        let t1 = (1.0 - lo).sqrt();
        return quad::integrate(
            |t| 2.0 * t.powf(2.0 * b + 1.0) * (2.0 - t * t).powf(a),
            0.0,
            t1,
            N,
        );
    }
    quad::integrate(|v| (1.0 + v).powf(a) * (1.0 - v).powf(b), lo, hi, N)
}

/// Golden-section minimization of g on [a, b] to the given x tolerance.
fn golden_min<F: Fn(f64) -> f64>(g: &F, a: f64, b: f64, xtol: f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    while (b - a).abs() > xtol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = g(d);
        }
    }
    fc.min(fd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn two_atom_examples() {
        let m = Measure::two_atom(1.0).unwrap();
        assert_eq!(m.atoms().unwrap(), &[(-1.0, 0.5), (1.0, 0.5)]);
        assert_eq!(m.hull(), SupportHull { lo: -1.0, hi: 1.0 });
        assert!(close(m.moment(2), 1.0, 1e-15));
        assert!(close(m.moment(3), 0.0, 1e-15));

        let d = Measure::two_atom(0.0).unwrap();
        assert_eq!(d.atoms().unwrap(), &[(0.0, 1.0)]);

        assert!(Measure::two_atom(f64::NAN).is_err());
    }

    #[test]
    fn jacobi_uniform_moments() {
        let m = Measure::jacobi(0.0, 0.0, 128).unwrap();
        assert!(close(m.moment(0), 1.0, 1e-13));
        assert!(close(m.moment(1), 0.0, 1e-13));
        assert!(close(m.moment(2), 1.0 / 3.0, 1e-12));
        assert!(close(m.moment(4), 0.2, 1e-12));
    }

    #[test]
    fn jacobi_quadratic_variance_against_quadrature_oracle() {
        // Independent oracle: plain Simpson on the analytic density at high
        // resolution. For a = b = 1 the normalized density is 3(1-v^2)/4.
        let oracle = {
            let n = 200_001usize;
            let h = 2.0 / (n - 1) as f64;
            let f = |v: f64| 0.75 * (1.0 - v * v) * v * v;
            let mut s = 0.0;
            for i in 0..n {
                let v: f64 = -1.0 + h * i as f64;
                let c = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                s += c * f(v);
            }
            s * h / 3.0
        };
        assert!(close(oracle, 0.2, 1e-12), "oracle sanity: {oracle}");
        let m = Measure::jacobi(1.0, 1.0, 128).unwrap();
        assert!(close(m.variance(), oracle, 1e-12), "variance {}", m.variance());
    }

    #[test]
    fn jacobi_arcsine_singular_exponents() {
        // a = b = -1/2 is the arcsine law: variance 1/2, mass 1.
        let m = Measure::jacobi(-0.5, -0.5, 256).unwrap();
        assert!(close(m.moment(0), 1.0, 1e-12));
        assert!(close(m.variance(), 0.5, 1e-9), "variance {}", m.variance());
        // Distribution function: F(0) = 1/2 by symmetry, F at sin(pi/4 - pi/2)
        // ... spot-check F(x) = 1/2 + asin(x)/pi.
        let x = 0.3f64;
        let want = 0.5 + x.asin() / std::f64::consts::PI;
        assert!(close(m.cdf(x), want, 1e-5), "cdf {} vs {}", m.cdf(x), want);
    }

    #[test]
    fn jacobi_rejects_bad_exponents() {
        assert!(Measure::jacobi(-1.0, 0.0, 128).is_err());
        assert!(Measure::jacobi(0.0, -1.5, 128).is_err());
        assert!(Measure::jacobi(0.0, 0.0, 32).is_err());
    }

    #[test]
    fn jacobi_asymmetric_recentred() {
        let m = Measure::jacobi(2.0, 0.5, 256).unwrap();
        assert!(m.moment(1).abs() < 1e-10);
        assert!(close(m.moment(0), 1.0, 1e-12));
    }

    #[test]
    fn empirical_examples() {
        let m = Measure::empirical(&[0.0]).unwrap();
        assert_eq!(m.atoms().unwrap(), &[(0.0, 1.0)]);

        let m = Measure::empirical(&[-1.0, 1.0]).unwrap();
        let t = Measure::two_atom(1.0).unwrap();
        assert_eq!(m.atoms().unwrap(), t.atoms().unwrap());

        // duplicates accumulate weight
        let m = Measure::empirical(&[2.0, 2.0, 5.0, 2.0]).unwrap();
        assert_eq!(m.atoms().unwrap(), &[(2.0, 0.75), (5.0, 0.25)]);

        assert!(Measure::empirical(&[]).is_err());

        // sample mean matches the measure mean exactly
        let vals = [0.13, 0.77, -0.5, 0.921, -0.333];
        let m = Measure::empirical(&vals).unwrap();
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!(close(m.mean(), mean, 1e-15));
    }

    #[test]
    fn stieltjes_examples() {
        let i = Complex64::new(0.0, 1.0);
        let d = Measure::dirac(0.0);
        assert!((d.stieltjes(i).unwrap() - i).norm() < 1e-15);

        let t = Measure::two_atom(1.0).unwrap();
        let got = t.stieltjes(Complex64::new(0.0, 2.0)).unwrap();
        assert!((got - Complex64::new(0.0, 0.4)).norm() < 1e-15);

        // uniform at z = 10i: closed-form oracle atan(1/10) i
        let u = Measure::uniform(256).unwrap();
        let got = u.stieltjes(Complex64::new(0.0, 10.0)).unwrap();
        let want = Complex64::new(0.0, (0.1f64).atan());
        assert!((got - want).norm() < 1e-12, "got {got}");

        assert!(u.stieltjes(Complex64::new(1.0, 0.0)).is_err());
        assert!(u.stieltjes(Complex64::new(1.0, -0.5)).is_err());
    }

    #[test]
    fn scale_examples() {
        let t = Measure::two_atom(1.0).unwrap();
        let s = t.scale(0.5).unwrap();
        assert_eq!(s.atoms().unwrap(), Measure::two_atom(0.5).unwrap().atoms().unwrap());

        let z = t.scale(0.0).unwrap();
        assert_eq!(z.atoms().unwrap(), &[(0.0, 1.0)]);

        let u = Measure::uniform(128).unwrap();
        let s = u.scale(3.0).unwrap();
        assert!(close(s.variance(), 9.0 * u.variance(), 1e-12));
        assert!(s.scale(-1.0).is_err());
    }

    #[test]
    fn sparsity_convolve_discrete_examples() {
        let t = Measure::two_atom(1.0).unwrap().scale(1.0).unwrap();
        let c = t.sparsity_convolve(1.0, 10.0).unwrap();
        assert_eq!(
            c.atoms().unwrap(),
            &[(-1.1, 0.25), (-0.9, 0.25), (0.9, 0.25), (1.1, 0.25)]
        );
        assert_eq!(c.hull(), SupportHull { lo: -1.1, hi: 1.1 });

        // zero-shift limit leaves the measure unchanged
        let same = t.sparsity_convolve(0.0, 10.0).unwrap();
        assert_eq!(same.atoms().unwrap(), t.atoms().unwrap());
    }

    #[test]
    fn sparsity_convolve_moment_identities() {
        // m2/m3/m4 pushforward identities, exact for discrete measures.
        let vals = [-0.9, -0.4, 0.05, 0.3, 0.95];
        let nu_hat = Measure::empirical(&vals).unwrap();
        let (lambda, s, q) = (0.7, 1.3, 9.0);
        let scaled = nu_hat.scale(lambda).unwrap();
        let c = scaled.sparsity_convolve(s, q).unwrap();
        let (m2, m3, m4) = (nu_hat.moment(2), nu_hat.moment(3), nu_hat.moment(4));
        let want2 = lambda.powi(2) * m2 + s / (q * q);
        let want3 = lambda.powi(3) * m3;
        let want4 = lambda.powi(4) * m4 + 6.0 * s * lambda * lambda / (q * q) * m2 + (s / (q * q)).powi(2);
        assert!(close(c.moment(2), want2, 1e-12));
        assert!(close(c.moment(3), want3, 1e-12));
        assert!(close(c.moment(4), want4, 1e-12));
    }

    #[test]
    fn sparsity_convolve_gridded_keeps_mass_and_moments() {
        let u = Measure::uniform(256).unwrap().scale(0.5).unwrap();
        let c = u.sparsity_convolve(1.0, 10.0).unwrap();
        assert!(close(c.moment(0), 1.0, 1e-12));
        let want2 = 0.25 / 3.0 + 0.01;
        assert!(close(c.moment(2), want2, 1e-10));
        assert_eq!(c.len(), 512);
        // distribution function stays monotone and hits the endpoints
        assert!(close(c.cdf(c.hull().hi), 1.0, 1e-12));
        assert_eq!(c.cdf(c.hull().lo - 1e-9), 0.0);
    }

    #[test]
    fn stability_margin_examples() {
        // Dense-grid minimization oracle, independent of the implementation:
        // direct scan of lambda^{-2} sum w_i (v_i - x)^{-2} at 1e5 points.
        let oracle = |m: &Measure, lambda: f64| {
            let atoms = m.atoms().unwrap();
            let (lo, hi) = (m.hull().lo, m.hull().hi);
            let mut best = f64::INFINITY;
            for k in 0..100_000 {
                let x = lo + (hi - lo) * k as f64 / 99_999.0;
                let v: f64 = atoms.iter().map(|&(a, w)| w / ((a - x) * (a - x))).sum();
                best = best.min(v);
            }
            best / (lambda * lambda)
        };
        let t = Measure::two_atom(1.0).unwrap();
        assert!(close(t.stability_margin(0.5), 4.0, 1e-8));
        assert!(close(t.stability_margin(0.5), oracle(&t, 0.5), 1e-7));
        assert!(close(t.stability_margin(2.0), 0.25, 1e-9));
        assert!(close(t.stability_margin(2.0), oracle(&t, 2.0), 1e-8));

        let u = Measure::uniform(128).unwrap();
        assert!(u.stability_margin(1.0).is_infinite());

        assert!(t.stability_margin(0.0).is_infinite());
    }

    #[test]
    fn cdf_quantile_examples() {
        let u = Measure::uniform(128).unwrap();
        assert!(close(u.quantile(0.25).unwrap(), -0.5, 1e-12));
        assert!(close(u.cdf(0.5), 0.75, 1e-12));

        let t = Measure::two_atom(1.0).unwrap();
        assert_eq!(t.quantile(0.5).unwrap(), -1.0); // left-continuous inverse
        assert_eq!(t.quantile(0.5 + 1e-12).unwrap(), 1.0);
        assert_eq!(t.cdf(-1.0), 0.5);
        assert_eq!(t.cdf(0.99), 0.5);

        let d = Measure::dirac(0.0);
        assert_eq!(d.quantile(0.3).unwrap(), 0.0);
        assert_eq!(d.quantile(1.0).unwrap(), 0.0);
        assert!(d.quantile(1.2).is_err());
        assert!(d.quantile(-0.1).is_err());
    }

    #[test]
    fn quantile_cdf_consistency_on_atoms() {
        let m = Measure::empirical(&[-2.0, -1.0, -1.0, 3.0]).unwrap();
        for p in [0.1, 0.25, 0.5, 0.75, 0.9, 1.0] {
            let x = m.quantile(p).unwrap();
            assert!(m.cdf(x) >= p - 1e-12);
        }
    }

    #[test]
    fn deterministic_potential_examples() {
        let u = Measure::uniform(128).unwrap();
        let v = u.deterministic_potential(2).unwrap();
        assert!(close(v[0], -0.5, 1e-12) && close(v[1], 0.5, 1e-12));

        let t = Measure::two_atom(1.0).unwrap();
        assert_eq!(t.deterministic_potential(4).unwrap(), vec![-1.0, -1.0, 1.0, 1.0]);

        // empirical mean of the potential tracks the measure mean at O(1/N)
        let j = Measure::jacobi(1.0, 0.3, 256).unwrap();
        let n = 400;
        let v = j.deterministic_potential(n).unwrap();
        let mean = v.iter().sum::<f64>() / n as f64;
        assert!((mean - j.mean()).abs() < 3.0 / n as f64, "mean {mean}");
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn json_round_trip() {
        let m = Measure::jacobi(0.5, 1.5, 128).unwrap().scale(0.8).unwrap();
        let s = serde_json::to_string(&m.to_json()).unwrap();
        let back: MeasureJson = serde_json::from_str(&s).unwrap();
        let m2 = Measure::try_from(back).unwrap();
        assert_eq!(m.len(), m2.len());
        assert!(close(m.moment(2), m2.moment(2), 1e-15));
        assert!(close(m.cdf(0.1), m2.cdf(0.1), 1e-15));

        let d = Measure::two_atom(1.0).unwrap();
        let s = serde_json::to_string(&d.to_json()).unwrap();
        assert!(s.contains("\"kind\":\"discrete\""));
        let back = Measure::try_from(serde_json::from_str::<MeasureJson>(&s).unwrap()).unwrap();
        assert_eq!(back.atoms().unwrap(), d.atoms().unwrap());
    }

    #[test]
    fn csv_export_shapes() {
        let mut buf = Vec::new();
        Measure::two_atom(1.0).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,weight\n"));
        assert_eq!(text.lines().count(), 3);

        let mut buf = Vec::new();
        Measure::uniform(64).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,density\n"));
        assert_eq!(text.lines().count(), 65);
    }
}
