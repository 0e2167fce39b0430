//! One-sample goodness-of-fit statistics and moment helpers for the
//! distributional gates.

use crate::{Error, Result};
use statrs::distribution::{ContinuousCDF, Normal};

/// Minimum sample size accepted by the one-sample statistics.
pub const MIN_SAMPLES: usize = 20;

/// One-sample Kolmogorov-Smirnov statistic against a reference CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    let sorted = sorted_copy(samples)?;
    let m = sorted.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x).clamp(0.0, 1.0);
        let hi = (i + 1) as f64 / m - f;
        let lo = f - i as f64 / m;
        sup = sup.max(hi).max(lo);
    }
    Ok(sup)
}

/// One-sample Anderson-Darling statistic A^2 against a reference CDF.
pub fn ad_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    let sorted = sorted_copy(samples)?;
    let m = sorted.len();
    let mf = m as f64;
    let mut acc = 0.0;
    for i in 0..m {
        let f_lo = cdf(sorted[i]).clamp(1e-300, 1.0 - 1e-16);
        let f_hi = cdf(sorted[m - 1 - i]).clamp(0.0, 1.0 - 1e-300).min(1.0 - 1e-300);
        acc += (2.0 * i as f64 + 1.0) * (f_lo.ln() + (1.0 - f_hi).ln());
    }
    Ok(-mf - acc / mf)
}

fn sorted_copy(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Config(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(sorted)
}

/// Normal(mean, sd) distribution function as a closure.
pub fn normal_cdf(mean: f64, sd: f64) -> impl Fn(f64) -> f64 {
    let dist = Normal::new(mean, sd.max(1e-300)).expect("valid normal parameters");
    move |x| dist.cdf(x)
}

/// Sample mean and unbiased variance.
pub fn mean_and_variance(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Median of a sample (average of the central pair for even sizes).
pub fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len();
    if m == 0 {
        return f64::NAN;
    }
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

/// Distribution-free KS critical value c / sqrt(M); c = 1.36 at 5%,
/// c = 1.63 at 1%.
pub fn ks_critical(m: usize, level_pct: f64) -> f64 {
    let c = if level_pct <= 1.0 { 1.63 } else { 1.36 };
    c / (m as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn ks_of_true_distribution_is_small() {
        // uniform draws against the uniform CDF: KS <= 1.36/sqrt(M) at 95%
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let m = 5000;
        let samples: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        let ks = ks_statistic(&samples, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(ks <= ks_critical(m, 5.0), "ks = {ks}");
    }

    #[test]
    fn ks_of_constant_sample_is_large() {
        let samples = vec![0.5; 50];
        let ks = ks_statistic(&samples, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(ks >= 0.5, "ks = {ks}");
    }

    #[test]
    fn ks_detects_gross_shift() {
        // N(5, 1) draws against the standard normal: KS near 1.
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..200)
            .map(|_| 5.0 + rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let ks = ks_statistic(&samples, normal_cdf(0.0, 1.0)).unwrap();
        assert!(ks > 0.95, "ks = {ks}");
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(ks_statistic(&[0.1; 19], |x| x).is_err());
        assert!(ad_statistic(&[0.1; 19], |x| x).is_err());
    }

    #[test]
    fn ad_statistic_behaves() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let samples: Vec<f64> = (0..2000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let good = ad_statistic(&samples, normal_cdf(0.0, 1.0)).unwrap();
        assert!(good < 2.5, "A^2 = {good}"); // 1% critical is ~3.9
        let shifted = ad_statistic(&samples, normal_cdf(1.0, 1.0)).unwrap();
        assert!(shifted > 100.0, "A^2 = {shifted}");
    }

    #[test]
    fn normal_cdf_reference_values() {
        let phi = normal_cdf(0.0, 1.0);
        assert!((phi(0.0) - 0.5).abs() < 1e-12);
        assert!((phi(1.959963984540054) - 0.975).abs() < 1e-9);
    }

    #[test]
    fn median_and_moments() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, v) = mean_and_variance(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
    }
}
