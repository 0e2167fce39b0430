//! Ensemble-level statistical invariants: cumulant fidelity over large entry
//! samples, determinism across worker counts, eigenvector orthonormality,
//! Ward identities at random points, and the disabled-Wigner self-test.

use dscl_core::dsclaw::ModelParams;
use dscl_core::ensemble::{
    assemble_and_eig, green_entry, green_trace, sample_ensemble, sample_w, EntryLaw, EntryLawKind,
    PotentialMode, RngStream, SampleParams, StreamLane,
};
use dscl_core::measure::Measure;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};

#[test]
fn cumulant_fidelity_over_ten_million_draws() {
    // Monte Carlo moments of the entry distribution against the exact values
    // 1/N, 0, and (law factor)/(N q^2), each within 4 standard errors.
    let n = 4500;
    let q = 20.0;
    for (kind, fourth_factor) in [
        (EntryLawKind::BernoulliRademacher, 1.0),
        (EntryLawKind::BernoulliGaussian, 3.0),
    ] {
        let law = EntryLaw::new(kind, n, q).unwrap();
        let w = sample_w(n, q, &law, &RngStream::replica(99, 0, StreamLane::Matrix)).unwrap();
        let mut count = 0usize;
        let (mut s1, mut s2, mut s3, mut s4, mut s6, mut s8) = (0f64, 0f64, 0f64, 0f64, 0f64, 0f64);
        for i in 0..n {
            for j in (i + 1)..n {
                let x = w[(i, j)];
                let x2 = x * x;
                s1 += x;
                s2 += x2;
                s3 += x * x2;
                s4 += x2 * x2;
                s6 += x2 * x2 * x2;
                s8 += x2 * x2 * x2 * x2;
                count += 1;
            }
        }
        let c = count as f64;
        assert!(count >= 10_000_000, "draw budget: {count}");
        let nf = n as f64;
        let (m1, m2, m3, m4) = (s1 / c, s2 / c, s3 / c, s4 / c);
        // standard errors from the sample itself
        let se1 = (m2 / c).sqrt();
        let se2 = ((m4 - m2 * m2) / c).sqrt();
        let se3 = ((s6 / c - m3 * m3) / c).sqrt();
        let se4 = ((s8 / c - m4 * m4) / c).sqrt();
        assert!(m1.abs() <= 4.0 * se1, "{kind:?} mean {m1} vs se {se1}");
        assert!((m2 - 1.0 / nf).abs() <= 4.0 * se2, "{kind:?} var {m2}");
        assert!(m3.abs() <= 4.0 * se3, "{kind:?} third {m3}");
        let want4 = fourth_factor / (nf * q * q);
        assert!((m4 - want4).abs() <= 4.0 * se4, "{kind:?} fourth {m4} vs {want4}");
    }
}

#[test]
fn byte_identical_across_worker_counts() {
    let nu = Measure::uniform(128).unwrap();
    let params = ModelParams::new(0.5, 5.0, 1.0, 120).unwrap();
    let law = EntryLaw::new(EntryLawKind::BernoulliRademacher, 120, 5.0).unwrap();
    let draw = || {
        sample_ensemble(&nu, &params, &law, PotentialMode::Random, 4242, 3, false).unwrap()
    };
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = pool1.install(draw);
    let b = pool4.install(draw);
    let c = draw();
    assert_eq!(a.mu, b.mu);
    assert_eq!(a.mu, c.mu);
    assert_eq!(a.v, b.v);
    // and the bytes agree after persistence
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    a.write_to_dir(d1.path(), "s").unwrap();
    b.write_to_dir(d2.path(), "s").unwrap();
    assert_eq!(
        std::fs::read(d1.path().join("s_eigenvalues.csv")).unwrap(),
        std::fs::read(d2.path().join("s_eigenvalues.csv")).unwrap()
    );
}

#[test]
fn eigenvector_orthonormality() {
    let n = 300;
    let q = 6.0;
    let nu = Measure::two_atom(1.0).unwrap();
    let params = ModelParams::new(0.7, q, 1.0, n).unwrap();
    let law = EntryLaw::new(EntryLawKind::BernoulliGaussian, n, q).unwrap();
    let r = sample_ensemble(&nu, &params, &law, PotentialMode::Deterministic, 17, 0, true).unwrap();
    let u = r.vectors.as_ref().unwrap();
    let gram = u.transpose() * u;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - want).abs());
        }
    }
    assert!(worst <= 1e-9, "||U^T U - I||_max = {worst}");
}

#[test]
fn ward_identity_at_twenty_random_points() {
    let n = 150;
    let q = 5.0;
    let nu = Measure::uniform(128).unwrap();
    let params = ModelParams::new(0.5, q, 1.0, n).unwrap();
    let law = EntryLaw::new(EntryLawKind::BernoulliRademacher, n, q).unwrap();
    let r = sample_ensemble(&nu, &params, &law, PotentialMode::Deterministic, 23, 1, true).unwrap();
    let u = r.vectors.as_ref().unwrap();
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(55);
    for _ in 0..20 {
        let i = rng.gen_range(0..n);
        let z = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(0.01..1.0));
        let lhs: f64 = (0..n).map(|j| green_entry(&r.mu, u, z, i, j).norm_sqr()).sum();
        let rhs = green_entry(&r.mu, u, z, i, i).im / z.im;
        assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()), "ward at i={i}, z={z}");
    }
}

#[test]
fn disabled_wigner_self_test() {
    // W = 0: the resolvent is exactly diagonal with entries 1/(lambda V_i - z),
    // so the harness quantities reduce to closed forms.
    let n = 60;
    let lambda = 0.8;
    let v = Measure::uniform(128).unwrap().deterministic_potential(n).unwrap();
    let w = DMatrix::<f64>::zeros(n, n);
    let params = SampleParams {
        n,
        q: 1.0,
        lambda,
        law: EntryLawKind::BernoulliRademacher,
        p: 1.0 / n as f64,
        dilution_exponent: 0.0,
        stream: 0,
    };
    let r = assemble_and_eig(&w, &v, lambda, true, 0, params).unwrap();
    // spectral norm equals lambda max |V_i| exactly
    let want_norm = v.iter().map(|x| x.abs()).fold(0.0, f64::max) * lambda;
    assert!((r.spectral_norm() - want_norm).abs() < 1e-12);

    let u = r.vectors.as_ref().unwrap();
    let z = Complex64::new(0.3, 0.4);
    // <G> equals the average of 1/(lambda V_i - z) exactly
    let g = green_trace(&r.mu, z).unwrap();
    let want: Complex64 = v
        .iter()
        .map(|&vi| (Complex64::new(lambda * vi, 0.0) - z).inv())
        .sum::<Complex64>()
        / n as f64;
    assert!((g - want).norm() < 1e-12);
    // entrywise: G_ij = delta_ij / (lambda V_i - z) up to eigensolver roundoff
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
    for _ in 0..40 {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let gij = green_entry(&r.mu, u, z, i, j);
        let want = if i == j {
            (Complex64::new(lambda * v[i], 0.0) - z).inv()
        } else {
            Complex64::default()
        };
        assert!((gij - want).norm() < 1e-9, "G[{i},{j}]");
    }
}
