use conport_core::estimation::{ledoit_wolf_shrinkage, sample_moments_of};
use conport_core::randgen::SeededSource;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn panel(t: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = SeededSource::new(seed, 9).rng();
    let market: Vec<f64> = (0..t).map(|_| rng.standard_normal() * 0.02).collect();
    DMatrix::from_fn(t, n, |r, c| {
        0.001 * c as f64 + (0.5 + 0.1 * c as f64) * market[r] + 0.015 * rng.standard_normal()
    })
}

/// Element-wise shrinkage intensity from the single-index estimator's
/// asymptotic quantities, written with scalar loops.
fn lw_oracle(x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let (t, n) = x.shape();
    let tf = t as f64;
    let mean: Vec<f64> = (0..n).map(|j| (0..t).map(|r| x[(r, j)]).sum::<f64>() / tf).collect();
    let y = DMatrix::from_fn(t, n, |r, j| x[(r, j)] - mean[j]);
    let m: Vec<f64> = (0..t).map(|r| (0..n).map(|j| y[(r, j)]).sum::<f64>() / n as f64).collect();
    let s00 = m.iter().map(|v| v * v).sum::<f64>() / tf;
    let s0: Vec<f64> = (0..n).map(|i| (0..t).map(|r| y[(r, i)] * m[r]).sum::<f64>() / tf).collect();
    let s = DMatrix::from_fn(n, n, |i, j| (0..t).map(|r| y[(r, i)] * y[(r, j)]).sum::<f64>() / tf);
    let f = DMatrix::from_fn(n, n, |i, j| if i == j { s[(i, i)] } else { s0[i] * s0[j] / s00 });
    let mut pi = 0.0;
    let mut rho = 0.0;
    let mut gamma = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = (0..t)
                .map(|r| (y[(r, i)] * y[(r, j)] - s[(i, j)]).powi(2))
                .sum::<f64>()
                / tf;
            pi += pij;
            gamma += (f[(i, j)] - s[(i, j)]).powi(2);
            if i == j {
                rho += pij;
            } else {
                let rij = (0..t)
                    .map(|r| {
                        let (yi, yj, y0) = (y[(r, i)], y[(r, j)], m[r]);
                        (s0[j] * s00 * yi * y0 + s0[i] * s00 * yj * y0 - s0[i] * s0[j] * y0 * y0) * yi * yj
                            / (s00 * s00)
                    })
                    .sum::<f64>()
                    / tf
                    - f[(i, j)] * s[(i, j)];
                rho += rij;
            }
        }
    }
    let delta = ((pi - rho) / gamma / tf).clamp(0.0, 1.0);
    (s, f, delta)
}

#[test]
fn ledoit_wolf_matches_elementwise_oracle() {
    for (t, n, seed) in [(52, 5, 1), (60, 12, 2), (312, 8, 3), (40, 30, 4)] {
        let x = panel(t, n, seed);
        let got = ledoit_wolf_shrinkage(&x).unwrap();
        let (s, f, delta) = lw_oracle(&x);
        assert!((&got.sample - &s).amax() < 1e-15, "sample mismatch");
        assert!((&got.target - &f).amax() < 1e-15, "target mismatch");
        assert!((got.intensity - delta).abs() < 1e-10, "{} vs {delta} at T={t} N={n}", got.intensity);
        assert!(got.intensity > 0.0 && got.intensity < 1.0);
    }
}

#[test]
fn two_pass_covariance_matches_loop() {
    let x = panel(80, 6, 7);
    let (mean, cov) = sample_moments_of(&x).unwrap();
    let (s, _, _) = lw_oracle(&x);
    assert!((&cov - &s).amax() < 1e-16);
    for j in 0..6 {
        let m = x.column(j).iter().sum::<f64>() / 80.0;
        assert!((mean[j] - m).abs() < 1e-16);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn estimators_are_permutation_equivariant(seed in 0u64..1000, shift in 1usize..5) {
        let x = panel(60, 6, seed);
        let perm: Vec<usize> = (0..6).map(|i| (i + shift) % 6).collect();
        let xp = DMatrix::from_fn(60, 6, |r, c| x[(r, perm[c])]);
        let (m, s) = sample_moments_of(&x).unwrap();
        let (mp, sp) = sample_moments_of(&xp).unwrap();
        let a = ledoit_wolf_shrinkage(&x).unwrap();
        let b = ledoit_wolf_shrinkage(&xp).unwrap();
        prop_assert!((a.intensity - b.intensity).abs() < 1e-12);
        for i in 0..6 {
            prop_assert!((mp[i] - m[perm[i]]).abs() < 1e-15);
            for j in 0..6 {
                prop_assert!((sp[(i, j)] - s[(perm[i], perm[j])]).abs() < 1e-15);
                prop_assert!((b.covariance()[(i, j)] - a.covariance()[(perm[i], perm[j])]).abs() < 1e-14);
            }
        }
    }
}
