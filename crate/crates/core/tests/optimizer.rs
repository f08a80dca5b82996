use conport_core::estimation::{Estimator, MomentEstimate};
use conport_core::optimizer::qcqp::weight_variance;
use conport_core::optimizer::qp::{solve_qp, QpProblem};
use conport_core::optimizer::{
    frontier, grid_portfolio, max_return, min_variance, random_portfolios, Feasibility,
    Provenance,
};
use conport_core::randgen::{dj30_like_moments, SeededSource};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn random_spd(n: usize, rng: &mut conport_core::randgen::NormalRng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.05
}

/// Global minimum by enumerating every lower/upper/free pattern and solving
/// the equality-constrained system on the free block.
fn brute_force(q: &DMatrix<f64>, a: &DMatrix<f64>, b: &DVector<f64>, cap: f64) -> Option<(f64, DVector<f64>)> {
    let n = q.nrows();
    let m = a.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut pattern = vec![0u8; n];
        let mut c = code;
        for p in pattern.iter_mut() {
            *p = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 2).collect();
        let mut x = DVector::zeros(n);
        for i in 0..n {
            if pattern[i] == 1 {
                x[i] = cap;
            }
        }
        let rhs_b = b - a * &x;
        let nf = free.len();
        let dim = nf + m;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for (ii, &i) in free.iter().enumerate() {
            for (jj, &j) in free.iter().enumerate() {
                kkt[(ii, jj)] = q[(i, j)];
            }
            let mut qx = 0.0;
            for j in 0..n {
                qx += q[(i, j)] * x[j];
            }
            rhs[ii] = -qx;
            for r in 0..m {
                kkt[(ii, nf + r)] = a[(r, i)];
                kkt[(nf + r, ii)] = a[(r, i)];
            }
        }
        for r in 0..m {
            rhs[nf + r] = rhs_b[r];
        }
        let svd = kkt.svd(true, true);
        let Ok(sol) = svd.solve(&rhs, 1e-12) else { continue };
        for (ii, &i) in free.iter().enumerate() {
            x[i] = sol[ii];
        }
        let feasible = (a * &x - b).amax() < 1e-9 && x.iter().all(|v| *v >= -1e-9 && *v <= cap + 1e-9);
        if !feasible {
            continue;
        }
        let obj = 0.5 * (q * &x).dot(&x);
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, x));
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn active_set_matches_enumeration(seed in 0u64..10_000, n in 2usize..7, with_return in any::<bool>()) {
        let mut rng = SeededSource::new(seed, 17).rng();
        let q = random_spd(n, &mut rng);
        let mu = DVector::from_fn(n, |_, _| rng.uniform());
        let cap = (1.0 / n as f64) + rng.uniform() * (1.0 - 1.0 / n as f64);
        let m = MomentEstimate::new(mu.clone(), q.clone(), Estimator::Sample, 10).unwrap();
        let lo_p = min_variance(&m, cap).unwrap();
        let hi_p = max_return(&m, cap).unwrap();
        let t = rng.uniform();
        let start = &lo_p.weights * (1.0 - t) + &hi_p.weights * t;
        let (a, b) = if with_return {
            let mut a = DMatrix::from_element(2, n, 1.0);
            a.row_mut(1).copy_from(&mu.transpose());
            (a, DVector::from_vec(vec![1.0, mu.dot(&start)]))
        } else {
            (DMatrix::from_element(1, n, 1.0), DVector::from_vec(vec![1.0]))
        };
        let c = DVector::zeros(n);
        let lo = DVector::zeros(n);
        let hi = DVector::from_element(n, cap);
        let problem = QpProblem { q: &q, c: &c, a: &a, b: &b, lower: &lo, upper: &hi };
        let sol = solve_qp(&problem, &start).unwrap();
        let (best, x_best) = brute_force(&q, &a, &b, cap).unwrap();
        let obj = 0.5 * (&q * &sol.x).dot(&sol.x);
        prop_assert!((obj - best).abs() <= 1e-10 * (1.0 + best.abs()), "{} vs {}", obj, best);
        prop_assert!((&sol.x - &x_best).amax() < 1e-6);
    }

    #[test]
    fn closed_form_when_box_feasible(seed in 0u64..10_000, n in 2usize..9) {
        let mut rng = SeededSource::new(seed, 5).rng();
        let q = random_spd(n, &mut rng);
        let ones = DVector::from_element(n, 1.0);
        let inv = q.clone().try_inverse().unwrap();
        let raw = &inv * &ones;
        let closed = &raw / ones.dot(&raw);
        let m = MomentEstimate::new(DVector::zeros(n), q, Estimator::Sample, 10).unwrap();
        let p = min_variance(&m, 1.0).unwrap();
        if closed.iter().all(|w| *w >= 0.0) {
            prop_assert!((&p.weights - &closed).amax() < 1e-8);
        }
        prop_assert!(Feasibility::check(&p.weights, 1.0, None).is_feasible());
    }

    #[test]
    fn sampler_output_is_feasible(seed in 0u64..1000, frac in 0.05f64..0.95) {
        let (mu, sigma) = dj30_like_moments(8, SeededSource::new(seed, 1));
        let m = MomentEstimate::new(mu.clone(), sigma, Estimator::Sample, 100).unwrap();
        let cap = 0.33;
        let f = frontier(&m, cap, 2).unwrap();
        let target = f.min_var().expected_return + frac * (f.max_ret().expected_return - f.min_var().expected_return);
        let ps = random_portfolios(&m, target, cap, 50, SeededSource::new(seed, 2)).unwrap();
        for p in ps {
            let sum: f64 = p.weights.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-8);
            prop_assert!(p.weights.iter().all(|w| *w >= -1e-10 && *w <= cap + 1e-10));
            prop_assert!((p.weights.dot(&mu) - target).abs() < 1e-8);
        }
    }
}

fn dj30(n: usize, seed: u64) -> MomentEstimate {
    let (mu, sigma) = dj30_like_moments(n, SeededSource::new(seed, 0));
    MomentEstimate::new(mu, sigma, Estimator::Sample, 312).unwrap()
}

#[test]
fn eleven_level_frontier_is_monotone() {
    let m = dj30(30, 4);
    let f = frontier(&m, 0.33, 11).unwrap();
    assert_eq!(f.len(), 11);
    for w in f.points.windows(2) {
        assert!(w[1].portfolio.expected_return > w[0].portfolio.expected_return);
        assert!(w[1].portfolio.stdev >= w[0].portfolio.stdev - 1e-12);
    }
    for p in &f.points {
        assert!(Feasibility::check(&p.portfolio.weights, 0.33, None).is_feasible());
    }
}

#[test]
fn grid_portfolio_on_frontier_volatility() {
    let m = dj30(10, 9);
    let f = frontier(&m, 0.33, 5).unwrap();
    let point = &f.points[2].portfolio;
    let randoms = random_portfolios(&m, point.expected_return, 0.33, 20, SeededSource::new(2, 2)).unwrap();
    let start = randoms
        .iter()
        .min_by(|a, b| a.stdev.partial_cmp(&b.stdev).unwrap())
        .unwrap();
    let out = grid_portfolio(&m, point.expected_return, point.stdev, 0.33, start);
    assert_eq!(out.provenance, Provenance::Grid, "{out:?}");
    assert!((out.stdev - point.stdev).abs() < 1e-6, "{} vs {}", out.stdev, point.stdev);
}

#[test]
fn grid_portfolio_below_frontier_falls_back() {
    let m = dj30(10, 9);
    let f = frontier(&m, 0.33, 5).unwrap();
    let point = &f.points[2].portfolio;
    let randoms = random_portfolios(&m, point.expected_return, 0.33, 5, SeededSource::new(2, 2)).unwrap();
    let out = grid_portfolio(&m, point.expected_return, 0.9 * point.stdev, 0.33, &randoms[0]);
    assert_eq!(out.provenance, Provenance::Fallback);
    assert_eq!(out.weights, randoms[0].weights);
}

#[test]
fn grid_portfolio_improves_on_start_at_its_own_volatility() {
    let m = dj30(12, 21);
    let f = frontier(&m, 0.33, 5).unwrap();
    let target = f.points[1].portfolio.expected_return;
    let randoms = random_portfolios(&m, target, 0.33, 30, SeededSource::new(8, 1)).unwrap();
    let mut improved = 0;
    for start in &randoms {
        let out = grid_portfolio(&m, target, start.stdev, 0.33, start);
        assert!(weight_variance(&out.weights) <= weight_variance(&start.weights) + 1e-15);
        assert!(Feasibility::check(&out.weights, 0.33, Some((&m.mean, target))).is_feasible());
        if out.provenance == Provenance::Grid {
            improved += 1;
            assert!((out.stdev - start.stdev).abs() < 1e-6 * start.stdev);
        }
    }
    assert!(improved >= 25, "only {improved} of 30 solved");
}

#[test]
fn solver_is_deterministic() {
    let m = dj30(30, 4);
    let a = frontier(&m, 0.33, 11).unwrap();
    let b = frontier(&m, 0.33, 11).unwrap();
    assert_eq!(a, b);
}

