//! Ex-post efficient-set calculations: standard and active-set constants,
//! the β constants of a forecast covariance structure, ex-post moments,
//! the closed-form (Method 0) and simulated (Method 1) ex-post frontiers,
//! the parametric consistency test and normal CVaR.

use nalgebra::{DMatrix, DVector};

use crate::density::{berkowitz, BerkowitzOutcome};
use crate::error::{Error, Result};
use crate::estimation::MomentEstimate;
use crate::normal;
use crate::optimizer::qp::{solve_qp, QpProblem};
use crate::optimizer::{binding_bounds, check_cap, Frontier};
use crate::randgen::{cholesky_lower, SeededSource};

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    BudgetOnly,
    /// Active rows of `A'w ≥ b`, one column of `a` per row.
    Active { a: DMatrix<f64>, b: DVector<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficientSetConstants {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub w0: DVector<f64>,
    pub d0: DMatrix<f64>,
    /// Number of active constraint rows (1 for the budget alone).
    pub active: usize,
    pub variant: ConstraintSet,
}

impl EfficientSetConstants {
    pub fn w1(&self, mu: &DVector<f64>) -> DVector<f64> {
        &self.d0 * mu
    }

    pub fn assets(&self) -> usize {
        self.w0.len()
    }
}

fn spd_inverse(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.inverse())
}

fn symmetrise(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Standard constants for the budget row alone, or the tilde constants for
/// a set of active constraints treated as equalities.
pub fn standard_constants(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    active_set: Option<(&DMatrix<f64>, &DVector<f64>)>,
) -> Result<EfficientSetConstants> {
    let n = mu.len();
    if sigma.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: sigma.nrows(),
        });
    }
    let inv = spd_inverse(sigma)?;
    let (a, b, variant) = match active_set {
        None => (
            DMatrix::from_element(n, 1, 1.0),
            DVector::from_element(1, 1.0),
            ConstraintSet::BudgetOnly,
        ),
        Some((a, b)) => {
            if a.nrows() != n || a.ncols() != b.len() {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: a.nrows(),
                });
            }
            (
                a.clone(),
                b.clone(),
                ConstraintSet::Active {
                    a: a.clone(),
                    b: b.clone(),
                },
            )
        }
    };
    let inv_a = &inv * &a;
    let gram = symmetrise(a.transpose() * &inv_a);
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if a.ncols() == 0 || !(lo > 1e-12 * hi.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient);
    }
    let gram_inv = gram.cholesky().ok_or(Error::RankDeficient)?.inverse();
    let w0 = &inv_a * (&gram_inv * &b);
    let d0 = symmetrise(&inv - &inv_a * &gram_inv * inv_a.transpose());
    let alpha0 = mu.dot(&w0);
    let alpha1 = (&d0 * mu).dot(mu).max(0.0);
    let alpha2 = b.dot(&(&gram_inv * &b));
    Ok(EfficientSetConstants {
        alpha0,
        alpha1,
        alpha2,
        w0,
        d0,
        active: a.ncols(),
        variant,
    })
}

/// Joint covariance of realised returns R and forecasts F, plus the
/// forecast bias δ.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCovarianceSpec {
    pub sigma_rr: DMatrix<f64>,
    pub sigma_rf: DMatrix<f64>,
    pub sigma_ff: DMatrix<f64>,
    pub delta: DVector<f64>,
}

impl ForecastCovarianceSpec {
    /// Σ_RF = ρ√κ Σ, Σ_FF = κ Σ, δ = 0.
    pub fn exemplar(sigma: &DMatrix<f64>, kappa: f64, rho: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!(
                "exemplar needs κ > 0 and ρ in [-1, 1] (got {kappa}, {rho})"
            )));
        }
        Ok(Self {
            sigma_rr: sigma.clone(),
            sigma_rf: sigma * (rho * kappa.sqrt()),
            sigma_ff: sigma * kappa,
            delta: DVector::zeros(sigma.nrows()),
        })
    }

    /// Independent forecasts with covariance κ Σ.
    pub fn independent(sigma: &DMatrix<f64>, kappa: f64) -> Result<Self> {
        Self::exemplar(sigma, kappa, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaConstants {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
}

pub fn beta_constants(
    constants: &EfficientSetConstants,
    spec: &ForecastCovarianceSpec,
    mu: &DVector<f64>,
) -> Result<BetaConstants> {
    let n = constants.assets();
    let square = |m: &DMatrix<f64>| m.shape() == (n, n);
    if !(square(&spec.sigma_rr) && square(&spec.sigma_rf) && square(&spec.sigma_ff))
        || spec.delta.len() != n
        || mu.len() != n
    {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: mu.len(),
        });
    }
    let d0 = &constants.d0;
    let sigma_fr = spec.sigma_rf.transpose();
    let d0_mu = d0 * mu;
    let d0_delta = d0 * &spec.delta;
    let d0_rf = d0 * &spec.sigma_rf;
    let beta0 = d0_rf.trace() + mu.dot(&d0_delta);
    let beta1 = d0_mu.dot(&(&sigma_fr * &constants.w0));
    let traces = (&d0_rf * &d0_rf).trace() + (d0 * &spec.sigma_ff * d0 * &spec.sigma_rr).trace();
    let beta2 = traces
        + d0_mu.dot(&(&spec.sigma_ff * &d0_mu))
        + d0_delta.dot(&(&spec.sigma_rr * &d0_delta))
        + 2.0 * d0_delta.dot(&(&spec.sigma_rr * &d0_mu))
        + 2.0 * d0_mu.dot(&(&sigma_fr * (d0 * (mu + &spec.delta))));
    Ok(BetaConstants {
        beta0,
        beta1,
        beta2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ClosedForm,
    Method0,
    Method1 { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExPostPoint {
    pub theta: f64,
    pub mean: f64,
    pub variance: f64,
    /// Ex-ante moments of the same frontier point.
    pub ex_ante_mean: f64,
    pub ex_ante_variance: f64,
    pub method: Method,
}

impl ExPostPoint {
    pub fn stdev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

pub fn expost_moments(constants: &EfficientSetConstants, betas: &BetaConstants, theta: f64) -> Result<ExPostPoint> {
    if !(theta >= 0.0) {
        return Err(Error::InvalidParameter(format!("risk appetite {theta} must be non-negative")));
    }
    let EfficientSetConstants {
        alpha0,
        alpha1,
        alpha2,
        ..
    } = *constants;
    Ok(ExPostPoint {
        theta,
        mean: alpha0 + theta * alpha1 + theta * betas.beta0,
        variance: alpha2 + theta * theta * alpha1 + 2.0 * theta * betas.beta1 + theta * theta * betas.beta2,
        ex_ante_mean: alpha0 + theta * alpha1,
        ex_ante_variance: alpha2 + theta * theta * alpha1,
        method: Method::ClosedForm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastMode {
    /// Forecasts are sample means of M IID observations.
    Iid { m: usize },
    /// Forecast covariance equal to the return covariance.
    Predictive,
}

/// Budget row plus the binding bounds of `weights`, written as active rows
/// of `A'w ≥ b`: `w_i ≥ 0` and `−w_i ≥ −U`. When every asset sits at a
/// bound the last bound row is dropped, since it is implied by the others.
pub fn active_constraints(weights: &DVector<f64>, cap: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = weights.len();
    let (lower, upper) = binding_bounds(weights, cap);
    let mut cols: Vec<(usize, f64, f64)> = lower.iter().map(|&i| (i, 1.0, 0.0)).collect();
    cols.extend(upper.iter().map(|&i| (i, -1.0, -cap)));
    cols.sort_by_key(|c| c.0);
    if cols.len() >= n {
        cols.truncate(n - 1);
    }
    let mut a = DMatrix::zeros(n, cols.len() + 1);
    let mut b = DVector::zeros(cols.len() + 1);
    a.column_mut(0).fill(1.0);
    b[0] = 1.0;
    for (j, &(i, sign, rhs)) in cols.iter().enumerate() {
        a[(i, j + 1)] = sign;
        b[j + 1] = rhs;
    }
    (a, b)
}

/// Method 0 for one ex-ante efficient portfolio: treat its active
/// constraints as equalities, recover θ from the ex-ante variance and
/// inflate the variance for forecast error.
pub fn method0_point(
    moments: &MomentEstimate,
    cap: f64,
    weights: &DVector<f64>,
    mode: ForecastMode,
) -> Result<ExPostPoint> {
    let n = moments.assets();
    let (a, b) = active_constraints(weights, cap);
    let c = standard_constants(&moments.mean, &moments.covariance, Some((&a, &b)))?;
    let var_p = (&moments.covariance * weights).dot(weights);
    let mean_p = moments.mean.dot(weights);
    let excess = var_p - c.alpha2;
    let scale = 1e-10 * var_p.abs().max(c.alpha2.abs());
    let theta = if excess.abs() <= scale {
        0.0
    } else if excess < 0.0 || c.alpha1 <= 1e-14 * excess.max(f64::MIN_POSITIVE) {
        return Err(Error::ThetaUnrecoverable);
    } else {
        (excess / c.alpha1).sqrt()
    };
    let free = (n - c.active) as f64;
    let inflation = match mode {
        ForecastMode::Iid { m } => free + c.alpha1 / m as f64,
        ForecastMode::Predictive => free + c.alpha1,
    };
    Ok(ExPostPoint {
        theta,
        mean: mean_p,
        variance: var_p + theta * theta * inflation,
        ex_ante_mean: mean_p,
        ex_ante_variance: var_p,
        method: Method::Method0,
    })
}

pub fn expost_frontier_method0(
    moments: &MomentEstimate,
    cap: f64,
    frontier: &Frontier,
    mode: ForecastMode,
) -> Result<Vec<ExPostPoint>> {
    frontier
        .points
        .iter()
        .map(|p| method0_point(moments, cap, &p.portfolio.weights, mode))
        .collect()
}

/// Long-only, capped portfolio maximising θF'w − ½w'Σw; `None` for θ
/// means the pure return maximiser.
fn forecast_portfolio(
    sigma: &DMatrix<f64>,
    forecast: &DVector<f64>,
    cap: f64,
    theta: Option<f64>,
) -> Result<DVector<f64>> {
    let n = forecast.len();
    match theta {
        None => {
            let m = MomentEstimate::new(
                forecast.clone(),
                sigma.clone(),
                crate::estimation::Estimator::Sample,
                0,
            )?;
            Ok(crate::optimizer::max_return(&m, cap)?.weights)
        }
        Some(theta) => {
            let c = forecast * -theta;
            let a = DMatrix::from_element(1, n, 1.0);
            let b = DVector::from_element(1, 1.0);
            let lo = DVector::zeros(n);
            let hi = DVector::from_element(n, cap);
            let problem = QpProblem {
                q: sigma,
                c: &c,
                a: &a,
                b: &b,
                lower: &lo,
                upper: &hi,
            };
            Ok(solve_qp(&problem, &DVector::from_element(n, 1.0 / n as f64))?.x)
        }
    }
}

/// Method 1: re-optimise under P simulated forecasts at each frontier
/// point's risk appetite and measure the dispersion of the weights.
pub fn expost_frontier_method1(
    moments: &MomentEstimate,
    cap: f64,
    thetas: &[Option<f64>],
    draws: usize,
    seed: u64,
    spec: &ForecastCovarianceSpec,
) -> Result<Vec<ExPostPoint>> {
    let n = moments.assets();
    check_cap(n, cap)?;
    if draws < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 draws, got {draws}")));
    }
    let mu = &moments.mean;
    let sigma = &spec.sigma_rr;
    let forecast_mean = mu + &spec.delta;
    let factor = if spec.sigma_ff.iter().all(|v| *v == 0.0) {
        DMatrix::zeros(n, n)
    } else {
        cholesky_lower(&spec.sigma_ff)?
    };
    let source = SeededSource::new(seed, 0);
    let mut forecasts = Vec::with_capacity(draws);
    let mut rng = source.rng();
    let mut z = DVector::zeros(n);
    for _ in 0..draws {
        rng.fill_standard_normal(z.as_mut_slice());
        forecasts.push(&forecast_mean + &factor * &z);
    }
    thetas
        .iter()
        .map(|&theta| {
            let mut ws = Vec::with_capacity(draws);
            for (i, f) in forecasts.iter().enumerate() {
                let w = forecast_portfolio(&moments.covariance, f, cap, theta).map_err(|e| Error::Draw {
                    draw: i,
                    message: e.to_string(),
                })?;
                ws.push(w);
            }
            let pf = draws as f64;
            let phi = ws.iter().fold(DVector::zeros(n), |acc, w| acc + w) / pf;
            let mut omega = DMatrix::zeros(n, n);
            for w in &ws {
                let d = w - &phi;
                omega += &d * d.transpose();
            }
            omega /= pf - 1.0;
            let ex_ante = forecast_portfolio(&moments.covariance, mu, cap, theta)?;
            Ok(ExPostPoint {
                theta: theta.unwrap_or(f64::INFINITY),
                mean: phi.dot(mu),
                variance: (sigma * &phi).dot(&phi) + (&omega * mu).dot(mu) + (sigma * &omega).trace(),
                ex_ante_mean: ex_ante.dot(mu),
                ex_ante_variance: (sigma * &ex_ante).dot(&ex_ante),
                method: Method::Method1 { draws, seed },
            })
        })
        .collect()
}

/// Berkowitz test of realised H-period returns against N(Hμ_pf, Hσ²_pf).
pub fn expost_consistency_test(
    realized: &[f64],
    point: &ExPostPoint,
    horizon: usize,
    critical: f64,
) -> Result<(BerkowitzOutcome, bool)> {
    if !(point.variance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ex-post variance {} must be positive",
            point.variance
        )));
    }
    let h = horizon as f64;
    let mean = h * point.mean;
    let sd = (h * point.variance).sqrt();
    let y: Vec<f64> = realized.iter().map(|r| (r - mean) / sd).collect();
    let outcome = berkowitz(&y)?;
    Ok((outcome, outcome.statistic < critical))
}

/// Parametric normal expected shortfall at tail level α, reported as a
/// positive loss on a daily scale: mean / days and stdev / √days.
pub fn cvar_normal(mean: f64, stdev: f64, alpha: f64, days_per_period: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidParameter(format!("tail level {alpha} outside (0, 0.5)")));
    }
    if !(stdev >= 0.0) || !(days_per_period > 0.0) {
        return Err(Error::InvalidParameter(
            "stdev must be non-negative and days per period positive".into(),
        ));
    }
    let mu_d = mean / days_per_period;
    let sd_d = stdev / days_per_period.sqrt();
    let z = normal::quantile(alpha);
    Ok(sd_d * normal::pdf(z) / alpha - mu_d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_two_asset_constants() {
        let mu = DVector::from_vec(vec![0.01, 0.02]);
        let c = standard_constants(&mu, &DMatrix::identity(2, 2), None).unwrap();
        assert!((c.alpha0 - 0.015).abs() < 1e-15);
        assert!((c.alpha1 - 0.00005).abs() < 1e-15);
        assert!((c.alpha2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_mean_has_no_slope() {
        let mu = DVector::from_element(3, 0.004);
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let c = standard_constants(&mu, &s, None).unwrap();
        assert!(c.alpha1.abs() < 1e-15);
    }

    #[test]
    fn rank_deficient_active_set() {
        let mu = DVector::from_vec(vec![0.01, 0.02]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            standard_constants(&mu, &DMatrix::identity(2, 2), Some((&a, &b))),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn zero_blocks_give_zero_betas() {
        let mu = DVector::from_vec(vec![0.01, 0.02, 0.0]);
        let s = DMatrix::identity(3, 3);
        let c = standard_constants(&mu, &s, None).unwrap();
        let spec = ForecastCovarianceSpec {
            sigma_rr: s.clone(),
            sigma_rf: DMatrix::zeros(3, 3),
            sigma_ff: s.clone(),
            delta: DVector::zeros(3),
        };
        let b = beta_constants(&c, &spec, &mu).unwrap();
        assert_eq!((b.beta0, b.beta1), (0.0, 0.0));
    }

    #[test]
    fn theta_zero_is_minimum_variance() {
        let mu = DVector::from_vec(vec![0.01, 0.02, 0.015]);
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let c = standard_constants(&mu, &s, None).unwrap();
        let spec = ForecastCovarianceSpec::exemplar(&s, 0.3, 0.4).unwrap();
        let b = beta_constants(&c, &spec, &mu).unwrap();
        let p = expost_moments(&c, &b, 0.0).unwrap();
        assert_eq!((p.mean, p.variance), (c.alpha0, c.alpha2));
    }

    #[test]
    fn cvar_reference_value() {
        let v = cvar_normal(0.0, 1.0, 0.01, 1.0).unwrap();
        assert!((v - 2.665_214_220_345_8).abs() < 1e-9);
        let tiny = cvar_normal(0.002, 1e-12, 0.01, 1.0).unwrap();
        assert!((tiny + 0.002).abs() < 1e-10);
        assert!(cvar_normal(0.0, 1.0, 0.6, 5.0).is_err());
        // weekly inputs map to daily: mean / 5, stdev / √5
        let w = cvar_normal(0.005, 0.03, 0.01, 5.0).unwrap();
        let want = 0.03 / 5f64.sqrt() * normal::pdf(normal::quantile(0.01)) / 0.01 - 0.001;
        assert!((w - want).abs() < 1e-15);
    }

    #[test]
    fn vertex_active_set_drops_implied_row() {
        let w = DVector::from_vec(vec![0.5, 0.5, 0.0]);
        let (a, b) = active_constraints(&w, 0.5);
        assert_eq!(a.ncols(), 3);
        assert_eq!(b.as_slice(), &[1.0, -0.5, -0.5]);
    }
}
