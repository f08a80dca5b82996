//! Long-only portfolio programs under a budget row and a per-asset cap U:
//! minimum variance, maximum return, frontier points, random feasible
//! portfolios and the weight-dispersion grid program.

pub mod qcqp;
pub mod qp;
pub mod sampler;

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimation::MomentEstimate;
use qp::{solve_qp, QpProblem};

pub use qcqp::{grid_portfolio, weight_variance};
pub use sampler::random_portfolios;

pub const BUDGET_TOLERANCE: f64 = 1e-8;
pub const BOX_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Frontier,
    Grid,
    Random,
    Fallback,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Frontier => "frontier",
            Provenance::Grid => "grid",
            Provenance::Random => "random",
            Provenance::Fallback => "fallback",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    pub weights: DVector<f64>,
    pub expected_return: f64,
    pub stdev: f64,
    pub provenance: Provenance,
}

impl Portfolio {
    pub fn from_weights(weights: DVector<f64>, moments: &MomentEstimate, provenance: Provenance) -> Self {
        let expected_return = moments.mean.dot(&weights);
        let stdev = quad_form(&moments.covariance, &weights).max(0.0).sqrt();
        Self {
            weights,
            expected_return,
            stdev,
            provenance,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

pub(crate) fn quad_form(sigma: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    (sigma * w).dot(w)
}

/// One efficient portfolio plus the bounds binding at it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub portfolio: Portfolio,
    pub at_lower: Vec<usize>,
    pub at_upper: Vec<usize>,
    /// Risk appetite read off the return-row multiplier; `None` at the
    /// maximum-return vertex where it is unbounded.
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    pub points: Vec<FrontierPoint>,
}

impl Frontier {
    pub fn min_var(&self) -> &Portfolio {
        &self.points[0].portfolio
    }

    pub fn max_ret(&self) -> &Portfolio {
        &self.points[self.points.len() - 1].portfolio
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.portfolio.expected_return).collect()
    }
}

/// Constraint residuals measured independently of any solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub budget: f64,
    pub below_zero: f64,
    pub above_cap: f64,
    pub return_gap: f64,
}

impl Feasibility {
    pub fn check(weights: &DVector<f64>, cap: f64, target: Option<(&DVector<f64>, f64)>) -> Self {
        let budget = (weights.sum() - 1.0).abs();
        let below_zero = weights.iter().fold(0.0f64, |acc, w| acc.max(-w));
        let above_cap = weights.iter().fold(0.0f64, |acc, w| acc.max(w - cap));
        let return_gap = target.map_or(0.0, |(mu, r)| (mu.dot(weights) - r).abs());
        Self {
            budget,
            below_zero,
            above_cap,
            return_gap,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.budget <= BUDGET_TOLERANCE
            && self.below_zero <= BOX_TOLERANCE
            && self.above_cap <= BOX_TOLERANCE
            && self.return_gap <= BUDGET_TOLERANCE
    }
}

pub fn check_cap(n: usize, cap: f64) -> Result<()> {
    if !(cap > 0.0) || !cap.is_finite() {
        return Err(Error::InvalidParameter(format!("weight cap must be positive, got {cap}")));
    }
    if (n as f64) * cap < 1.0 - 1e-12 {
        return Err(Error::Infeasible(format!(
            "{n} assets capped at {cap} cannot hold the full budget"
        )));
    }
    Ok(())
}

fn check_spd(sigma: &DMatrix<f64>) -> Result<()> {
    if sigma.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(())
}

/// Variables pinned at zero or at the cap, to within 1e-12.
pub fn binding_bounds(weights: &DVector<f64>, cap: f64) -> (Vec<usize>, Vec<usize>) {
    let lower = (0..weights.len()).filter(|&i| weights[i] <= 1e-12).collect();
    let upper = (0..weights.len()).filter(|&i| weights[i] >= cap - 1e-12).collect();
    (lower, upper)
}

fn snap_to_box(weights: &mut DVector<f64>, cap: f64) {
    for w in weights.iter_mut() {
        *w = w.clamp(0.0, cap);
    }
}

pub fn min_variance(moments: &MomentEstimate, cap: f64) -> Result<Portfolio> {
    Ok(min_variance_point(moments, cap)?.portfolio)
}

fn min_variance_point(moments: &MomentEstimate, cap: f64) -> Result<FrontierPoint> {
    let n = moments.assets();
    check_cap(n, cap)?;
    check_spd(&moments.covariance)?;
    let c = DVector::zeros(n);
    let a = DMatrix::from_element(1, n, 1.0);
    let b = DVector::from_element(1, 1.0);
    let lo = DVector::zeros(n);
    let hi = DVector::from_element(n, cap);
    let problem = QpProblem {
        q: &moments.covariance,
        c: &c,
        a: &a,
        b: &b,
        lower: &lo,
        upper: &hi,
    };
    let sol = solve_qp(&problem, &DVector::from_element(n, 1.0 / n as f64))?;
    let mut w = sol.x;
    snap_to_box(&mut w, cap);
    let (at_lower, at_upper) = (indices(&sol.status, qp::Bound::Lower), indices(&sol.status, qp::Bound::Upper));
    Ok(FrontierPoint {
        portfolio: Portfolio::from_weights(w, moments, Provenance::Frontier),
        at_lower,
        at_upper,
        theta: Some(0.0),
    })
}

fn indices(status: &[qp::Bound], which: qp::Bound) -> Vec<usize> {
    status
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == which)
        .map(|(i, _)| i)
        .collect()
}

/// Greedy fill at the cap in decreasing expected return; equal returns are
/// filled lowest index first.
pub fn max_return(moments: &MomentEstimate, cap: f64) -> Result<Portfolio> {
    let n = moments.assets();
    check_cap(n, cap)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        moments.mean[j]
            .partial_cmp(&moments.mean[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut w = DVector::zeros(n);
    let mut left = 1.0;
    for i in order {
        if left <= 0.0 {
            break;
        }
        let take = cap.min(left);
        w[i] = take;
        left -= take;
    }
    Ok(Portfolio::from_weights(w, moments, Provenance::Frontier))
}

/// Minimum-variance portfolio at expected return `target`, given the two
/// frontier endpoints used to build a feasible starting point.
pub fn frontier_point(
    moments: &MomentEstimate,
    cap: f64,
    target: f64,
    min_var: &Portfolio,
    max_ret: &Portfolio,
) -> Result<FrontierPoint> {
    let n = moments.assets();
    let (r0, r1) = (min_var.expected_return, max_ret.expected_return);
    let span = r1 - r0;
    let tol = 1e-12 * (1.0 + r0.abs().max(r1.abs()));
    if target < r0 - tol || target > r1 + tol {
        return Err(Error::InvalidParameter(format!(
            "target return {target} outside [{r0}, {r1}]"
        )));
    }
    if span <= tol {
        return Ok(FrontierPoint {
            portfolio: min_var.clone(),
            at_lower: binding_bounds(&min_var.weights, cap).0,
            at_upper: binding_bounds(&min_var.weights, cap).1,
            theta: Some(0.0),
        });
    }
    let t = ((target - r0) / span).clamp(0.0, 1.0);
    let start = &min_var.weights * (1.0 - t) + &max_ret.weights * t;
    let c = DVector::zeros(n);
    let mut a = DMatrix::from_element(2, n, 1.0);
    a.row_mut(1).copy_from(&moments.mean.transpose());
    let b = DVector::from_vec(vec![1.0, moments.mean.dot(&start)]);
    let lo = DVector::zeros(n);
    let hi = DVector::from_element(n, cap);
    let problem = QpProblem {
        q: &moments.covariance,
        c: &c,
        a: &a,
        b: &b,
        lower: &lo,
        upper: &hi,
    };
    let sol = solve_qp(&problem, &start)?;
    let mut w = sol.x.clone();
    snap_to_box(&mut w, cap);
    Ok(FrontierPoint {
        portfolio: Portfolio::from_weights(w, moments, Provenance::Frontier),
        at_lower: sol.at_lower(),
        at_upper: sol.at_upper(),
        theta: Some(sol.multipliers[1]),
    })
}

/// B frontier portfolios at equally spaced returns from the minimum-variance
/// return to the maximum return, both inclusive.
pub fn frontier(moments: &MomentEstimate, cap: f64, levels: usize) -> Result<Frontier> {
    if levels < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 frontier levels, got {levels}")));
    }
    let first = min_variance_point(moments, cap).map_err(|e| Error::FrontierLevel {
        level: 1,
        message: e.to_string(),
    })?;
    let top = max_return(moments, cap)?;
    let (r0, r1) = (first.portfolio.expected_return, top.expected_return);
    if r1 - r0 <= 1e-12 * (1.0 + r1.abs()) {
        return Err(Error::InvalidParameter(
            "minimum-variance and maximum-return portfolios coincide; frontier is a point".into(),
        ));
    }
    let min_var = first.portfolio.clone();
    let mut points = Vec::with_capacity(levels);
    points.push(first);
    for b in 1..levels - 1 {
        let target = r0 + (r1 - r0) * b as f64 / (levels - 1) as f64;
        let point = frontier_point(moments, cap, target, &min_var, &top).map_err(|e| {
            Error::FrontierLevel {
                level: b + 1,
                message: e.to_string(),
            }
        })?;
        points.push(point);
    }
    let (at_lower, at_upper) = binding_bounds(&top.weights, cap);
    points.push(FrontierPoint {
        portfolio: top,
        at_lower,
        at_upper,
        theta: None,
    });
    Ok(Frontier { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::Estimator;

    pub(crate) fn moments(mu: &[f64], sigma: &[f64]) -> MomentEstimate {
        let n = mu.len();
        MomentEstimate::new(
            DVector::from_row_slice(mu),
            DMatrix::from_row_slice(n, n, sigma),
            Estimator::Sample,
            100,
        )
        .unwrap()
    }

    #[test]
    fn two_asset_minimum_variance() {
        let m = moments(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        let p = min_variance(&m, 1.0).unwrap();
        assert!((p.weights[0] - 0.5).abs() < 1e-12);
        let m = moments(&[0.0, 0.0], &[1.0, 0.0, 0.0, 4.0]);
        let p = min_variance(&m, 1.0).unwrap();
        assert!((p.weights[0] - 0.8).abs() < 1e-12 && (p.weights[1] - 0.2).abs() < 1e-12);
        let m = moments(&[0.0, 0.0], &[1.0, 0.0, 0.0, 9.0]);
        let p = min_variance(&m, 0.6).unwrap();
        assert!((p.weights[0] - 0.6).abs() < 1e-12 && (p.weights[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn infeasible_cap() {
        let m = moments(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(min_variance(&m, 0.4), Err(Error::Infeasible(_))));
        assert!(matches!(max_return(&m, 0.4), Err(Error::Infeasible(_))));
    }

    #[test]
    fn non_spd_rejected() {
        let m = moments(&[0.0, 0.0], &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(min_variance(&m, 1.0), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn greedy_max_return() {
        let m = moments(&[0.01, 0.02, 0.03], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let p = max_return(&m, 0.5).unwrap();
        assert_eq!(p.weights.as_slice(), &[0.0, 0.5, 0.5]);
        assert!((p.expected_return - 0.025).abs() < 1e-15);
        let p = max_return(&m, 1.0).unwrap();
        assert_eq!(p.weights.as_slice(), &[0.0, 0.0, 1.0]);
        let tie = moments(&[0.03, 0.01, 0.03], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let p = max_return(&tie, 0.6).unwrap();
        assert_eq!(p.weights.as_slice(), &[0.6, 0.0, 0.4]);
    }

    #[test]
    fn two_asset_frontier_midpoint() {
        let m = moments(&[0.01, 0.02], &[1.0, 0.0, 0.0, 4.0]);
        let f = frontier(&m, 1.0, 3).unwrap();
        assert_eq!(f.len(), 3);
        // min-var (0.8, 0.2) has return 0.012, max return 0.02, midpoint 0.016
        let mid = &f.points[1].portfolio;
        assert!((mid.expected_return - 0.016).abs() < 1e-14);
        assert!((mid.weights[0] - 0.4).abs() < 1e-10);
        let p = frontier_point(&m, 1.0, 0.015, f.min_var(), f.max_ret()).unwrap();
        assert!((p.portfolio.weights[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn two_levels_are_endpoints() {
        let m = moments(&[0.01, 0.02, 0.015], &[1.0, 0.2, 0.1, 0.2, 2.0, 0.3, 0.1, 0.3, 1.5]);
        let f = frontier(&m, 0.5, 2).unwrap();
        assert_eq!(f.min_var(), &min_variance(&m, 0.5).unwrap());
        assert_eq!(f.max_ret(), &max_return(&m, 0.5).unwrap());
    }

    #[test]
    fn flat_frontier_rejected() {
        let m = moments(&[0.01, 0.01], &[1.0, 0.0, 0.0, 1.0]);
        assert!(frontier(&m, 1.0, 3).is_err());
    }
}
