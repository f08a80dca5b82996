//! Most-diversified portfolio at a prescribed (return, volatility) point.
//!
//!   min (1/N) Σ (ω_i − 1/N)²
//!   s.t. 1'ω = 1,  μ'ω = R,  ω'Σω = s²,  0 ≤ ω ≤ U
//!
//! Solved by an elastic ℓ1 SQP: each step is a box-constrained QP in the
//! step d plus two slack variables that absorb any violation of the
//! linearised variance row, and steps are accepted by backtracking on the
//! merit f + ρ|c|. The variance row is scaled by s² so that its tolerance is
//! relative.

use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, QpProblem};
use super::{Feasibility, Portfolio, Provenance};
use crate::estimation::MomentEstimate;

const MAX_ITERATIONS: usize = 200;
const CONSTRAINT_TOLERANCE: f64 = 1e-7;
const STEP_TOLERANCE: f64 = 1e-9;
const MAX_PENALTY: f64 = 1e8;

/// Cross-sectional variance of the weights, divisor N.
pub fn weight_variance(weights: &DVector<f64>) -> f64 {
    let n = weights.len() as f64;
    weights.iter().map(|w| (w - 1.0 / n).powi(2)).sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqpOutcome {
    Converged,
    Infeasible,
    Stalled,
    IterationLimit,
}

/// Runs the SQP from `start`, which must already satisfy the budget and
/// return rows; every step preserves them. Returns the final iterate and how
/// the run ended.
pub fn solve_grid_program(
    moments: &MomentEstimate,
    target_sd: f64,
    cap: f64,
    start: &DVector<f64>,
) -> (DVector<f64>, SqpOutcome) {
    let n = moments.assets();
    let nf = n as f64;
    let s2 = target_sd * target_sd;
    if !(s2 > 0.0) || !s2.is_finite() {
        return (start.clone(), SqpOutcome::Infeasible);
    }
    let sigma = &moments.covariance / s2;
    let mu = &moments.mean;
    let constraint = |w: &DVector<f64>| (&sigma * w).dot(w) - 1.0;
    let objective = |w: &DVector<f64>| weight_variance(w);

    let dim = n + 2;
    let slack_curvature = 1e-6 * 2.0 / nf;
    let mut a = DMatrix::zeros(3, dim);
    for j in 0..n {
        a[(0, j)] = 1.0;
        a[(1, j)] = mu[j];
    }
    a[(2, n)] = -1.0;
    a[(2, n + 1)] = 1.0;
    let mut lower = DVector::zeros(dim);
    let mut upper = DVector::from_element(dim, f64::INFINITY);

    let mut w = start.clone();
    let mut lambda = 0.0f64;
    let mut rho = 1.0f64;

    for _ in 0..MAX_ITERATIONS {
        let c = constraint(&w);
        let sw = &sigma * &w;
        let grad_c = &sw * 2.0;
        let grad_f = w.map(|x| 2.0 / nf * (x - 1.0 / nf));

        let mut h = DMatrix::zeros(dim, dim);
        let curvature = (-lambda).max(0.0);
        for i in 0..n {
            for j in 0..n {
                h[(i, j)] = 2.0 * curvature * sigma[(i, j)];
            }
            h[(i, i)] += 2.0 / nf;
        }
        h[(n, n)] = slack_curvature;
        h[(n + 1, n + 1)] = slack_curvature;

        let mut q_lin = DVector::zeros(dim);
        q_lin.rows_mut(0, n).copy_from(&grad_f);
        q_lin[n] = rho;
        q_lin[n + 1] = rho;
        for j in 0..n {
            a[(2, j)] = grad_c[j];
        }
        let b = DVector::from_vec(vec![0.0, 0.0, -c]);
        for i in 0..n {
            lower[i] = -w[i];
            upper[i] = cap - w[i];
        }
        let mut d0 = DVector::zeros(dim);
        if c > 0.0 {
            d0[n] = c;
        } else {
            d0[n + 1] = -c;
        }
        let problem = QpProblem {
            q: &h,
            c: &q_lin,
            a: &a,
            b: &b,
            lower: &lower,
            upper: &upper,
        };
        let sol = match solve_qp(&problem, &d0) {
            Ok(s) => s,
            Err(_) if c.abs() <= CONSTRAINT_TOLERANCE => return (w, SqpOutcome::Converged),
            Err(_) => return (w, SqpOutcome::Stalled),
        };
        let d = sol.x.rows(0, n).into_owned();
        let slack = sol.x[n] + sol.x[n + 1];
        let new_lambda = sol.multipliers[2];

        let step = d.amax();
        if step <= STEP_TOLERANCE {
            if c.abs() <= CONSTRAINT_TOLERANCE {
                return (w, SqpOutcome::Converged);
            }
            if slack > 0.0 && rho < MAX_PENALTY {
                rho *= 10.0;
                continue;
            }
            return (w, SqpOutcome::Infeasible);
        }
        if new_lambda.abs() >= 0.99 * rho && slack > CONSTRAINT_TOLERANCE {
            rho = (rho * 10.0).min(MAX_PENALTY);
        }
        rho = rho.max(2.0 * new_lambda.abs());

        let merit = |x: &DVector<f64>| objective(x) + rho * constraint(x).abs();
        let phi0 = merit(&w);
        // Directional derivative of the merit along d (slack-adjusted).
        let slope = grad_f.dot(&d) - rho * (c.abs() - slack).max(0.0);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1e-10 {
            let mut trial = &w + &d * alpha;
            for x in trial.iter_mut() {
                *x = x.clamp(0.0, cap);
            }
            if merit(&trial) <= phi0 + 1e-4 * alpha * slope.min(0.0) {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(next) => {
                w = next;
                lambda = new_lambda;
            }
            None => {
                if c.abs() <= CONSTRAINT_TOLERANCE {
                    return (w, SqpOutcome::Converged);
                }
                return (w, SqpOutcome::Stalled);
            }
        }
    }
    (w, SqpOutcome::IterationLimit)
}

/// Grid portfolio at (target_return, target_sd) started from `start`.
///
/// Returns `start` tagged `Fallback` when the SQP fails, when the result
/// does not satisfy the constraints, or when `start` already sits on the
/// target volatility and the result is less diversified than it.
pub fn grid_portfolio(
    moments: &MomentEstimate,
    target_return: f64,
    target_sd: f64,
    cap: f64,
    start: &Portfolio,
) -> Portfolio {
    let fallback = || start.clone().with_provenance(Provenance::Fallback);
    let start_ok =
        Feasibility::check(&start.weights, cap, Some((&moments.mean, target_return))).is_feasible();
    if !start_ok {
        return fallback();
    }
    let (w, outcome) = solve_grid_program(moments, target_sd, cap, &start.weights);
    if outcome != SqpOutcome::Converged {
        return fallback();
    }
    if !Feasibility::check(&w, cap, Some((&moments.mean, target_return))).is_feasible() {
        return fallback();
    }
    let s2 = target_sd * target_sd;
    let start_gap = (start.stdev * start.stdev / s2 - 1.0).abs();
    if start_gap <= CONSTRAINT_TOLERANCE && weight_variance(&w) > weight_variance(&start.weights) {
        return fallback();
    }
    Portfolio::from_weights(w, moments, Provenance::Grid)
}
