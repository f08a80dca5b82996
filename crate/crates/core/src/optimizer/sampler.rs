//! Random feasible portfolios at a fixed expected return.
//!
//! A draw starts from a flat Dirichlet point (normalised unit exponentials),
//! is projected onto {1'ω = 1, μ'ω = R}, and then repaired: coordinates that
//! leave [0, U] are clipped and frozen, and the remaining free coordinates
//! are re-projected. Draws that still miss the constraints after 50 sweeps
//! are rejected.

use nalgebra::DVector;

use super::{check_cap, max_return, Portfolio, Provenance};
use crate::error::{Error, Result};
use crate::estimation::MomentEstimate;
use crate::randgen::{NormalRng, SeededSource};

const REPAIR_SWEEPS: usize = 50;
const ATTEMPTS_PER_PORTFOLIO: usize = 1000;
const RESIDUAL_TOLERANCE: f64 = 1e-8;

pub fn random_portfolios(
    moments: &MomentEstimate,
    target_return: f64,
    cap: f64,
    count: usize,
    source: SeededSource,
) -> Result<Vec<Portfolio>> {
    let n = moments.assets();
    check_cap(n, cap)?;
    let mu = &moments.mean;
    let top = max_return(moments, cap)?;
    let neg = crate::estimation::MomentEstimate {
        mean: -mu,
        ..moments.clone()
    };
    let bottom = -max_return(&neg, cap)?.expected_return;
    let scale = 1.0 + top.expected_return.abs().max(bottom.abs());
    if target_return > top.expected_return + 1e-12 * scale || target_return < bottom - 1e-12 * scale {
        return Err(Error::InvalidParameter(format!(
            "target return {target_return} is not attainable"
        )));
    }
    let span = top.expected_return - bottom;
    if top.expected_return - target_return <= 1e-10 * span.max(f64::MIN_POSITIVE) {
        return Ok(vec![top.with_provenance(Provenance::Random); count]);
    }

    let mut rng = source.rng();
    let mut out = Vec::with_capacity(count);
    let budget = count.saturating_mul(ATTEMPTS_PER_PORTFOLIO).max(ATTEMPTS_PER_PORTFOLIO);
    let mut attempts = 0usize;
    while out.len() < count {
        if attempts >= budget {
            return Err(Error::SamplerExhausted {
                requested: count,
                accepted: out.len(),
                attempts,
            });
        }
        attempts += 1;
        if let Some(w) = draw(&mut rng, mu, target_return, cap) {
            out.push(Portfolio::from_weights(w, moments, Provenance::Random));
        }
    }
    Ok(out)
}

fn draw(rng: &mut NormalRng, mu: &DVector<f64>, target: f64, cap: f64) -> Option<DVector<f64>> {
    let n = mu.len();
    let mut w = DVector::from_fn(n, |_, _| rng.exponential());
    let total = w.sum();
    w /= total;
    let mut free = vec![true; n];
    for _ in 0..REPAIR_SWEEPS {
        project(&mut w, mu, target, &free)?;
        let mut clean = true;
        for i in 0..n {
            if !free[i] {
                continue;
            }
            if w[i] < 0.0 {
                w[i] = 0.0;
                free[i] = false;
                clean = false;
            } else if w[i] > cap {
                w[i] = cap;
                free[i] = false;
                clean = false;
            }
        }
        if clean {
            let budget = (w.sum() - 1.0).abs();
            let ret = (mu.dot(&w) - target).abs();
            if budget <= RESIDUAL_TOLERANCE && ret <= RESIDUAL_TOLERANCE {
                return Some(w);
            }
            return None;
        }
    }
    None
}

/// Minimum-norm correction of the free coordinates onto the two equality
/// rows. `None` when the free rows are degenerate and the residual cannot be
/// removed.
fn project(w: &mut DVector<f64>, mu: &DVector<f64>, target: f64, free: &[bool]) -> Option<()> {
    let r1 = w.sum() - 1.0;
    let r2 = mu.dot(w) - target;
    let (mut k, mut s, mut ss) = (0.0, 0.0, 0.0);
    for i in 0..w.len() {
        if free[i] {
            k += 1.0;
            s += mu[i];
            ss += mu[i] * mu[i];
        }
    }
    if k == 0.0 {
        return None;
    }
    // Gram matrix of the rows (1, μ) over the free set.
    let det = k * ss - s * s;
    let (y1, y2) = if det > 1e-14 * k * ss.max(f64::MIN_POSITIVE) {
        ((ss * r1 - s * r2) / det, (k * r2 - s * r1) / det)
    } else {
        // μ is flat on the free set: only the budget row can move.
        let y1 = r1 / k;
        let leftover = r2 - s / k * r1;
        if leftover.abs() > RESIDUAL_TOLERANCE {
            return None;
        }
        (y1, 0.0)
    };
    for i in 0..w.len() {
        if free[i] {
            w[i] -= y1 + y2 * mu[i];
        }
    }
    Some(())
}
