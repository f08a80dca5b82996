//! Primal active-set solver for convex QPs with equality rows and simple
//! bounds:
//!
//!   min ½ x'Qx + c'x   s.t.   A x = b,   lo ≤ x ≤ hi
//!
//! The working set holds variables pinned at a bound. Each iteration solves
//! the equality-constrained subproblem on the free variables through its KKT
//! system; dependent equality rows are dropped first so that the system stays
//! nonsingular. Entering and leaving choices use Bland's rule (lowest index).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const KKT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct QpProblem<'a> {
    pub q: &'a DMatrix<f64>,
    pub c: &'a DVector<f64>,
    pub a: &'a DMatrix<f64>,
    pub b: &'a DVector<f64>,
    pub lower: &'a DVector<f64>,
    /// May contain `f64::INFINITY`.
    pub upper: &'a DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: Vec<Bound>,
    /// Multipliers of the equality rows, sign convention
    /// `Qx + c = A'λ + z` with `z ≥ 0` at lower and `z ≤ 0` at upper bounds.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
}

impl QpSolution {
    pub fn at_lower(&self) -> Vec<usize> {
        self.indices(Bound::Lower)
    }

    pub fn at_upper(&self) -> Vec<usize> {
        self.indices(Bound::Upper)
    }

    fn indices(&self, which: Bound) -> Vec<usize> {
        self.status
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == which)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Indices of a maximal linearly independent subset of the rows of `a`
/// restricted to columns `cols`, by modified Gram–Schmidt.
fn independent_rows(a: &DMatrix<f64>, cols: &[usize]) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut keep = Vec::new();
    for r in 0..a.nrows() {
        let mut v: Vec<f64> = cols.iter().map(|&j| a[(r, j)]).collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        for u in &basis {
            let d: f64 = v.iter().zip(u).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 * norm0 {
            for x in &mut v {
                *x /= norm;
            }
            basis.push(v);
            keep.push(r);
        }
    }
    keep
}

pub fn solve_qp(problem: &QpProblem<'_>, start: &DVector<f64>) -> Result<QpSolution> {
    let n = problem.c.len();
    let m = problem.a.nrows();
    let dims_ok = problem.q.shape() == (n, n)
        && problem.a.ncols() == n
        && problem.b.len() == m
        && problem.lower.len() == n
        && problem.upper.len() == n
        && start.len() == n;
    if !dims_ok {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: start.len(),
        });
    }
    let (lo, hi) = (problem.lower, problem.upper);

    let mut x = start.clone();
    for i in 0..n {
        if x[i] < lo[i] - 1e-10 || x[i] > hi[i] + 1e-10 {
            return Err(Error::Infeasible(format!("start violates the bounds of variable {i}")));
        }
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
    let resid = problem.a * &x - problem.b;
    let scale = 1.0 + problem.b.amax();
    if resid.amax() > 1e-8 * scale {
        return Err(Error::Infeasible(format!(
            "start violates the equality rows by {:e}",
            resid.amax()
        )));
    }

    let mut status: Vec<Bound> = (0..n)
        .map(|i| {
            if x[i] <= lo[i] {
                Bound::Lower
            } else if x[i] >= hi[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();

    // Variables released at a degenerate vertex that block again at once are
    // held fixed until the iterate moves.
    let mut held = vec![false; n];
    let mut last_released: Option<usize> = None;

    let max_iter = 50 * (n + m) + 100;
    for iter in 0..max_iter {
        let g = problem.q * &x + problem.c;
        let free: Vec<usize> = (0..n).filter(|&i| status[i] == Bound::Free).collect();
        let rows = independent_rows(problem.a, &free);
        let nf = free.len();
        let nr = rows.len();

        // KKT system: [Q_FF  -A_F'; A_F 0] [p; λ] = [-g_F; 0]
        let mut p_full = DVector::zeros(n);
        let mut lambda = DVector::zeros(m);
        if nf > 0 || nr > 0 {
            let dim = nf + nr;
            let mut kkt = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for (a_i, &i) in free.iter().enumerate() {
                for (a_j, &j) in free.iter().enumerate() {
                    kkt[(a_i, a_j)] = problem.q[(i, j)];
                }
                rhs[a_i] = -g[i];
                for (k, &r) in rows.iter().enumerate() {
                    kkt[(a_i, nf + k)] = -problem.a[(r, i)];
                    kkt[(nf + k, a_i)] = problem.a[(r, i)];
                }
            }
            let sol = kkt
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Solver("singular KKT system".into()))?;
            if sol.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver("non-finite KKT solution".into()));
            }
            for (a_i, &i) in free.iter().enumerate() {
                p_full[i] = sol[a_i];
            }
            for (k, &r) in rows.iter().enumerate() {
                lambda[r] = sol[nf + k];
            }
        }

        let x_scale = 1.0 + x.amax();
        let step_norm = p_full.amax();
        if step_norm <= 1e-12 * x_scale {
            // Stationary on the working set: test the pinned variables.
            let g_scale = 1.0 + g.amax();
            let at = problem.a.transpose() * &lambda;
            let mut leave = None;
            for i in 0..n {
                let z = g[i] - at[i];
                let wrong = match status[i] {
                    Bound::Lower => z < -KKT_TOLERANCE * g_scale,
                    Bound::Upper => z > KKT_TOLERANCE * g_scale,
                    Bound::Free => false,
                };
                if wrong && lo[i] < hi[i] && !held[i] {
                    leave = Some(i);
                    break;
                }
            }
            match leave {
                Some(i) => {
                    status[i] = Bound::Free;
                    last_released = Some(i);
                }
                None => {
                    return Ok(QpSolution {
                        x,
                        status,
                        multipliers: lambda,
                        iterations: iter + 1,
                    })
                }
            }
            continue;
        }

        // Ratio test; ties resolved toward the lowest index.
        let mut alpha = 1.0;
        let mut blocking: Option<(usize, Bound)> = None;
        for &i in &free {
            let pi = p_full[i];
            let (limit, side) = if pi < 0.0 {
                ((lo[i] - x[i]) / pi, Bound::Lower)
            } else if pi > 0.0 && hi[i].is_finite() {
                ((hi[i] - x[i]) / pi, Bound::Upper)
            } else {
                continue;
            };
            let limit = limit.max(0.0);
            if limit < alpha {
                alpha = limit;
                blocking = Some((i, side));
            }
        }
        if alpha > 0.0 {
            held.iter_mut().for_each(|h| *h = false);
        } else if let Some((i, _)) = blocking {
            if last_released == Some(i) {
                held[i] = true;
            }
        }
        last_released = None;
        x.axpy(alpha, &p_full, 1.0);
        if let Some((i, side)) = blocking {
            status[i] = side;
            x[i] = if side == Bound::Lower { lo[i] } else { hi[i] };
        }
    }
    Err(Error::Solver(format!("active-set iteration limit {max_iter} reached")))
}
