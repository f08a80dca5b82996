//! Window moment estimates: sample moments and Ledoit–Wolf single-index
//! shrinkage.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::market_data::{ReturnsPanel, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Sample,
    LedoitWolf,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Sample => "sample",
            Estimator::LedoitWolf => "ledoit-wolf",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sample" => Ok(Estimator::Sample),
            "ledoit-wolf" | "ledoit_wolf" | "lw" => Ok(Estimator::LedoitWolf),
            other => Err(Error::InvalidParameter(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Mean vector and covariance matrix for one estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub estimator: Estimator,
    pub sample_size: usize,
}

impl MomentEstimate {
    pub fn new(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        estimator: Estimator,
        sample_size: usize,
    ) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: covariance.nrows(),
            });
        }
        Ok(Self {
            mean,
            covariance,
            estimator,
            sample_size,
        })
    }

    pub fn assets(&self) -> usize {
        self.mean.len()
    }

    /// Lifts the spectrum so that the smallest eigenvalue is at least
    /// `1e-10 * trace / N`. Leaves well-conditioned matrices untouched.
    pub fn repaired(mut self) -> Self {
        repair_spd(&mut self.covariance);
        self
    }
}

/// Symmetrises `sigma` and shifts its diagonal when the smallest eigenvalue
/// falls below `1e-10 * trace / N`. Returns the shift applied.
pub fn repair_spd(sigma: &mut DMatrix<f64>) -> f64 {
    let n = sigma.nrows();
    if n == 0 {
        return 0.0;
    }
    let sym = (&*sigma + sigma.transpose()) * 0.5;
    *sigma = sym;
    let floor = 1e-10 * sigma.trace().max(0.0) / n as f64;
    let floor = if floor > 0.0 { floor } else { 1e-300 };
    let lambda_min = sigma.clone().symmetric_eigenvalues().min();
    if lambda_min < floor {
        let shift = floor - lambda_min;
        for i in 0..n {
            sigma[(i, i)] += shift;
        }
        shift
    } else {
        0.0
    }
}

fn window_data(panel: &ReturnsPanel, window: &WindowSpec) -> Result<DMatrix<f64>> {
    if window.length < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: window.length,
        });
    }
    panel.window_rows(window)
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let t = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / t))
}

fn demeaned(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut d = x.clone();
    for (j, mut col) in d.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    d
}

/// Column means and covariance with divisor M, computed in two passes.
pub fn sample_moments_of(x: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if x.nrows() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: x.nrows(),
        });
    }
    let mean = column_means(x);
    let d = demeaned(x, &mean);
    let mut cov = d.transpose() * &d / x.nrows() as f64;
    // gemm may leave the two triangles a rounding apart
    let sym = (&cov + cov.transpose()) * 0.5;
    cov.copy_from(&sym);
    Ok((mean, cov))
}

pub fn sample_moments(panel: &ReturnsPanel, window: &WindowSpec) -> Result<MomentEstimate> {
    let x = window_data(panel, window)?;
    let (mean, cov) = sample_moments_of(&x)?;
    MomentEstimate::new(mean, cov, Estimator::Sample, window.length)
}

/// Pieces of the single-index shrinkage estimate.
#[derive(Debug, Clone)]
pub struct Shrinkage {
    pub sample: DMatrix<f64>,
    pub target: DMatrix<f64>,
    pub intensity: f64,
}

impl Shrinkage {
    pub fn covariance(&self) -> DMatrix<f64> {
        self.covariance_at(self.intensity)
    }

    /// `δ F + (1 − δ) S` for an arbitrary intensity.
    pub fn covariance_at(&self, delta: f64) -> DMatrix<f64> {
        if delta == 0.0 {
            return self.sample.clone();
        }
        &self.target * delta + &self.sample * (1.0 - delta)
    }
}

/// Ledoit–Wolf (2003) shrinkage toward the single-index model, with the
/// market proxied by the equal-weighted average of the demeaned returns.
pub fn ledoit_wolf_shrinkage(x: &DMatrix<f64>) -> Result<Shrinkage> {
    let (t, n) = x.shape();
    if t < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: t,
        });
    }
    let tf = t as f64;
    let mean = column_means(x);
    let d = demeaned(x, &mean);
    let mkt = DVector::from_iterator(t, d.row_iter().map(|r| r.sum() / n as f64));
    let var_mkt = mkt.dot(&mkt) / tf;
    let scale = d.iter().map(|v| v * v).sum::<f64>() / (tf * n as f64);
    if var_mkt <= 1e-14 * scale.max(f64::MIN_POSITIVE) || var_mkt == 0.0 {
        return Err(Error::ZeroVariance("market proxy is constant over the window".into()));
    }
    let cov_mkt = d.transpose() * &mkt / tf;
    let sample = {
        let s = d.transpose() * &d / tf;
        (&s + s.transpose()) * 0.5
    };
    let mut target = &cov_mkt * cov_mkt.transpose() / var_mkt;
    for i in 0..n {
        target[(i, i)] = sample[(i, i)];
    }

    let gamma_hat = (&sample - &target).norm_squared();
    if gamma_hat <= 0.0 {
        return Ok(Shrinkage {
            sample,
            target,
            intensity: 0.0,
        });
    }

    let y = d.map(|v| v * v);
    let pi_hat = (y.transpose() * &y).sum() / tf - sample.norm_squared();
    let rho_diag =
        y.map(|v| v * v).sum() / tf - sample.diagonal().iter().map(|v| v * v).sum::<f64>();

    let mut z = d.clone();
    for (i, mut row) in z.row_iter_mut().enumerate() {
        row *= mkt[i];
    }
    let mut v1 = y.transpose() * &z / tf;
    for i in 0..n {
        for j in 0..n {
            v1[(i, j)] -= cov_mkt[i] * sample[(i, j)];
        }
    }
    let mut roff1 = 0.0;
    for i in 0..n {
        for j in 0..n {
            roff1 += v1[(i, j)] * cov_mkt[j];
        }
        roff1 -= v1[(i, i)] * cov_mkt[i];
    }
    roff1 /= var_mkt;
    let v3 = z.transpose() * &z / tf - &sample * var_mkt;
    let mut roff3 = 0.0;
    for i in 0..n {
        for j in 0..n {
            roff3 += v3[(i, j)] * cov_mkt[i] * cov_mkt[j];
        }
        roff3 -= v3[(i, i)] * cov_mkt[i] * cov_mkt[i];
    }
    roff3 /= var_mkt * var_mkt;
    let rho_hat = rho_diag + 2.0 * roff1 - roff3;

    let kappa = (pi_hat - rho_hat) / gamma_hat;
    let intensity = (kappa / tf).clamp(0.0, 1.0);
    Ok(Shrinkage {
        sample,
        target,
        intensity,
    })
}

pub fn ledoit_wolf(panel: &ReturnsPanel, window: &WindowSpec) -> Result<MomentEstimate> {
    let x = window_data(panel, window)?;
    let shrink = ledoit_wolf_shrinkage(&x)?;
    MomentEstimate::new(column_means(&x), shrink.covariance(), Estimator::LedoitWolf, window.length)
}

/// Dispatches on `estimator` and applies the SPD repair.
pub fn estimate(
    panel: &ReturnsPanel,
    window: &WindowSpec,
    estimator: Estimator,
) -> Result<MomentEstimate> {
    let m = match estimator {
        Estimator::Sample => sample_moments(panel, window)?,
        Estimator::LedoitWolf => ledoit_wolf(panel, window)?,
    };
    Ok(m.repaired())
}
