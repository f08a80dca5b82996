//! Seeded random sources and multivariate-normal scenario generation.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit master seed and
//! positioned on its own 64-bit stream id. ChaCha is counter based, so a
//! `(seed, stream)` pair produces the same sequence on every platform and
//! independent tasks can each own a stream without coordinating.
//! Normal variates come from the inverse-CDF transform of open-interval
//! uniforms.

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::market_data::ReturnsPanel;
use crate::normal;

/// A reproducible random stream identified by `(seed, stream)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeededSource {
    pub seed: u64,
    pub stream: u64,
}

impl SeededSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child source for a sub-task; mixes the index into the stream id.
    pub fn derive(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    pub fn rng(&self) -> NormalRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(self.stream);
        NormalRng { inner }
    }
}

/// SplitMix64 finaliser, used only to spread task indices over stream ids.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator handing out open-interval uniforms and standard normals.
#[derive(Debug, Clone)]
pub struct NormalRng {
    inner: ChaCha8Rng,
}

impl NormalRng {
    /// Uniform on the open interval (0, 1) with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        let bits = self.inner.next_u64() >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        normal::quantile(self.uniform())
    }

    /// Unit-rate exponential variate.
    pub fn exponential(&mut self) -> f64 {
        -self.uniform().ln()
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }
}

/// `count` IID standard normal draws from `source`.
pub fn standard_normals(count: usize, source: SeededSource) -> Vec<f64> {
    let mut rng = source.rng();
    let mut out = vec![0.0; count];
    rng.fill_standard_normal(&mut out);
    out
}

/// Lower Cholesky factor, or `NotPositiveDefinite`.
pub fn cholesky_lower(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sigma
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite)
}

/// Simulates `periods` rows of `mu + L z` with `L` the lower Cholesky factor
/// of `sigma`. Rows carry weekly date labels starting 1988-01-04.
pub fn mvn_series(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    periods: usize,
    source: SeededSource,
) -> Result<ReturnsPanel> {
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: sigma.nrows(),
        });
    }
    let l = cholesky_lower(sigma)?;
    let mut rng = source.rng();
    let mut z = DVector::zeros(n);
    let mut returns = DMatrix::zeros(periods, n);
    for t in 0..periods {
        rng.fill_standard_normal(z.as_mut_slice());
        let row = mu + &l * &z;
        returns.row_mut(t).copy_from(&row.transpose());
    }
    let tickers = (0..n).map(|i| format!("A{:02}", i + 1)).collect();
    ReturnsPanel::new(weekly_dates(periods), tickers, returns)
}

/// Consecutive weekly labels starting on Monday 1988-01-04.
pub fn weekly_dates(count: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(1988, 1, 4).expect("valid date");
    (0..count)
        .map(|i| start + Duration::weeks(i as i64))
        .collect()
}

/// Deterministic weekly moments resembling a 30-stock blue-chip universe:
/// a single-factor covariance (market vol about 16% a year, asset vols
/// 20%–45% a year) and annual means between roughly 4% and 24%.
pub fn dj30_like_moments(n: usize, source: SeededSource) -> (DVector<f64>, DMatrix<f64>) {
    let mut rng = source.rng();
    let weeks = 52.0_f64;
    let market_vol = 0.16 / weeks.sqrt();
    let mut beta = DVector::zeros(n);
    let mut idio = DVector::zeros(n);
    let mut mu = DVector::zeros(n);
    for i in 0..n {
        beta[i] = 0.6 + 0.8 * rng.uniform();
        let total = (0.20 + 0.25 * rng.uniform()) / weeks.sqrt();
        let systematic = beta[i] * market_vol;
        idio[i] = (total * total - systematic * systematic).max(0.25 * total * total).sqrt();
        mu[i] = (0.04 + 0.20 * rng.uniform()) / weeks;
    }
    let mut sigma = &beta * beta.transpose() * (market_vol * market_vol);
    for i in 0..n {
        sigma[(i, i)] += idio[i] * idio[i];
    }
    (mu, sigma)
}
