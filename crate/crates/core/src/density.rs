//! Empirical-CDF density forecasts, the probability integral transform and
//! the Berkowitz likelihood-ratio statistics.

use crate::error::{Error, Result};
use crate::normal;

/// In-sample H-period returns summarised for PIT evaluation. The mean and
/// standard deviation (divisor n) are accumulated in the original sample
/// order so that the unsorted fast path reproduces them bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub sorted: Vec<f64>,
    pub mean: f64,
    pub stdev: f64,
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl SampleSummary {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InsufficientData {
                required: 2,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite in-sample return".into()));
        }
        let (mean, stdev) = mean_and_sd(values);
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        Ok(Self {
            sorted,
            mean,
            stdev,
        })
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }
}

/// A PIT value together with its normal score, computed so that the score
/// stays finite and accurate deep in either tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pit {
    pub probability: f64,
    pub normal: f64,
}

/// The order statistics the empirical CDF needs around one outcome.
struct Neighbourhood {
    n: usize,
    below: usize,
    below_max: f64,
    above_min: f64,
    first: f64,
    last: f64,
    mean: f64,
    stdev: f64,
}

fn evaluate(h: &Neighbourhood, r: f64) -> Result<Pit> {
    let n1 = (h.n + 1) as f64;
    let edge = 0.5 / n1;
    if r > h.first && r < h.last {
        let frac = (r - h.below_max) / (h.above_min - h.below_max);
        let p = (h.below as f64 + 0.5 + frac) / n1;
        return Ok(Pit {
            probability: p,
            normal: normal::quantile(p),
        });
    }
    if !(h.stdev > 0.0) {
        return Err(Error::ZeroVariance(
            "in-sample returns are constant; the tail interpolation is undefined".into(),
        ));
    }
    let z = (r - h.mean) / h.stdev;
    if r <= h.first {
        let z1 = (h.first - h.mean) / h.stdev;
        let p = (edge * normal::cdf(z) / normal::cdf(z1)).max(f64::MIN_POSITIVE);
        Ok(Pit {
            probability: p,
            normal: normal::quantile(p),
        })
    } else {
        let zn = (h.last - h.mean) / h.stdev;
        let q = (edge * normal::sf(z) / normal::sf(zn)).max(f64::MIN_POSITIVE);
        // 1 − q can round to 1; keep the stored probability strictly inside
        // the unit interval; the score comes from q directly.
        Ok(Pit {
            probability: (1.0 - q).min(1.0 - f64::EPSILON / 2.0),
            normal: normal::quantile_upper(q),
        })
    }
}

/// Empirical CDF with normal-tail extrapolation, plus its normal score.
pub fn pit(summary: &SampleSummary, r: f64) -> Result<Pit> {
    let s = &summary.sorted;
    let n = s.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: n,
        });
    }
    let below = s.partition_point(|v| *v < r);
    let h = Neighbourhood {
        n,
        below,
        below_max: if below > 0 { s[below - 1] } else { f64::NAN },
        above_min: if below < n { s[below] } else { f64::NAN },
        first: s[0],
        last: s[n - 1],
        mean: summary.mean,
        stdev: summary.stdev,
    };
    evaluate(&h, r)
}

/// Same result as `pit(&SampleSummary::new(values)?, r)` from a single
/// linear scan, without sorting.
pub fn pit_unsorted(values: &[f64], r: f64) -> Result<Pit> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: n,
        });
    }
    let mut below = 0;
    let mut below_max = f64::NEG_INFINITY;
    let mut above_min = f64::INFINITY;
    let mut first = f64::INFINITY;
    let mut last = f64::NEG_INFINITY;
    for &v in values {
        if v < r {
            below += 1;
            below_max = below_max.max(v);
        } else {
            above_min = above_min.min(v);
        }
        first = first.min(v);
        last = last.max(v);
    }
    let (mean, stdev) = mean_and_sd(values);
    evaluate(
        &Neighbourhood {
            n,
            below,
            below_max,
            above_min,
            first,
            last,
            mean,
            stdev,
        },
        r,
    )
}

pub fn empirical_cdf(summary: &SampleSummary, r: f64) -> Result<f64> {
    pit(summary, r).map(|p| p.probability)
}

pub fn pit_to_normal(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("probability {p} outside (0, 1)")));
    }
    Ok(normal::quantile(p))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PitSeries {
    pub probabilities: Vec<f64>,
    pub normals: Vec<f64>,
}

impl PitSeries {
    pub fn push(&mut self, pit: Pit) {
        self.probabilities.push(pit.probability);
        self.normals.push(pit.normal);
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Standard,
    Ewma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerkowitzOutcome {
    pub statistic: f64,
    pub variant: Variant,
    pub mean: f64,
    pub variance: f64,
    pub k: usize,
}

impl BerkowitzOutcome {
    /// Asymptotic χ²₂ p-value of the standard statistic.
    pub fn p_value(&self) -> f64 {
        (-0.5 * self.statistic).exp()
    }
}

/// μ² + σ² − 1 − ln σ², the per-observation likelihood-ratio gap between
/// N(μ, σ²) and N(0, 1).
fn lr_gap(mean: f64, variance: f64) -> f64 {
    let u = variance - 1.0;
    (mean * mean + (u - u.ln_1p())).max(0.0)
}

/// Likelihood-ratio statistic of N(μ, σ²) against N(0, 1) with MLEs
/// (divisor K).
pub fn berkowitz(y: &[f64]) -> Result<BerkowitzOutcome> {
    let k = y.len();
    if k < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: k,
        });
    }
    let kf = k as f64;
    let mean = y.iter().sum::<f64>() / kf;
    let variance = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / kf;
    if !(variance > 0.0) {
        return Err(Error::ZeroVariance("normal scores have zero variance".into()));
    }
    Ok(BerkowitzOutcome {
        statistic: kf * lr_gap(mean, variance),
        variant: Variant::Standard,
        mean,
        variance,
        k,
    })
}

/// Discounted variant: observation k of K carries weight γ^(K−k) and the
/// log-likelihood is normalised by the total weight.
pub fn berkowitz_ewma(y: &[f64], gamma: f64) -> Result<BerkowitzOutcome> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParameter(format!("discount factor {gamma} outside (0, 1]")));
    }
    let k = y.len();
    if k < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: k,
        });
    }
    let mut weights = vec![0.0; k];
    let mut w = 1.0;
    for slot in weights.iter_mut().rev() {
        *slot = w;
        w *= gamma;
    }
    let total: f64 = weights.iter().sum();
    let mean = weights.iter().zip(y).map(|(w, v)| w * v).sum::<f64>() / total;
    let variance = weights
        .iter()
        .zip(y)
        .map(|(w, v)| w * (v - mean) * (v - mean))
        .sum::<f64>()
        / total;
    if !(variance > 0.0) {
        return Err(Error::ZeroVariance("weighted normal scores have zero variance".into()));
    }
    Ok(BerkowitzOutcome {
        statistic: lr_gap(mean, variance),
        variant: Variant::Ewma(gamma),
        mean,
        variance,
        k,
    })
}

/// Standard statistic at γ = 1, discounted one otherwise.
pub fn berkowitz_with(y: &[f64], gamma: f64) -> Result<BerkowitzOutcome> {
    if gamma == 1.0 {
        berkowitz(y)
    } else {
        berkowitz_ewma(y, gamma)
    }
}
