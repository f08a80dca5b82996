//! Monte Carlo critical values for the Berkowitz statistics under the
//! empirical-CDF forecasting scheme, and the matching power analysis.
//!
//! Each replication draws one IID standard-normal per-period path and rolls
//! K forecast origins across it. At each origin the M-period window supplies
//! M − H + 1 overlapping H-period sums for the empirical CDF, and the next H
//! periods supply the outcome.

use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;

use crate::density::{berkowitz_with, pit_unsorted};
use crate::error::{Error, Result};
use crate::randgen::SeededSource;

pub const PERCENTILES: [u32; 4] = [80, 85, 90, 95];

/// Upper 100·level % point of χ²₂.
pub fn chi2_2_quantile(level: f64) -> f64 {
    -2.0 * level.ln()
}

/// Percentile of the null distribution matching a significance level.
pub fn percentile_for_level(level: f64) -> Result<u32> {
    let p = ((1.0 - level) * 100.0).round();
    if (p - (1.0 - level) * 100.0).abs() > 1e-9 || !PERCENTILES.contains(&(p as u32)) {
        return Err(Error::InvalidParameter(format!(
            "significance level {level} is not one of 0.20, 0.15, 0.10, 0.05"
        )));
    }
    Ok(p as u32)
}

/// Shape of one simulated forecasting experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullDesign {
    pub m: usize,
    pub k: usize,
    pub h: usize,
    /// Periods between consecutive origins.
    pub step: usize,
    pub gamma: f64,
}

impl NullDesign {
    /// Origins `H` periods apart, as in the rolling consistency scoring.
    pub fn new(m: usize, k: usize, h: usize, gamma: f64) -> Result<Self> {
        Self::with_step(m, k, h, h, gamma)
    }

    pub fn with_step(m: usize, k: usize, h: usize, step: usize, gamma: f64) -> Result<Self> {
        if h == 0 || m < h + 1 || k < 2 || step == 0 {
            return Err(Error::InvalidParameter(format!(
                "need M > H ≥ 1, K ≥ 2 and a positive origin step (M={m}, K={k}, H={h}, step={step})"
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!("discount factor {gamma} outside (0, 1]")));
        }
        Ok(Self {
            m,
            k,
            h,
            step,
            gamma,
        })
    }

    /// Periods simulated per replication.
    pub fn path_length(&self) -> usize {
        self.m + (self.k - 1) * self.step + self.h
    }

    /// Statistic for one path, with the outcome of each origin multiplied
    /// by `scale`.
    pub fn statistic(&self, path: &[f64], scale: f64) -> Result<f64> {
        let h = self.h;
        let sums: Vec<f64> = path.windows(h).map(|w| w.iter().sum()).collect();
        let mut y = Vec::with_capacity(self.k);
        for j in 0..self.k {
            let origin = self.m - 1 + j * self.step;
            let inside = &sums[origin + 1 - self.m..=origin + 1 - h];
            let outcome = sums[origin + 1] * scale;
            y.push(pit_unsorted(inside, outcome)?.normal);
        }
        Ok(berkowitz_with(&y, self.gamma)?.statistic)
    }

    /// Statistics of `reps` replications; replication i uses stream
    /// `source.derive(offset + i)`. Output is ordered by replication index.
    pub fn simulate(&self, reps: usize, source: SeededSource, offset: u64, scale: f64) -> Result<Vec<f64>> {
        let len = self.path_length();
        (0..reps)
            .into_par_iter()
            .map(|i| {
                let mut rng = source.derive(offset + i as u64).rng();
                let mut path = vec![0.0; len];
                rng.fill_standard_normal(&mut path);
                self.statistic(&path, scale)
            })
            .collect()
    }
}

/// Type-7 (linear interpolation) sample percentile of sorted data.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * pct / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub m: usize,
    pub k: usize,
    pub gamma: f64,
    pub percentile: u32,
    pub critical_value: f64,
    pub reps: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub h: usize,
}

/// Calibrates the four critical values for one (M, K, γ) cell. Each
/// repetition uses a disjoint block of replication streams; percentiles are
/// averaged over repetitions.
pub fn calibrate_design(
    design: &NullDesign,
    reps: usize,
    repetitions: usize,
    seed: u64,
) -> Result<Vec<TableEntry>> {
    if reps < 2 || repetitions < 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replications and 1 repetition (got {reps}, {repetitions})"
        )));
    }
    let source = cell_source(seed, design);
    let mut sums = [0.0; 4];
    for rep in 0..repetitions {
        let mut stats = design.simulate(reps, source, (rep * reps) as u64, 1.0)?;
        stats.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));
        for (slot, pct) in sums.iter_mut().zip(PERCENTILES) {
            *slot += percentile_sorted(&stats, pct as f64);
        }
    }
    Ok(PERCENTILES
        .iter()
        .zip(sums)
        .map(|(&percentile, total)| TableEntry {
            m: design.m,
            k: design.k,
            gamma: design.gamma,
            percentile,
            critical_value: total / repetitions as f64,
            reps,
            repetitions,
            seed,
            h: design.h,
        })
        .collect())
}

/// Stream family of one lattice cell, so that cells calibrated separately
/// or together give the same numbers.
fn cell_source(seed: u64, design: &NullDesign) -> SeededSource {
    let key = (design.m as u64) << 40 ^ (design.k as u64) << 20 ^ (design.h as u64) << 8;
    SeededSource::new(seed, 0).derive(key ^ design.gamma.to_bits().rotate_left(17))
}

pub fn calibrate(
    m: usize,
    k: usize,
    h: usize,
    gamma: f64,
    reps: usize,
    repetitions: usize,
    seed: u64,
) -> Result<Vec<TableEntry>> {
    calibrate_design(&NullDesign::new(m, k, h, gamma)?, reps, repetitions, seed)
}

/// Fraction of replications rejected at `critical`, per outcome scale.
pub fn power_curve(
    design: &NullDesign,
    scales: &[f64],
    critical: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    // A stream family distinct from calibration; common random numbers
    // across scales.
    let source = cell_source(seed, design).derive(u64::MAX);
    scales
        .iter()
        .map(|&scale| {
            if !(scale > 0.0) {
                return Err(Error::InvalidParameter(format!("scale factor {scale} must be positive")));
            }
            let stats = design.simulate(reps, source, 0, scale)?;
            Ok(stats.iter().filter(|s| **s > critical).count() as f64 / reps as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CriticalValueTable {
    pub entries: Vec<TableEntry>,
}

const COLUMNS: [&str; 9] = [
    "M",
    "K",
    "gamma",
    "percentile",
    "critical_value",
    "reps",
    "repetitions",
    "seed",
    "H",
];

impl CriticalValueTable {
    pub fn new(entries: Vec<TableEntry>) -> Self {
        Self { entries }
    }

    /// Horizon shared by all entries, or an error when they disagree.
    pub fn horizon(&self) -> Result<Option<usize>> {
        let mut h = None;
        for e in &self.entries {
            match h {
                None => h = Some(e.h),
                Some(x) if x != e.h => {
                    return Err(Error::InvalidParameter(format!(
                        "table mixes horizons {x} and {}",
                        e.h
                    )))
                }
                _ => {}
            }
        }
        Ok(h)
    }

    fn value(&self, m: usize, k: usize, gamma: f64, pct: u32) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.m == m && e.k == k && e.percentile == pct && same_gamma(e.gamma, gamma))
            .map(|e| e.critical_value)
    }

    /// Critical value at `level`, interpolated bilinearly in (M, K) inside
    /// the calibrated lattice. Extrapolation is refused.
    pub fn lookup(&self, m: usize, k: usize, gamma: f64, level: f64) -> Result<f64> {
        let pct = percentile_for_level(level)?;
        let cells: Vec<&TableEntry> = self
            .entries
            .iter()
            .filter(|e| e.percentile == pct && same_gamma(e.gamma, gamma))
            .collect();
        if cells.is_empty() {
            return Err(Error::MissingCalibration(format!("no entries for gamma {gamma}")));
        }
        if let Some(v) = self.value(m, k, gamma, pct) {
            return Ok(v);
        }
        let mut ms: Vec<usize> = cells.iter().map(|e| e.m).collect();
        let mut ks: Vec<usize> = cells.iter().map(|e| e.k).collect();
        ms.sort_unstable();
        ms.dedup();
        ks.sort_unstable();
        ks.dedup();
        let bracket = |grid: &[usize], x: usize| -> Option<(usize, usize)> {
            if let Ok(i) = grid.binary_search(&x) {
                return Some((grid[i], grid[i]));
            }
            let i = grid.partition_point(|g| *g < x);
            if i == 0 || i == grid.len() {
                None
            } else {
                Some((grid[i - 1], grid[i]))
            }
        };
        let outside = || {
            Error::MissingCalibration(format!(
                "(M, K) = ({m}, {k}) lies outside the calibrated lattice for gamma {gamma}"
            ))
        };
        let (m0, m1) = bracket(&ms, m).ok_or_else(outside)?;
        let (k0, k1) = bracket(&ks, k).ok_or_else(outside)?;
        let corner = |mm: usize, kk: usize| self.value(mm, kk, gamma, pct).ok_or_else(outside);
        let tm = if m1 == m0 { 0.0 } else { (m - m0) as f64 / (m1 - m0) as f64 };
        let tk = if k1 == k0 { 0.0 } else { (k - k0) as f64 / (k1 - k0) as f64 };
        let v00 = corner(m0, k0)?;
        let v10 = if m1 == m0 { v00 } else { corner(m1, k0)? };
        let v01 = if k1 == k0 { v00 } else { corner(m0, k1)? };
        let v11 = if m1 == m0 {
            v01
        } else if k1 == k0 {
            v10
        } else {
            corner(m1, k1)?
        };
        Ok((1.0 - tm) * (1.0 - tk) * v00 + tm * (1.0 - tk) * v10 + (1.0 - tm) * tk * v01 + tm * tk * v11)
    }

    /// Writes an optional `#` provenance line, the column header and one
    /// row per entry.
    pub fn write<W: Write>(&self, out: W, provenance: Option<&str>) -> std::io::Result<()> {
        let mut out = out;
        if let Some(p) = provenance {
            writeln!(out, "# {p}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COLUMNS)?;
        for e in &self.entries {
            w.write_record([
                e.m.to_string(),
                e.k.to_string(),
                format!("{:?}", e.gamma),
                e.percentile.to_string(),
                format!("{:?}", e.critical_value),
                e.reps.to_string(),
                e.repetitions.to_string(),
                e.seed.to_string(),
                e.h.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut body = String::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line.map_err(|e| Error::Structure {
                row: i + 1,
                message: e.to_string(),
            })?;
            if line.trim_start().starts_with('#') {
                continue;
            }
            body.push_str(&line);
            body.push('\n');
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Structure {
                row: 1,
                message: e.to_string(),
            })?
            .clone();
        let position = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Structure {
                row: 1,
                message: format!("missing column {name}"),
            })
        };
        let idx: Vec<usize> = COLUMNS.iter().map(|c| position(c)).collect::<Result<_>>()?;
        let mut entries = Vec::new();
        for (r, rec) in reader.records().enumerate() {
            let row = r + 2;
            let rec = rec.map_err(|e| Error::Structure {
                row,
                message: e.to_string(),
            })?;
            let cell = |j: usize| -> Result<&str> {
                rec.get(idx[j]).ok_or_else(|| Error::Structure {
                    row,
                    message: format!("missing {}", COLUMNS[j]),
                })
            };
            let parse_err = |j: usize| Error::Parse {
                row,
                column: idx[j] + 1,
                message: format!("bad {}", COLUMNS[j]),
            };
            let int = |j: usize| -> Result<usize> { cell(j)?.parse().map_err(|_| parse_err(j)) };
            let float = |j: usize| -> Result<f64> { cell(j)?.parse().map_err(|_| parse_err(j)) };
            entries.push(TableEntry {
                m: int(0)?,
                k: int(1)?,
                gamma: float(2)?,
                percentile: int(3)? as u32,
                critical_value: float(4)?,
                reps: int(5)?,
                repetitions: int(6)?,
                seed: cell(7)?.parse().map_err(|_| parse_err(7))?,
                h: int(8)?,
            });
        }
        Ok(Self { entries })
    }
}

fn same_gamma(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}
