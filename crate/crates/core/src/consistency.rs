//! Rolling B×C grids inside the efficient frontier, scored cell by cell with
//! Berkowitz statistics of empirical-CDF density forecasts.
//!
//! Grid cells are identified by position (b, c) across origins; the return
//! and volatility targets move with each origin's frontier. Origins are H
//! periods apart. The map for decision date τ uses the K origins
//! τ − K·H, …, τ − H, whose outcomes are all observed by τ.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::backtest::sharpe;
use crate::calibration::CriticalValueTable;
use crate::density::{berkowitz_with, pit_unsorted};
use crate::error::{Error, Result};
use crate::estimation::{estimate, Estimator, MomentEstimate};
use crate::market_data::{horizon_returns, portfolio_return_series, realized_return, ReturnsPanel, WindowSpec};
use crate::optimizer::{
    frontier, grid_portfolio, random_portfolios, Feasibility, Frontier, Portfolio, Provenance,
};
use crate::randgen::SeededSource;

/// Half-width of the moving average applied along the volatility axis.
pub const SMOOTHING_HALF_WIDTH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub m: usize,
    pub h: usize,
    pub levels: usize,
    pub cols: usize,
    pub cap: f64,
    pub rp: usize,
    pub estimator: Estimator,
    pub seed: u64,
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.levels < 2 || self.cols < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs B ≥ 2 and C ≥ 2 (got {} × {})",
                self.levels, self.cols
            )));
        }
        if self.rp < 1 {
            return Err(Error::InvalidParameter("need at least one random portfolio".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub b: usize,
    pub c: usize,
    pub target_return: f64,
    pub target_sd: f64,
    pub portfolio: Portfolio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub origin: usize,
    pub levels: usize,
    pub cols: usize,
    pub moments: MomentEstimate,
    pub frontier: Frontier,
    /// Row-major: index `b * cols + c`.
    pub cells: Vec<GridCell>,
}

impl Grid {
    pub fn cell(&self, b: usize, c: usize) -> &GridCell {
        &self.cells[b * self.cols + c]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

fn nearest(
    pool: &[Portfolio],
    target: (f64, f64),
    scale: (f64, f64),
) -> &Portfolio {
    let dist = |p: &Portfolio| {
        let dr = (p.expected_return - target.0) / scale.0;
        let ds = (p.stdev - target.1) / scale.1;
        dr * dr + ds * ds
    };
    let mut best = &pool[0];
    let mut best_d = dist(best);
    for p in &pool[1..] {
        let d = dist(p);
        if d < best_d {
            best = p;
            best_d = d;
        }
    }
    best
}

/// Builds the grid from the moments of the window ending at `origin`.
pub fn build_grid(panel: &ReturnsPanel, origin: usize, spec: &GridSpec) -> Result<Grid> {
    spec.validate()?;
    let window = WindowSpec::new(origin, spec.m, spec.h)?;
    let moments = estimate(panel, &window, spec.estimator)?;
    build_grid_from_moments(moments, origin, spec)
}

pub fn build_grid_from_moments(moments: MomentEstimate, origin: usize, spec: &GridSpec) -> Result<Grid> {
    spec.validate()?;
    let front = frontier(&moments, spec.cap, spec.levels)?;
    let source = SeededSource::new(spec.seed, 0).derive(origin as u64);

    // Random portfolios per return level define the outer volatility edge.
    let pools: Vec<Vec<Portfolio>> = front
        .points
        .par_iter()
        .enumerate()
        .map(|(b, point)| {
            let mut pool = vec![point.portfolio.clone()];
            pool.extend(random_portfolios(
                &moments,
                point.portfolio.expected_return,
                spec.cap,
                spec.rp,
                source.derive(b as u64),
            )?);
            Ok(pool)
        })
        .collect::<Result<_>>()?;
    let edges: Vec<(f64, f64)> = front
        .points
        .iter()
        .zip(&pools)
        .map(|(p, pool)| {
            let lo = p.portfolio.stdev;
            let hi = pool.iter().map(|q| q.stdev).fold(lo, f64::max);
            (lo, hi)
        })
        .collect();
    let ret_scale = (front.max_ret().expected_return - front.min_var().expected_return).max(f64::MIN_POSITIVE);
    let sd_lo = edges.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let sd_hi = edges.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let sd_scale = (sd_hi - sd_lo).max(f64::MIN_POSITIVE);

    let cols = spec.cols;
    let cells: Vec<GridCell> = (0..spec.levels * cols)
        .into_par_iter()
        .map(|idx| {
            let (b, c) = (idx / cols, idx % cols);
            let point = &front.points[b].portfolio;
            let (lo, hi) = edges[b];
            let target_sd = lo + (hi - lo) * c as f64 / (cols - 1) as f64;
            let target_return = point.expected_return;
            let portfolio = if c == 0 || hi <= lo * (1.0 + 1e-12) {
                point.clone()
            } else {
                let start = nearest(&pools[b], (target_return, target_sd), (ret_scale, sd_scale));
                grid_portfolio(&moments, target_return, target_sd, spec.cap, start)
            };
            GridCell {
                b,
                c,
                target_return,
                target_sd,
                portfolio,
            }
        })
        .collect();
    for cell in &cells {
        let check = Feasibility::check(&cell.portfolio.weights, spec.cap, None);
        if !check.is_feasible() {
            return Err(Error::Solver(format!(
                "grid cell ({}, {}) failed the feasibility check: {check:?}",
                cell.b, cell.c
            )));
        }
    }
    Ok(Grid {
        origin,
        levels: spec.levels,
        cols,
        moments,
        frontier: front,
        cells,
    })
}

/// Per-cell PIT scores of one origin's grid, plus the in-sample Sharpe
/// ratios and realised outcomes the strategies need.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginRecord {
    pub origin: usize,
    pub grid: Grid,
    pub probabilities: Vec<f64>,
    pub normals: Vec<f64>,
    pub realized: Vec<f64>,
    /// `None` when the in-sample H-period returns have zero variance.
    pub in_sample_sharpe: Vec<Option<f64>>,
}

pub fn score_origin(panel: &ReturnsPanel, grid: Grid, h: usize) -> Result<OriginRecord> {
    let window = WindowSpec::new(grid.origin, grid.moments.sample_size, h)?;
    let scored: Vec<(f64, f64, f64, Option<f64>)> = grid
        .cells
        .par_iter()
        .map(|cell| {
            let w = &cell.portfolio.weights;
            let series = portfolio_return_series(panel, w, &window)?;
            let inside = horizon_returns(&series, h)?;
            let outcome = realized_return(panel, w, &window)?;
            let pit = pit_unsorted(&inside, outcome)?;
            Ok((pit.probability, pit.normal, outcome, sharpe(&inside).ok()))
        })
        .collect::<Result<_>>()?;
    Ok(OriginRecord {
        origin: grid.origin,
        probabilities: scored.iter().map(|s| s.0).collect(),
        normals: scored.iter().map(|s| s.1).collect(),
        realized: scored.iter().map(|s| s.2).collect(),
        in_sample_sharpe: scored.iter().map(|s| s.3).collect(),
        grid,
    })
}

/// Symmetric moving average with window 2·half + 1, truncated at the ends.
pub fn smooth_row(raw: &[f64], half: usize) -> Vec<f64> {
    let n = raw.len();
    (0..n)
        .map(|c| {
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(n - 1);
            raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyMap {
    pub levels: usize,
    pub cols: usize,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub consistent: Vec<bool>,
    pub level: f64,
    pub gamma: f64,
    pub critical: f64,
    pub proportion: f64,
}

impl ConsistencyMap {
    /// Smooths `raw` along c and thresholds at `critical`.
    pub fn from_raw(levels: usize, cols: usize, raw: Vec<f64>, gamma: f64, level: f64, critical: f64) -> Self {
        let mut smoothed = Vec::with_capacity(raw.len());
        for b in 0..levels {
            smoothed.extend(smooth_row(&raw[b * cols..(b + 1) * cols], SMOOTHING_HALF_WIDTH));
        }
        let consistent: Vec<bool> = smoothed.iter().map(|s| *s < critical).collect();
        let proportion = consistent.iter().filter(|c| **c).count() as f64 / consistent.len() as f64;
        Self {
            levels,
            cols,
            raw,
            smoothed,
            consistent,
            level,
            gamma,
            critical,
            proportion,
        }
    }

    pub fn is_consistent(&self, b: usize, c: usize) -> bool {
        self.consistent[b * self.cols + c]
    }

    /// Smallest consistent c per return level, `None` where there is none.
    pub fn min_consistent_c(&self) -> Vec<Option<usize>> {
        (0..self.levels)
            .map(|b| (0..self.cols).find(|&c| self.is_consistent(b, c)))
            .collect()
    }
}

/// Raw Berkowitz statistic per cell over the given origins, oldest first.
pub fn raw_statistics(records: &[&OriginRecord], gamma: f64) -> Result<Vec<f64>> {
    let first = records.first().ok_or(Error::InsufficientData {
        required: 2,
        actual: 0,
    })?;
    let cells = first.normals.len();
    if records.iter().any(|r| r.normals.len() != cells) {
        return Err(Error::DimensionMismatch {
            expected: cells,
            actual: records.iter().map(|r| r.normals.len()).find(|n| *n != cells).unwrap_or(0),
        });
    }
    (0..cells)
        .map(|i| {
            let y: Vec<f64> = records.iter().map(|r| r.normals[i]).collect();
            Ok(berkowitz_with(&y, gamma)?.statistic)
        })
        .collect()
}

/// Scores the cells over K origins against the calibrated critical value.
pub fn score_cells(
    records: &[&OriginRecord],
    m: usize,
    gamma: f64,
    table: &CriticalValueTable,
    level: f64,
) -> Result<ConsistencyMap> {
    let critical = table.lookup(m, records.len(), gamma, level)?;
    let grid = &records[0].grid;
    let raw = raw_statistics(records, gamma)?;
    Ok(ConsistencyMap::from_raw(grid.levels, grid.cols, raw, gamma, level, critical))
}

/// Lowest-volatility consistent cell per return level.
pub fn consistency_frontier<'a>(map: &ConsistencyMap, grid: &'a Grid) -> Vec<(usize, &'a Portfolio)> {
    map.min_consistent_c()
        .into_iter()
        .enumerate()
        .filter_map(|(b, c)| c.map(|c| (b, &grid.cell(b, c).portfolio)))
        .collect()
}

/// All origin records needed for D decision dates with K scoring origins
/// each. Origin j sits at period M − 1 + j·H; decision date d is origin K + d.
#[derive(Debug, Clone)]
pub struct RollingStudy {
    pub spec: GridSpec,
    pub k: usize,
    pub decisions: usize,
    pub dates: Vec<NaiveDate>,
    pub records: Vec<OriginRecord>,
}

/// Periods needed for D decision dates: M + (K + D)·H.
pub fn required_periods(m: usize, k: usize, h: usize, decisions: usize) -> usize {
    m + (k + decisions) * h
}

impl RollingStudy {
    pub fn new(panel: &ReturnsPanel, spec: &GridSpec, k: usize, decisions: usize) -> Result<Self> {
        if k < 2 || decisions < 1 {
            return Err(Error::InvalidParameter(format!(
                "need K ≥ 2 and at least one decision date (got K={k}, D={decisions})"
            )));
        }
        let required = required_periods(spec.m, k, spec.h, decisions);
        if panel.periods() < required {
            return Err(Error::InsufficientData {
                required,
                actual: panel.periods(),
            });
        }
        let origins: Vec<usize> = (0..k + decisions).map(|j| spec.m - 1 + j * spec.h).collect();
        let records = origins
            .iter()
            .map(|&o| score_origin(panel, build_grid(panel, o, spec)?, spec.h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            k,
            decisions,
            dates: panel.dates().to_vec(),
            records,
        })
    }

    /// Largest number of decision dates the panel supports.
    pub fn max_decisions(periods: usize, m: usize, k: usize, h: usize) -> usize {
        periods.saturating_sub(m + k * h) / h
    }

    pub fn decision_record(&self, d: usize) -> &OriginRecord {
        &self.records[self.k + d]
    }

    pub fn decision_date(&self, d: usize) -> NaiveDate {
        self.dates[self.decision_record(d).origin]
    }

    pub fn scoring_records(&self, d: usize) -> Vec<&OriginRecord> {
        self.records[d..d + self.k].iter().collect()
    }

    pub fn map(&self, d: usize, gamma: f64, table: &CriticalValueTable, level: f64) -> Result<ConsistencyMap> {
        score_cells(&self.scoring_records(d), self.spec.m, gamma, table, level)
    }

    /// One map per decision date.
    pub fn maps(&self, gamma: f64, table: &CriticalValueTable, level: f64) -> Result<Vec<ConsistencyMap>> {
        (0..self.decisions).map(|d| self.map(d, gamma, table, level)).collect()
    }

    /// Writes the per-cell records of decision date `d`.
    pub fn write_map<W: Write>(&self, d: usize, map: &ConsistencyMap, out: &mut W) -> std::io::Result<()> {
        let scoring = self.scoring_records(d);
        let decision = self.decision_record(d);
        let date = self.decision_date(d);
        writeln!(
            out,
            "origin_date,b,c,target_return,target_sd,realized_mean,realized_sd,statistic,smoothed,consistent,weights,avg_target_return,avg_target_sd"
        )?;
        let kf = scoring.len() as f64;
        for (i, cell) in decision.grid.cells.iter().enumerate() {
            let realized: Vec<f64> = scoring.iter().map(|r| r.realized[i]).collect();
            let mean = realized.iter().sum::<f64>() / kf;
            let sd = (realized.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / kf).sqrt();
            let avg_ret = scoring.iter().map(|r| r.grid.cells[i].target_return).sum::<f64>() / kf;
            let avg_sd = scoring.iter().map(|r| r.grid.cells[i].target_sd).sum::<f64>() / kf;
            let weights: Vec<String> = cell.portfolio.weights.iter().map(|w| format!("{w:?}")).collect();
            writeln!(
                out,
                "{date},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{:?},{:?}",
                cell.b + 1,
                cell.c,
                cell.target_return,
                cell.target_sd,
                mean,
                sd,
                map.raw[i],
                map.smoothed[i],
                map.consistent[i],
                weights.join(";"),
                avg_ret,
                avg_sd
            )?;
        }
        Ok(())
    }
}

/// Count of grid cells that fell back to their starting portfolio.
pub fn fallback_count(grid: &Grid) -> usize {
    grid.cells
        .iter()
        .filter(|c| c.portfolio.provenance == Provenance::Fallback)
        .count()
}
