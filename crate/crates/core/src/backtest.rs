//! Out-of-sample comparison of a frontier strategy against a
//! consistency-screened strategy that may hold cash.

use std::fmt;
use std::io::Write;

use chrono::NaiveDate;

use crate::calibration::CriticalValueTable;
use crate::consistency::{ConsistencyMap, OriginRecord, RollingStudy};
use crate::error::{Error, Result};

/// Mean over standard deviation, both with divisor n.
pub fn sharpe(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: series.len(),
        });
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance("sharpe ratio of a constant series".into()));
    }
    Ok(mean / var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Cell { b: usize, c: usize },
    Cash,
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // b is reported 1-based like the map records
            Choice::Cell { b, c } => write!(f, "{}:{}", b + 1, c),
            Choice::Cash => f.write_str("CASH"),
        }
    }
}

/// Highest in-sample Sharpe among the eligible cells. Row-major scan with a
/// strict comparison, so ties go to the lowest b and then the lowest c.
fn best_cell(record: &OriginRecord, eligible: impl Fn(usize, usize) -> bool) -> Choice {
    let cols = record.grid.cols;
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in record.in_sample_sharpe.iter().enumerate() {
        let Some(s) = *s else { continue };
        if !eligible(i / cols, i % cols) {
            continue;
        }
        if best.is_none_or(|(_, v)| s > v) {
            best = Some((i, s));
        }
    }
    match best {
        Some((i, _)) => Choice::Cell { b: i / cols, c: i % cols },
        None => Choice::Cash,
    }
}

fn realized(record: &OriginRecord, choice: Choice) -> f64 {
    match choice {
        Choice::Cell { b, c } => record.realized[b * record.grid.cols + c],
        Choice::Cash => 0.0,
    }
}

/// Strategy A: best frontier cell, or best cell anywhere with `all_cells`.
pub fn strategy_a(record: &OriginRecord, all_cells: bool) -> (Choice, f64) {
    let choice = best_cell(record, |_, c| all_cells || c == 0);
    (choice, realized(record, choice))
}

/// Strategy B: best consistent cell, else cash.
pub fn strategy_b(record: &OriginRecord, map: &ConsistencyMap) -> (Choice, f64) {
    let choice = best_cell(record, |b, c| map.is_consistent(b, c));
    (choice, realized(record, choice))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub choice: Choice,
    pub realized: f64,
}

/// Strategy A on every decision date of the study.
pub fn run_strategy_a(study: &RollingStudy, all_cells: bool) -> Vec<Decision> {
    (0..study.decisions)
        .map(|d| {
            let (choice, realized) = strategy_a(study.decision_record(d), all_cells);
            Decision { choice, realized }
        })
        .collect()
}

/// Strategy B against one map per decision date.
pub fn run_strategy_b(study: &RollingStudy, maps: &[ConsistencyMap]) -> Result<Vec<Decision>> {
    if maps.len() != study.decisions {
        return Err(Error::DimensionMismatch {
            expected: study.decisions,
            actual: maps.len(),
        });
    }
    Ok(maps
        .iter()
        .enumerate()
        .map(|(d, map)| {
            let (choice, realized) = strategy_b(study.decision_record(d), map);
            Decision { choice, realized }
        })
        .collect())
}

/// Mean, standard deviation (divisor n) and Sharpe ratio of one span.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanStats {
    pub periods: usize,
    pub mean: f64,
    pub stdev: f64,
    /// `None` when the span has zero variance, e.g. all cash.
    pub sharpe: Option<f64>,
    pub cash_periods: usize,
}

impl SpanStats {
    pub fn of(decisions: &[Decision]) -> Result<Self> {
        if decisions.is_empty() {
            return Err(Error::InsufficientData {
                required: 1,
                actual: 0,
            });
        }
        let r: Vec<f64> = decisions.iter().map(|d| d.realized).collect();
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        let stdev = (r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        Ok(Self {
            periods: r.len(),
            mean,
            stdev,
            sharpe: sharpe(&r).ok(),
            cash_periods: decisions.iter().filter(|d| d.choice == Choice::Cash).count(),
        })
    }

    pub fn cash_only(&self) -> bool {
        self.cash_periods == self.periods
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyLedger {
    /// `None` for strategy A.
    pub gamma: Option<f64>,
    pub decisions: Vec<Decision>,
    /// Consistent proportion per date, empty for strategy A.
    pub proportions: Vec<f64>,
    pub in_sample: SpanStats,
    pub out_of_sample: SpanStats,
}

impl StrategyLedger {
    fn new(gamma: Option<f64>, decisions: Vec<Decision>, proportions: Vec<f64>, split: usize) -> Result<Self> {
        Ok(Self {
            gamma,
            in_sample: SpanStats::of(&decisions[..split])?,
            out_of_sample: SpanStats::of(&decisions[split..])?,
            decisions,
            proportions,
        })
    }

    pub fn label(&self) -> String {
        match self.gamma {
            None => "A".to_string(),
            Some(g) => format!("B(gamma={g})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub level: f64,
    pub split: usize,
    pub dates: Vec<NaiveDate>,
    pub strategy_a: StrategyLedger,
    /// One ledger per candidate γ, in input order.
    pub strategy_b: Vec<StrategyLedger>,
    /// γ with the highest in-sample strategy-B mean; first wins ties.
    pub selected_gamma: f64,
}

/// Runs strategy A once and strategy B for each γ. The first `split`
/// decision dates form the in-sample span; the rest are out-of-sample.
pub fn backtest(
    study: &RollingStudy,
    table: &CriticalValueTable,
    gammas: &[f64],
    level: f64,
    split: usize,
    all_cells: bool,
) -> Result<BacktestReport> {
    if gammas.is_empty() {
        return Err(Error::InvalidParameter("no γ candidates".into()));
    }
    if split == 0 || split >= study.decisions {
        return Err(Error::InvalidParameter(format!(
            "split {split} must leave both spans non-empty ({} decision dates)",
            study.decisions
        )));
    }
    let strategy_a = StrategyLedger::new(None, run_strategy_a(study, all_cells), Vec::new(), split)?;
    let mut strategy_b = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let maps = study.maps(gamma, table, level)?;
        let proportions = maps.iter().map(|m| m.proportion).collect();
        strategy_b.push(StrategyLedger::new(
            Some(gamma),
            run_strategy_b(study, &maps)?,
            proportions,
            split,
        )?);
    }
    let mut selected = &strategy_b[0];
    for l in &strategy_b[1..] {
        if l.in_sample.mean > selected.in_sample.mean {
            selected = l;
        }
    }
    Ok(BacktestReport {
        level,
        split,
        dates: (0..study.decisions).map(|d| study.decision_date(d)).collect(),
        selected_gamma: selected.gamma.expect("strategy B ledger"),
        strategy_a,
        strategy_b,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"))
}

impl BacktestReport {
    pub fn ledgers(&self) -> impl Iterator<Item = &StrategyLedger> {
        std::iter::once(&self.strategy_a).chain(self.strategy_b.iter())
    }

    /// Long format: one line per date and strategy.
    pub fn write_ledger<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "date,span,strategy,gamma,choice,return,proportion_consistent")?;
        for ledger in self.ledgers() {
            for (d, dec) in ledger.decisions.iter().enumerate() {
                let span = if d < self.split { "in-sample" } else { "out-of-sample" };
                writeln!(
                    out,
                    "{},{span},{},{},{},{:?},{}",
                    self.dates[d],
                    if ledger.gamma.is_some() { "B" } else { "A" },
                    opt(ledger.gamma),
                    dec.choice,
                    dec.realized,
                    opt(ledger.proportions.get(d).copied())
                )?;
            }
        }
        Ok(())
    }

    /// One row per strategy (B once per γ) with both spans side by side.
    pub fn write_summary<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "strategy,gamma,selected,in_mean,in_stdev,in_sharpe,in_cash,out_mean,out_stdev,out_sharpe,out_cash,cash_only"
        )?;
        for l in self.ledgers() {
            let (i, o) = (&l.in_sample, &l.out_of_sample);
            writeln!(
                out,
                "{},{},{},{:?},{:?},{},{},{:?},{:?},{},{},{}",
                if l.gamma.is_some() { "B" } else { "A" },
                opt(l.gamma),
                l.gamma == Some(self.selected_gamma),
                i.mean,
                i.stdev,
                opt(i.sharpe),
                i.cash_periods,
                o.mean,
                o.stdev,
                opt(o.sharpe),
                o.cash_periods,
                i.cash_only() && o.cash_only()
            )?;
        }
        Ok(())
    }
}
