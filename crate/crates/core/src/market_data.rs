//! Returns panels, rolling windows and multi-period portfolio returns.
//!
//! Returns are treated as per-period log returns, so an H-period return is
//! the plain sum of H consecutive per-period returns.

use std::collections::HashSet;
use std::io::{Read, Write};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";

/// A dated T×N matrix of per-period asset returns. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    returns: DMatrix<f64>,
}

impl ReturnsPanel {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        if returns.nrows() != dates.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len(),
                actual: returns.nrows(),
            });
        }
        if returns.ncols() != tickers.len() {
            return Err(Error::DimensionMismatch {
                expected: tickers.len(),
                actual: returns.ncols(),
            });
        }
        let mut seen = HashSet::new();
        for t in &tickers {
            if !seen.insert(t.as_str()) {
                return Err(Error::Structure {
                    row: 1,
                    message: format!("duplicate ticker {t}"),
                });
            }
        }
        for i in 1..dates.len() {
            if dates[i] <= dates[i - 1] {
                return Err(Error::Ordering {
                    row: i + 2,
                    previous: dates[i - 1].to_string(),
                    current: dates[i].to_string(),
                });
            }
        }
        if let Some(pos) = returns.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % returns.nrows(), pos / returns.nrows());
            return Err(Error::Parse {
                row: row + 2,
                column: col + 2,
                message: "non-finite return".into(),
            });
        }
        Ok(Self {
            dates,
            tickers,
            returns,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    /// Number of periods, T.
    pub fn periods(&self) -> usize {
        self.returns.nrows()
    }

    /// Number of assets, N.
    pub fn assets(&self) -> usize {
        self.returns.ncols()
    }

    /// Rows covered by `window` as an owned M×N matrix.
    pub fn window_rows(&self, window: &WindowSpec) -> Result<DMatrix<f64>> {
        window.check_inside(self.periods())?;
        Ok(self.returns.rows(window.start(), window.length).into_owned())
    }

    /// Writes the panel in the ingestion format. Floats use the shortest
    /// representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = Vec::with_capacity(self.assets() + 1);
        header.push("date".to_string());
        header.extend(self.tickers.iter().cloned());
        w.write_record(&header)?;
        for (t, date) in self.dates.iter().enumerate() {
            let mut rec = Vec::with_capacity(self.assets() + 1);
            rec.push(date.format(DATE_FORMAT).to_string());
            rec.extend(self.returns.row(t).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()
    }
}

/// Parses a comma-separated returns file: header `date,<ticker>,...`, ISO
/// dates in the first column, decimal returns elsewhere. Lines starting
/// with `#` are skipped.
pub fn load_returns<R: Read>(source: R) -> Result<ReturnsPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source);
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| Error::Structure {
            row: 1,
            message: e.to_string(),
        })?,
        None => {
            return Err(Error::Structure {
                row: 1,
                message: "empty input".into(),
            })
        }
    };
    if header.len() < 2 {
        return Err(Error::Structure {
            row: 1,
            message: "header needs a date column and at least one ticker".into(),
        });
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if let Some(i) = tickers.iter().position(|t| t.is_empty()) {
        return Err(Error::Structure {
            row: 1,
            message: format!("empty ticker in column {}", i + 2),
        });
    }
    let n = tickers.len();
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::Structure {
            row: e.position().map_or(i + 2, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        // file line, so that skipped comment lines still count
        let row = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != n + 1 {
            return Err(Error::Structure {
                row,
                message: format!("expected {} cells, found {}", n + 1, rec.len()),
            });
        }
        let date_cell = rec.get(0).unwrap_or_default();
        let date = NaiveDate::parse_from_str(date_cell, DATE_FORMAT).map_err(|e| Error::Parse {
            row,
            column: 1,
            message: format!("bad date {date_cell:?}: {e}"),
        })?;
        dates.push(date);
        for (j, cell) in rec.iter().enumerate().skip(1) {
            if cell.is_empty() {
                return Err(Error::Structure {
                    row,
                    message: format!("missing cell in column {} ({})", j + 1, tickers[j - 1]),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: j + 1,
                    message: format!("non-finite cell {cell:?}"),
                });
            }
            values.push(v);
        }
    }
    let t = dates.len();
    let returns = DMatrix::from_row_slice(t, n, &values);
    ReturnsPanel::new(dates, tickers, returns)
}

/// Estimation window ending at period `origin` (inclusive) and covering
/// `length` periods, with an investment horizon of `horizon` periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub origin: usize,
    pub length: usize,
    pub horizon: usize,
}

impl WindowSpec {
    pub fn new(origin: usize, length: usize, horizon: usize) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::InvalidWindow("horizon must be at least 1".into()));
        }
        if length < horizon {
            return Err(Error::InvalidWindow(format!(
                "window length {length} shorter than horizon {horizon}"
            )));
        }
        if origin + 1 < length {
            return Err(Error::InvalidWindow(format!(
                "window of {length} periods ending at {origin} starts before the panel"
            )));
        }
        Ok(Self {
            origin,
            length,
            horizon,
        })
    }

    /// First period index covered by the window.
    pub fn start(&self) -> usize {
        self.origin + 1 - self.length
    }

    pub fn check_inside(&self, periods: usize) -> Result<()> {
        if self.origin >= periods {
            return Err(Error::InvalidWindow(format!(
                "origin {} beyond panel of {periods} periods",
                self.origin
            )));
        }
        Ok(())
    }

    /// True when the `horizon` periods after the origin exist in the panel.
    pub fn has_outcome(&self, periods: usize) -> bool {
        self.origin + self.horizon < periods
    }
}

/// Per-period portfolio returns `w · r_t` over the window.
pub fn portfolio_return_series(
    panel: &ReturnsPanel,
    weights: &DVector<f64>,
    window: &WindowSpec,
) -> Result<Vec<f64>> {
    if weights.len() != panel.assets() {
        return Err(Error::DimensionMismatch {
            expected: panel.assets(),
            actual: weights.len(),
        });
    }
    window.check_inside(panel.periods())?;
    let rows = panel.returns.rows(window.start(), window.length);
    Ok((rows * weights).iter().copied().collect())
}

/// Realised H-period portfolio return over periods `origin+1 ..= origin+H`.
pub fn realized_return(
    panel: &ReturnsPanel,
    weights: &DVector<f64>,
    window: &WindowSpec,
) -> Result<f64> {
    if weights.len() != panel.assets() {
        return Err(Error::DimensionMismatch {
            expected: panel.assets(),
            actual: weights.len(),
        });
    }
    if !window.has_outcome(panel.periods()) {
        return Err(Error::InsufficientData {
            required: window.origin + window.horizon + 1,
            actual: panel.periods(),
        });
    }
    let rows = panel.returns.rows(window.origin + 1, window.horizon);
    Ok((rows * weights).iter().sum())
}

/// Overlapping H-period sums: element j aggregates periods j .. j+H−1.
pub fn horizon_returns(series: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidWindow("horizon must be at least 1".into()));
    }
    if series.len() < horizon {
        return Err(Error::InsufficientData {
            required: horizon,
            actual: series.len(),
        });
    }
    Ok(series.windows(horizon).map(|w| w.iter().sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SMALL: &str = "date,AAA,BBB\n2020-01-06,0.01,0.02\n2020-01-13,-0.01,0.00\n2020-01-20,0.03,0.04\n";

    #[test]
    fn parses_small_file() {
        let p = load_returns(SMALL.as_bytes()).unwrap();
        assert_eq!(p.periods(), 3);
        assert_eq!(p.assets(), 2);
        assert_eq!(p.tickers(), &["AAA".to_string(), "BBB".to_string()]);
        assert_eq!(p.returns()[(2, 1)], 0.04);
    }

    #[test]
    fn missing_cell_is_structural() {
        let text = "date,AAA,BBB\n2020-01-06,0.01,\n";
        match load_returns(text.as_bytes()).unwrap_err() {
            Error::Structure { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("column 3"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn ragged_row_is_structural() {
        let text = "date,AAA,BBB\n2020-01-06,0.01\n";
        assert!(matches!(
            load_returns(text.as_bytes()),
            Err(Error::Structure { row: 2, .. })
        ));
    }

    #[test]
    fn non_numeric_reports_cell() {
        let text = "date,AAA,BBB\n2020-01-06,0.01,0.02\n2020-01-13,abc,0.02\n";
        assert!(matches!(
            load_returns(text.as_bytes()),
            Err(Error::Parse { row: 3, column: 2, .. })
        ));
    }

    #[test]
    fn comment_lines_skipped_but_counted() {
        let text = "# produced by a tool\ndate,AAA\n2020-01-06,0.01\n2020-01-13,x\n";
        assert!(matches!(
            load_returns(text.as_bytes()),
            Err(Error::Parse { row: 4, column: 2, .. })
        ));
        let ok = "# header\ndate,AAA\n2020-01-06,0.01\n";
        assert_eq!(load_returns(ok.as_bytes()).unwrap().periods(), 1);
    }

    #[test]
    fn decreasing_dates_rejected() {
        let text = "date,AAA\n2020-01-13,0.01\n2020-01-06,0.02\n";
        assert!(matches!(
            load_returns(text.as_bytes()),
            Err(Error::Ordering { row: 3, .. })
        ));
    }

    #[test]
    fn duplicate_tickers_rejected() {
        let text = "date,AAA,AAA\n2020-01-13,0.01,0.02\n";
        assert!(matches!(load_returns(text.as_bytes()), Err(Error::Structure { row: 1, .. })));
    }

    #[test]
    fn unit_weight_selects_column() {
        let p = load_returns(SMALL.as_bytes()).unwrap();
        let w = DVector::from_vec(vec![0.0, 1.0]);
        let win = WindowSpec::new(2, 3, 1).unwrap();
        assert_eq!(portfolio_return_series(&p, &w, &win).unwrap(), vec![0.02, 0.0, 0.04]);
    }

    #[test]
    fn equal_weights_average() {
        let p = load_returns(SMALL.as_bytes()).unwrap();
        let w = DVector::from_vec(vec![0.5, 0.5]);
        let win = WindowSpec::new(0, 1, 1).unwrap();
        let s = portfolio_return_series(&p, &w, &win).unwrap();
        assert!((s[0] - 0.015).abs() < 1e-15);
        let win = WindowSpec::new(2, 1, 1).unwrap();
        let s = portfolio_return_series(&p, &w, &win).unwrap();
        assert!((s[0] - 0.035).abs() < 1e-15);
    }

    #[test]
    fn weight_dimension_checked() {
        let p = load_returns(SMALL.as_bytes()).unwrap();
        let w = DVector::from_vec(vec![1.0]);
        let win = WindowSpec::new(2, 3, 1).unwrap();
        assert!(matches!(
            portfolio_return_series(&p, &w, &win),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn horizon_examples() {
        assert_eq!(horizon_returns(&[0.01, 0.02, 0.03], 1).unwrap(), vec![0.01, 0.02, 0.03]);
        let h2 = horizon_returns(&[0.01, 0.02, 0.03], 2).unwrap();
        assert!((h2[0] - 0.03).abs() < 1e-15 && (h2[1] - 0.05).abs() < 1e-15);
        assert_eq!(horizon_returns(&vec![0.0; 312], 4).unwrap().len(), 309);
        assert!(horizon_returns(&[0.1], 2).is_err());
    }

    #[test]
    fn window_validation() {
        assert!(WindowSpec::new(10, 5, 6).is_err());
        assert!(WindowSpec::new(3, 5, 1).is_err());
        assert_eq!(WindowSpec::new(4, 5, 1).unwrap().start(), 0);
    }

    proptest! {
        #[test]
        fn random_weights_match_loop(seed in 0u64..1000) {
            let src = crate::randgen::SeededSource::new(seed, 1);
            let mut rng = src.rng();
            let n = 5;
            let t = 12;
            let data: Vec<f64> = (0..t * n).map(|_| rng.standard_normal() * 0.02).collect();
            let panel = ReturnsPanel::new(
                crate::randgen::weekly_dates(t),
                (0..n).map(|i| format!("X{i}")).collect(),
                DMatrix::from_row_slice(t, n, &data),
            ).unwrap();
            let w = DVector::from_iterator(n, (0..n).map(|_| rng.uniform()));
            let win = WindowSpec::new(11, 10, 2).unwrap();
            let got = portfolio_return_series(&panel, &w, &win).unwrap();
            prop_assert_eq!(got.len(), 10);
            for (i, g) in got.iter().enumerate() {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += w[j] * data[(win.start() + i) * n + j];
                }
                prop_assert!((g - acc).abs() < 1e-15);
            }
        }

        #[test]
        fn horizon_length_and_composition(
            series in proptest::collection::vec(-0.1f64..0.1, 1..20),
            a in 1usize..6,
            b in 1usize..6,
        ) {
            if series.len() >= a {
                prop_assert_eq!(horizon_returns(&series, a).unwrap().len(), series.len() - a + 1);
            }
            // Aggregating with b then a equals a window of a+b-1 periods
            // where each period is counted by how many b-blocks cover it.
            if series.len() >= a + b - 1 {
                let inner = horizon_returns(&series, b).unwrap();
                let nested = horizon_returns(&inner, a).unwrap();
                for (j, v) in nested.iter().enumerate() {
                    let mut brute = 0.0;
                    for i in 0..a {
                        for k in 0..b {
                            brute += series[j + i + k];
                        }
                    }
                    prop_assert!((v - brute).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn csv_round_trip(seed in 0u64..200, t in 1usize..8, n in 1usize..5) {
            let mut rng = crate::randgen::SeededSource::new(seed, 0).rng();
            let data: Vec<f64> = (0..t * n).map(|_| rng.standard_normal() * 0.03).collect();
            let panel = ReturnsPanel::new(
                crate::randgen::weekly_dates(t),
                (0..n).map(|i| format!("T{i}")).collect(),
                DMatrix::from_row_slice(t, n, &data),
            ).unwrap();
            let mut buf = Vec::new();
            panel.write_csv(&mut buf).unwrap();
            prop_assert_eq!(load_returns(buf.as_slice()).unwrap(), panel);
        }
    }
}
