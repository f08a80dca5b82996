use conport_core::backtest::{backtest, run_strategy_a, run_strategy_b, strategy_a, strategy_b, Choice};
use conport_core::calibration::{calibrate, CriticalValueTable};
use conport_core::consistency::{
    build_grid, consistency_frontier, raw_statistics, required_periods, ConsistencyMap, GridSpec,
    RollingStudy,
};
use conport_core::density::{berkowitz, berkowitz_ewma};
use conport_core::estimation::Estimator;
use conport_core::optimizer::{Feasibility, Provenance};
use conport_core::randgen::{dj30_like_moments, mvn_series, SeededSource};
use conport_core::Error;

fn spec(m: usize) -> GridSpec {
    GridSpec {
        m,
        h: 4,
        levels: 5,
        cols: 10,
        cap: 0.4,
        rp: 60,
        estimator: Estimator::Sample,
        seed: 11,
    }
}

fn panel(n: usize, periods: usize, seed: u64) -> conport_core::market_data::ReturnsPanel {
    let (mu, sigma) = dj30_like_moments(n, SeededSource::new(seed, 1));
    mvn_series(&mu, &sigma, periods, SeededSource::new(seed, 2)).unwrap()
}

#[test]
fn grid_cells_feasible_and_anchored() {
    let s = spec(52);
    let p = panel(6, 60, 3);
    let grid = build_grid(&p, 51, &s).unwrap();
    assert_eq!(grid.len(), 50);
    for b in 0..5 {
        let first = grid.cell(b, 0);
        assert_eq!(first.portfolio.provenance, Provenance::Frontier);
        assert_eq!(first.portfolio.weights, grid.frontier.points[b].portfolio.weights);
        for c in 0..10 {
            let cell = grid.cell(b, c);
            assert!(Feasibility::check(&cell.portfolio.weights, s.cap, None).is_feasible());
            // targets increase along c from the frontier volatility
            if c > 0 {
                assert!(cell.target_sd >= grid.cell(b, c - 1).target_sd);
            }
            assert!(cell.portfolio.stdev >= first.portfolio.stdev - 1e-9);
        }
    }
}

#[test]
fn grid_is_deterministic() {
    let s = spec(52);
    let p = panel(6, 60, 3);
    let a = build_grid(&p, 51, &s).unwrap();
    let b = build_grid(&p, 51, &s).unwrap();
    assert_eq!(a, b);
}

#[test]
fn study_scores_match_direct_berkowitz() {
    let s = spec(52);
    let k = 6;
    let d = 3;
    let p = panel(5, required_periods(52, k, 4, d), 5);
    let study = RollingStudy::new(&p, &s, k, d).unwrap();
    assert_eq!(study.records.len(), k + d);

    // decision date 1 uses origins 1..=6, i.e. τ − K·H … τ − H
    let scoring = study.scoring_records(1);
    assert_eq!(scoring[0].origin, 51 + 4);
    assert_eq!(scoring[k - 1].origin + 4, study.decision_record(1).origin);

    let raw = raw_statistics(&scoring, 1.0).unwrap();
    let y: Vec<f64> = scoring.iter().map(|r| r.normals[7]).collect();
    let direct = berkowitz(&y).unwrap().statistic;
    assert!((raw[7] - direct).abs() < 1e-12 * direct.abs().max(1.0));
    let raw_w = raw_statistics(&scoring, 0.9).unwrap();
    let direct_w = berkowitz_ewma(&y, 0.9).unwrap().statistic;
    assert!((raw_w[7] - direct_w).abs() < 1e-12 * direct_w.abs().max(1.0));
}

#[test]
fn insufficient_history_is_rejected() {
    let s = spec(52);
    let p = panel(5, required_periods(52, 6, 4, 3) - 1, 5);
    assert!(matches!(
        RollingStudy::new(&p, &s, 6, 3),
        Err(Error::InsufficientData { .. })
    ));
}

#[test]
fn strategies_respect_the_map() {
    let s = spec(52);
    let k = 6;
    let p = panel(5, required_periods(52, k, 4, 2), 9);
    let study = RollingStudy::new(&p, &s, k, 2).unwrap();
    let record = study.decision_record(0);
    let cells = record.grid.len();

    let none = ConsistencyMap::from_raw(5, 10, vec![10.0; cells], 1.0, 0.2, 1.0);
    assert_eq!(strategy_b(record, &none), (Choice::Cash, 0.0));

    // all consistent: B ranges over every cell, A only over c = 0
    let all = ConsistencyMap::from_raw(5, 10, vec![0.0; cells], 1.0, 0.2, 1.0);
    let (b_choice, _) = strategy_b(record, &all);
    let (a_all, _) = strategy_a(record, true);
    assert_eq!(b_choice, a_all);
    let (a, a_ret) = strategy_a(record, false);
    let Choice::Cell { b, c } = a else { panic!("frontier strategy chose cash") };
    assert_eq!(c, 0);
    assert_eq!(a_ret, record.realized[b * 10]);
    let best = (0..5)
        .filter_map(|b| record.in_sample_sharpe[b * 10])
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(record.in_sample_sharpe[b * 10], Some(best));
}

#[test]
fn backtest_report_shape() {
    let s = spec(52);
    let k = 6;
    let p = panel(5, required_periods(52, k, 4, 6), 21);
    let study = RollingStudy::new(&p, &s, k, 6).unwrap();
    let mut entries = Vec::new();
    for g in [1.0, 0.9] {
        entries.extend(calibrate(52, k, 4, g, 400, 1, 1).unwrap());
    }
    let table = CriticalValueTable::new(entries);
    let report = backtest(&study, &table, &[1.0, 0.9], 0.2, 4, false).unwrap();
    assert_eq!(report.strategy_b.len(), 2);
    assert_eq!(report.strategy_a.in_sample.periods, 4);
    assert_eq!(report.strategy_a.out_of_sample.periods, 2);
    let best = report
        .strategy_b
        .iter()
        .fold((0.0, f64::NEG_INFINITY), |acc, l| {
            if l.in_sample.mean > acc.1 { (l.gamma.unwrap(), l.in_sample.mean) } else { acc }
        });
    assert_eq!(report.selected_gamma, best.0);
    for l in &report.strategy_b {
        for (d, dec) in l.decisions.iter().enumerate() {
            match dec.choice {
                Choice::Cash => assert_eq!(dec.realized, 0.0),
                Choice::Cell { b, c } => {
                    let map = study.map(d, l.gamma.unwrap(), &table, 0.2).unwrap();
                    assert!(map.is_consistent(b, c));
                }
            }
        }
    }

    let map = study.map(0, report.selected_gamma, &table, 0.2).unwrap();
    let cf = consistency_frontier(&map, &study.decision_record(0).grid);
    assert!(cf.len() <= 5);
}

#[test]
fn frontier_only_filter_reproduces_strategy_a() {
    let s = spec(52);
    let k = 6;
    let p = panel(5, required_periods(52, k, 4, 3), 4);
    let study = RollingStudy::new(&p, &s, k, 3).unwrap();
    let mut frontier_only = ConsistencyMap::from_raw(5, 10, vec![0.0; 50], 1.0, 0.2, 1.0);
    frontier_only.consistent = (0..50).map(|i| i % 10 == 0).collect();
    let maps = vec![frontier_only; 3];
    assert_eq!(run_strategy_b(&study, &maps).unwrap(), run_strategy_a(&study, false));

    let all = ConsistencyMap::from_raw(5, 10, vec![0.0; 50], 1.0, 0.2, 1.0);
    let map = study.map(0, 1.0, &CriticalValueTable::new(calibrate(52, k, 4, 1.0, 200, 1, 2).unwrap()), 0.2).unwrap();
    let cf = consistency_frontier(&all, &study.decision_record(0).grid);
    assert_eq!(cf.len(), 5);
    assert!(cf.iter().all(|(b, p)| p.weights == study.decision_record(0).grid.cell(*b, 0).portfolio.weights));
    let empty = ConsistencyMap::from_raw(5, 10, vec![9.0; 50], 1.0, 0.2, 1.0);
    assert!(consistency_frontier(&empty, &study.decision_record(0).grid).is_empty());
    // smoothed values stay inside the raw window range
    for b in 0..5 {
        for c in 0..10usize {
            let lo = c.saturating_sub(4);
            let hi = (c + 4).min(9);
            let w = &map.raw[b * 10 + lo..=b * 10 + hi];
            let sm = map.smoothed[b * 10 + c];
            assert!(sm >= w.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-15);
            assert!(sm <= w.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-15);
        }
    }
}

fn regime_panel(n: usize, calm: usize, stressed: usize, after: usize, seed: u64) -> conport_core::market_data::ReturnsPanel {
    use conport_core::market_data::ReturnsPanel;
    use conport_core::randgen::weekly_dates;
    let (mu, sigma) = dj30_like_moments(n, SeededSource::new(seed, 1));
    let parts = [
        mvn_series(&mu, &sigma, calm, SeededSource::new(seed, 2)).unwrap(),
        mvn_series(&mu, &(&sigma * 4.0), stressed, SeededSource::new(seed, 3)).unwrap(),
        mvn_series(&mu, &sigma, after, SeededSource::new(seed, 4)).unwrap(),
    ];
    let t = calm + stressed + after;
    let mut returns = nalgebra::DMatrix::zeros(t, n);
    let mut row = 0;
    for p in &parts {
        returns.rows_mut(row, p.periods()).copy_from(p.returns());
        row += p.periods();
    }
    ReturnsPanel::new(weekly_dates(t), parts[0].tickers().to_vec(), returns).unwrap()
}

#[test]
fn volatility_break_lowers_proportion() {
    let (m, k, h) = (52, 13, 4);
    let decisions = 24;
    let t = required_periods(m, k, h, decisions);
    // volatility doubles at the first outcome of decision date 10
    let calm = m + (k + 10) * h;
    let p = regime_panel(4, calm, t - calm, 0, 31);
    let s = GridSpec { levels: 4, cols: 10, rp: 40, ..spec(m) };
    let study = RollingStudy::new(&p, &s, k, decisions).unwrap();
    let table = CriticalValueTable::new(calibrate(m, k, h, 1.0, 2000, 1, 3).unwrap());
    let at20 = study.maps(1.0, &table, 0.20).unwrap();
    let at05 = study.maps(1.0, &table, 0.05).unwrap();
    for (a, b) in at20.iter().zip(&at05) {
        // the 5% region contains the 20% region
        assert!(a.consistent.iter().zip(&b.consistent).all(|(x, y)| !*x || *y));
        assert_eq!(a.proportion, a.consistent.iter().filter(|c| **c).count() as f64 / a.consistent.len() as f64);
    }
    let mean = |r: std::ops::Range<usize>| r.clone().map(|d| at20[d].proportion).sum::<f64>() / r.len() as f64;
    let before = mean(0..10);
    let after = mean(14..24);
    assert!(after < before, "proportion before break {before}, after {after}");
}
