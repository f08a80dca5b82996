//! Subcommand bodies. Each returns the paths it wrote, in write order.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use conport_core::backtest::backtest;
use conport_core::calibration::{calibrate_design, CriticalValueTable, NullDesign};
use conport_core::consistency::{
    build_grid, fallback_count, required_periods, ConsistencyMap, GridSpec, RollingStudy,
};
use conport_core::estimation::{estimate, sample_moments_of, Estimator, MomentEstimate};
use conport_core::expost::{
    cvar_normal, expost_frontier_method1, method0_point, ForecastCovarianceSpec, ForecastMode,
};
use conport_core::market_data::{load_returns, ReturnsPanel, WindowSpec};
use conport_core::optimizer::{frontier, Frontier};
use conport_core::randgen::{dj30_like_moments, mvn_series, SeededSource};
use conport_core::Error;
use nalgebra::{DMatrix, DVector};

use crate::{CliError, CliResult, Command, Output, RunConfig};

/// Window lengths of the simulated-data experiment.
pub const VALIDATE_WINDOWS: [usize; 6] = [52, 104, 156, 208, 260, 312];
/// Second significance level reported next to the configured one.
pub const COMPARISON_LEVEL: f64 = 0.05;
/// Decision dates used when `simulate` sizes its panel.
pub const DEFAULT_DECISIONS: usize = 243;

pub fn dispatch(command: Command, cfg: &RunConfig, out: &Output) -> CliResult<Vec<PathBuf>> {
    match command {
        Command::Calibrate => cmd_calibrate(cfg, out),
        Command::Frontier => cmd_frontier(cfg, out),
        Command::Grid => cmd_grid(cfg, out),
        Command::Consistency => cmd_consistency(cfg, out),
        Command::Expost => cmd_expost(cfg, out),
        Command::Backtest => cmd_backtest(cfg, out),
        Command::Simulate => cmd_simulate(cfg, out),
        Command::Validate => cmd_validate(cfg, out),
        Command::Run => cmd_run(cfg, out),
    }
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

fn weights(w: &DVector<f64>) -> String {
    w.iter().map(|v| f(*v)).collect::<Vec<_>>().join(";")
}

fn na(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), f)
}

pub fn load_panel(cfg: &RunConfig) -> CliResult<ReturnsPanel> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Input("--input is required".into()))?;
    let file = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(load_returns(BufReader::new(file))?)
}

pub fn load_table(cfg: &RunConfig, out: &Output) -> CliResult<CriticalValueTable> {
    let path = cfg.table.clone().unwrap_or_else(|| out.path("critical_values.csv"));
    let file = File::open(&path).map_err(|e| {
        CliError::Core(Error::MissingCalibration(format!(
            "{}: {e}; run `conport calibrate` first or pass --table",
            path.display()
        )))
    })?;
    Ok(CriticalValueTable::read(BufReader::new(file))?)
}

pub fn grid_spec(cfg: &RunConfig, m: usize) -> GridSpec {
    GridSpec {
        m,
        h: cfg.h,
        levels: cfg.b,
        cols: cfg.c,
        cap: cfg.u,
        rp: cfg.rp,
        estimator: cfg.estimator,
        seed: cfg.seed,
    }
}

fn origin_moments(cfg: &RunConfig, panel: &ReturnsPanel) -> CliResult<(usize, MomentEstimate)> {
    let m = cfg.single_m()?;
    let origin = cfg.origin.unwrap_or(panel.periods().saturating_sub(1));
    if origin >= panel.periods() {
        return Err(Error::InvalidWindow(format!(
            "origin {origin} is past the last period {}",
            panel.periods() - 1
        ))
        .into());
    }
    let window = WindowSpec::new(origin, m, cfg.h)?;
    Ok((origin, estimate(panel, &window, cfg.estimator)?))
}

/// Moments for simulation: estimated from `--input` when given, otherwise
/// the built-in blue-chip-like single-factor moments.
fn simulation_moments(cfg: &RunConfig) -> CliResult<(DVector<f64>, DMatrix<f64>)> {
    match &cfg.input {
        Some(_) => {
            let panel = load_panel(cfg)?;
            let (mu, sigma) = sample_moments_of(panel.returns())?;
            let m = MomentEstimate::new(mu, sigma, Estimator::Sample, panel.periods())?.repaired();
            Ok((m.mean, m.covariance))
        }
        None => Ok(dj30_like_moments(cfg.assets, SeededSource::new(cfg.seed, 1))),
    }
}

fn study(cfg: &RunConfig, panel: &ReturnsPanel, m: usize, k: usize) -> CliResult<RollingStudy> {
    let decisions = cfg
        .decisions
        .unwrap_or_else(|| RollingStudy::max_decisions(panel.periods(), m, k, cfg.h).max(1));
    Ok(RollingStudy::new(panel, &grid_spec(cfg, m), k, decisions)?)
}

pub fn cmd_calibrate(cfg: &RunConfig, out: &Output) -> CliResult<Vec<PathBuf>> {
    out.preflight(&["critical_values.csv"])?;
    let mut entries = Vec::new();
    for &m in &cfg.m {
        for &k in &cfg.k {
            for &gamma in &cfg.gamma {
                let design = NullDesign::with_step(m, k, cfg.h, cfg.origin_step.unwrap_or(cfg.h), gamma)?;
                let rows = calibrate_design(&design, cfg.reps, cfg.repetitions, cfg.seed)?;
                for e in &rows {
                    out.note(format!(
                        "M={} K={} gamma={} p{}: {:.4}",
                        e.m, e.k, e.gamma, e.percentile, e.critical_value
                    ));
                }
                entries.extend(rows);
            }
        }
    }
    let table = CriticalValueTable::new(entries);
    let mut w = out.create_bare("critical_values.csv")?;
    w.io(|f| table.write(f, Some(&out.header)))?;
    Ok(vec![w.finish()?])
}

fn write_frontier(out: &Output, name: &str, front: &Frontier) -> CliResult<PathBuf> {
    let mut w = out.create(name)?;
    w.line("b,expected_return,stdev,theta,at_lower,at_upper,weights")?;
    for (b, p) in front.points.iter().enumerate() {
        let idx = |v: &[usize]| v.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(";");
        w.line(&format!(
            "{},{},{},{},{},{},{}",
            b + 1,
            f(p.portfolio.expected_return),
            f(p.portfolio.stdev),
            na(p.theta),
            idx(&p.at_lower),
            idx(&p.at_upper),
            weights(&p.portfolio.weights)
        ))?;
    }
    w.finish()
}

pub fn cmd_frontier(cfg: &RunConfig, out: &Output) -> CliResult<Vec<PathBuf>> {
    out.preflight(&["frontier.csv"])?;
    let panel = load_panel(cfg)?;
    let (_, moments) = origin_moments(cfg, &panel)?;
    let front = frontier(&moments, cfg.u, cfg.b)?;
    Ok(vec![write_frontier(out, "frontier.csv", &front)?])
}

pub fn cmd_grid(cfg: &RunConfig, out: &Output) -> CliResult<Vec<PathBuf>> {
    out.preflight(&["grid.csv"])?;
    let panel = load_panel(cfg)?;
    let m = cfg.single_m()?;
    let origin = cfg.origin.unwrap_or(panel.periods().saturating_sub(1));
    let grid = build_grid(&panel, origin, &grid_spec(cfg, m))?;
    let mut w = out.create("grid.csv")?;
    w.line("origin_date,b,c,target_return,target_sd,expected_return,stdev,provenance,weights")?;
    let date = panel.dates()[origin];
    for cell in &grid.cells {
        let p = &cell.portfolio;
        w.line(&format!(
            "{date},{},{},{},{},{},{},{},{}",
            cell.b + 1,
            cell.c,
            f(cell.target_return),
            f(cell.target_sd),
            f(p.expected_return),
            f(p.stdev),
            p.provenance,
            weights(&p.weights)
        ))?;
    }
    out.note(format!("{} cells, {} fell back to their start", grid.len(), fallback_count(&grid)));
    Ok(vec![w.finish()?])
}

/// Per-date map files for one γ.
fn write_maps(out: &Output, dir: &str, study: &RollingStudy, maps: &[ConsistencyMap]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::with_capacity(maps.len());
    for (d, map) in maps.iter().enumerate() {
        let mut w = out.create(&format!("{dir}/map_{}.csv", study.decision_date(d)))?;
        w.io(|f| study.write_map(d, map, f))?;
        files.push(w.finish()?);
    }
    Ok(files)
}

/// Proportion of consistent cells per date and γ at the configured level
/// and at the comparison level.
fn write_proportions(
    out: &Output,
    cfg: &RunConfig,
    study: &RollingStudy,
    table: &CriticalValueTable,
) -> CliResult<PathBuf> {
    let mut w = out.create("proportions.csv")?;
    w.line(&format!(
        "date,gamma,proportion_at_{},proportion_at_{}",
        cfg.level, COMPARISON_LEVEL
    ))?;
    for &gamma in &cfg.gamma {
        let at_level = study.maps(gamma, table, cfg.level)?;
        let at_cmp = study.maps(gamma, table, COMPARISON_LEVEL)?;
        for d in 0..study.decisions {
            w.line(&format!(
                "{},{},{},{}",
                study.decision_date(d),
                f(gamma),
                f(at_level[d].proportion),
                f(at_cmp[d].proportion)
            ))?;
        }
    }
    w.finish()
}

fn gamma_dir(gamma: f64) -> String {
    format!("maps/gamma_{gamma}")
}

pub fn cmd_consistency(cfg: &RunConfig, out: &Output) -> CliResult<Vec<PathBuf>> {
    out.preflight(&["proportions.csv"])?;
    let table = load_table(cfg, out)?;
    let panel = load_panel(cfg)?;
    let study = study(cfg, &panel, cfg.single_m()?, cfg.single_k()?)?;
    let mut files = Vec::new();
    for &gamma in &cfg.gamma {
        let maps = study.maps(gamma, &table, cfg.level)?;
        files.extend(write_maps(out, &gamma_dir(gamma), &study, &maps)?);
    }
    files.push(write_proportions(out, cfg, &study, &table)?);
    Ok(files)
}

fn write_report(
    out: &Output,
    cfg: &RunConfig,
    study: &RollingStudy,
    table: &CriticalValueTable,
) -> CliResult<(f64, Vec<PathBuf>)> {
    let report = backtest(study, table, &cfg.gamma, cfg.level, cfg.split, cfg.all_cells)?;
    let mut ledger = out.create("ledger.csv")?;
    ledger.io(|f| report.write_ledger(f))?;
    let mut summary = out.create("summary.csv")?;
    summary.io(|f| report.write_summary(f))?;
    for l in report.ledgers() {
        out.note(format!(
            "{:<16} in-sample mean {:+.5} sharpe {:>8}  out-of-sample mean {:+.5} sharpe {:>8}",
            l.label(),
            l.in_sample.mean,
            l.in_sample.sharpe.map_or("NA".into(), |s| format!("{s:.4}")),
            l.out_of_sample.mean,
            l.out_of_sample.sharpe.map_or("NA".into(), |s| format!("{s:.4}")),
        ));
    }
    out.note(format!("selected gamma {}", report.selected_gamma));
    Ok((report.selected_gamma, vec![ledger.finish()?, summary.finish()?]))
}

pub fn cmd_backtest(cfg: &RunConfig, out: &Output) -> CliResult<Vec<PathBuf>> {
    out.preflight(&["ledger.csv", "summary.csv"])?;
    let table = load_table(cfg, out)?;
    let panel = load_panel(cfg)?;
    let study = study(cfg, &panel, cfg.single_m()?, cfg.single_k()?)?;
    Ok(write_report(out, cfg, &study, &table)?.1)
}

pub fn cmd_run(cfg: &RunConfig, out: &Output) -> CliResult<Vec<PathBuf>> {
    out.preflight(&["proportions.csv", "ledger.csv", "summary.csv"])?;
    let table = load_table(cfg, out)?;
    let panel = load_panel(cfg)?;
    let (m, k) = (cfg.single_m()?, cfg.single_k()?);
    let required = required_periods(m, k, cfg.h, 1);
    if panel.periods() < required {
        return Err(Error::InsufficientData {
            required,
            actual: panel.periods(),
        }
        .into());
    }
    let study = study(cfg, &panel, m, k)?;
    let (selected, mut files) = write_report(out, cfg, &study, &table)?;
    files.push(write_proportions(out, cfg, &study, &table)?);
    let maps = study.maps(selected, &table, cfg.level)?;
    files.extend(write_maps(out, &gamma_dir(selected), &study, &maps)?);
    Ok(files)
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Output) -> CliResult<Vec<PathBuf>> {
    out.preflight(&["returns.csv"])?;
    let (mu, sigma) = simulation_moments(cfg)?;
    let periods = match cfg.periods {
        Some(p) => p,
        None => required_periods(cfg.single_m()?, cfg.single_k()?, cfg.h, DEFAULT_DECISIONS),
    };
    let panel = mvn_series(&mu, &sigma, periods, SeededSource::new(cfg.seed, 2))?;
    let mut w = out.create("returns.csv")?;
    w.io(|f| panel.write_csv(f))?;
    Ok(vec![w.finish()?])
}

/// One row per frontier point: closed-form frontier against Method 0
/// (iid and predictive) and Method 1 with sample-mean forecast noise.
fn write_expost(
    out: &Output,
    name: &str,
    cfg: &RunConfig,
    moments: &MomentEstimate,
    m: usize,
) -> CliResult<PathBuf> {
    let front = frontier(moments, cfg.u, cfg.b)?;
    let spec = ForecastCovarianceSpec::independent(&moments.covariance, 1.0 / m as f64)?;
    let thetas: Vec<Option<f64>> = front.points.iter().map(|p| p.theta).collect();
    let method1 = expost_frontier_method1(moments, cfg.u, &thetas, cfg.draws, cfg.seed, &spec)?;
    let days = cfg.days_per_period;
    let alpha = cfg.cvar_alpha;
    let mut w = out.create(name)?;
    w.line(
        "b,expected_return,cf_stdev,theta,m0_iid_stdev,m0_predictive_stdev,m1_mean,m1_stdev,\
         diff_m0_bp,diff_m1_bp,cvar_cf,cvar_m0,cvar_m1,cvar_diff_m0_bp,cvar_diff_m1_bp",
    )?;
    for (b, (point, m1)) in front.points.iter().zip(&method1).enumerate() {
        let p = &point.portfolio;
        let iid = method0_point(moments, cfg.u, &p.weights, ForecastMode::Iid { m }).ok();
        let pred = method0_point(moments, cfg.u, &p.weights, ForecastMode::Predictive).ok();
        let cvar = |mean: f64, sd: f64| cvar_normal(mean, sd, alpha, days).ok();
        let cvar_cf = cvar(p.expected_return, p.stdev);
        let cvar_m0 = iid.and_then(|q| cvar(q.mean, q.stdev()));
        let cvar_m1 = cvar(m1.mean, m1.stdev());
        let bp = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| (a - b) * 1e4);
        w.line(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            b + 1,
            f(p.expected_return),
            f(p.stdev),
            na(iid.map(|q| q.theta)),
            na(iid.map(|q| q.stdev())),
            na(pred.map(|q| q.stdev())),
            f(m1.mean),
            f(m1.stdev()),
            na(iid.map(|q| (q.stdev() - p.stdev) * 1e4)),
            f((m1.stdev() - p.stdev) * 1e4),
            na(cvar_cf),
            na(cvar_m0),
            na(cvar_m1),
            na(bp(cvar_m0, cvar_cf)),
            na(bp(cvar_m1, cvar_cf)),
        ))?;
    }
    w.finish()
}

pub fn cmd_expost(cfg: &RunConfig, out: &Output) -> CliResult<Vec<PathBuf>> {
    out.preflight(&["expost.csv"])?;
    let panel = load_panel(cfg)?;
    let (_, moments) = origin_moments(cfg, &panel)?;
    Ok(vec![write_expost(out, "expost.csv", cfg, &moments, cfg.single_m()?)?])
}

/// Average of the smallest consistent c over return levels, counting a
/// level with no consistent cell as C.
pub fn mean_min_consistent_c(map: &ConsistencyMap) -> f64 {
    map.min_consistent_c()
        .iter()
        .map(|c| c.unwrap_or(map.cols) as f64)
        .sum::<f64>()
        / map.levels as f64
}

pub fn cmd_validate(cfg: &RunConfig, out: &Output) -> CliResult<Vec<PathBuf>> {
    out.preflight(&["validate/summary.csv"])?;
    let table = load_table(cfg, out)?;
    let windows: Vec<usize> = if cfg.m.len() > 1 {
        cfg.m.clone()
    } else {
        VALIDATE_WINDOWS.to_vec()
    };
    let k = cfg.single_k()?;
    let gamma = cfg.gamma[0];
    let (mu, sigma) = simulation_moments(cfg)?;
    let longest = windows.iter().copied().max().unwrap_or(0);
    let panel = mvn_series(&mu, &sigma, required_periods(longest, k, cfg.h, 1), SeededSource::new(cfg.seed, 2))?;

    let mut files = Vec::new();
    let mut rows = Vec::new();
    for &m in &windows {
        let study = RollingStudy::new(&panel, &grid_spec(cfg, m), k, 1)?;
        let map = study.map(0, gamma, &table, cfg.level)?;
        let mut w = out.create(&format!("validate/grid_M{m}.csv"))?;
        w.io(|f| study.write_map(0, &map, f))?;
        files.push(w.finish()?);
        let grid = &study.decision_record(0).grid;
        files.push(write_expost(out, &format!("validate/expost_M{m}.csv"), cfg, &grid.moments, m)?);
        rows.push(format!(
            "{m},{},{},{}",
            f(map.proportion),
            f(mean_min_consistent_c(&map)),
            fallback_count(grid)
        ));
        out.note(format!("M={m}: proportion consistent {:.3}", map.proportion));
    }
    let mut w = out.create("validate/summary.csv")?;
    w.line("M,proportion_consistent,mean_min_consistent_c,fallback_cells")?;
    for r in rows {
        w.line(&r)?;
    }
    files.push(w.finish()?);
    Ok(files)
}
