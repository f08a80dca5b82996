//! Flat `key=value` run configuration with command-line overrides.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use conport_core::estimation::Estimator;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub m: Vec<usize>,
    pub k: Vec<usize>,
    pub h: usize,
    pub b: usize,
    pub c: usize,
    pub u: f64,
    pub rp: usize,
    pub gamma: Vec<f64>,
    pub level: f64,
    pub seed: u64,
    pub estimator: Estimator,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub table: Option<PathBuf>,
    pub reps: usize,
    pub repetitions: usize,
    pub origin_step: Option<usize>,
    /// Estimation origin for single-window commands; defaults to the last row.
    pub origin: Option<usize>,
    /// Decision dates for rolling commands; defaults to as many as fit.
    pub decisions: Option<usize>,
    pub split: usize,
    pub all_cells: bool,
    pub draws: usize,
    pub periods: Option<usize>,
    pub assets: usize,
    pub days_per_period: f64,
    pub cvar_alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: vec![312],
            k: vec![39],
            h: 4,
            b: 11,
            c: 50,
            u: 0.33,
            rp: 500,
            gamma: vec![1.0],
            level: 0.20,
            seed: 20240601,
            estimator: Estimator::Sample,
            input: None,
            out: PathBuf::from("out"),
            table: None,
            reps: 5000,
            repetitions: 1,
            origin_step: None,
            origin: None,
            decisions: None,
            split: 200,
            all_cells: false,
            draws: 200,
            periods: None,
            assets: 30,
            days_per_period: 5.0,
            cvar_alpha: 0.05,
        }
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    let items: Result<Vec<T>, _> = value.split(',').map(|v| v.trim().parse()).collect();
    match items {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Config(format!("bad list for {key}: {value:?}"))),
    }
}

fn one<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("bad value for {key}: {value:?}")))
}

fn opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, CliError> {
    if value.trim().is_empty() {
        Ok(None)
    } else {
        one(key, value).map(Some)
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn show<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "m" => self.m = list(key, value)?,
            "k" => self.k = list(key, value)?,
            "h" => self.h = one(key, value)?,
            "b" => self.b = one(key, value)?,
            "c" => self.c = one(key, value)?,
            "u" => self.u = one(key, value)?,
            "rp" => self.rp = one(key, value)?,
            "gamma" => self.gamma = list(key, value)?,
            "level" => self.level = one(key, value)?,
            "seed" => self.seed = one(key, value)?,
            "estimator" => self.estimator = one(key, value)?,
            "input" => self.input = opt(key, value)?,
            "out" => self.out = one(key, value)?,
            "table" => self.table = opt(key, value)?,
            "reps" => self.reps = one(key, value)?,
            "repetitions" => self.repetitions = one(key, value)?,
            "origin_step" => self.origin_step = opt(key, value)?,
            "origin" => self.origin = opt(key, value)?,
            "decisions" => self.decisions = opt(key, value)?,
            "split" => self.split = one(key, value)?,
            "all_cells" => self.all_cells = one(key, value)?,
            "draws" => self.draws = one(key, value)?,
            "periods" => self.periods = opt(key, value)?,
            "assets" => self.assets = one(key, value)?,
            "days_per_period" => self.days_per_period = one(key, value)?,
            "cvar_alpha" => self.cvar_alpha = one(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse_file(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Canonical file form: every key, fixed order, lossless floats.
    pub fn to_file_string(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let floats = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("m", join(&self.m));
        kv("k", join(&self.k));
        kv("h", self.h.to_string());
        kv("b", self.b.to_string());
        kv("c", self.c.to_string());
        kv("u", format!("{:?}", self.u));
        kv("rp", self.rp.to_string());
        kv("gamma", floats(&self.gamma));
        kv("level", format!("{:?}", self.level));
        kv("seed", self.seed.to_string());
        kv("estimator", self.estimator.to_string());
        kv("input", path(&self.input));
        kv("out", self.out.display().to_string());
        kv("table", path(&self.table));
        kv("reps", self.reps.to_string());
        kv("repetitions", self.repetitions.to_string());
        kv("origin_step", show(&self.origin_step));
        kv("origin", show(&self.origin));
        kv("decisions", show(&self.decisions));
        kv("split", self.split.to_string());
        kv("all_cells", self.all_cells.to_string());
        kv("draws", self.draws.to_string());
        kv("periods", show(&self.periods));
        kv("assets", self.assets.to_string());
        kv("days_per_period", format!("{:?}", self.days_per_period));
        kv("cvar_alpha", format!("{:?}", self.cvar_alpha));
        s
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_file_string().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn single_m(&self) -> Result<usize, CliError> {
        match self.m.as_slice() {
            [m] => Ok(*m),
            _ => Err(CliError::Config("this command takes a single M".into())),
        }
    }

    pub fn single_k(&self) -> Result<usize, CliError> {
        match self.k.as_slice() {
            [k] => Ok(*k),
            _ => Err(CliError::Config("this command takes a single K".into())),
        }
    }
}

/// Command-line overrides; each flag mirrors a config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Config file of key=value lines, applied before the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Estimation window length(s) M.
    #[arg(long, global = true, value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    /// Number of scoring origins K.
    #[arg(long, global = true, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Investment horizon H in periods.
    #[arg(long, global = true)]
    pub h: Option<usize>,
    /// Return levels B.
    #[arg(long, global = true)]
    pub b: Option<usize>,
    /// Volatility columns C.
    #[arg(long, global = true)]
    pub c: Option<usize>,
    /// Holding cap U.
    #[arg(long, global = true)]
    pub u: Option<f64>,
    /// Random portfolios per return level.
    #[arg(long, global = true)]
    pub rp: Option<usize>,
    /// Discount factor(s) γ.
    #[arg(long, global = true, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Significance level (0.20, 0.15, 0.10 or 0.05).
    #[arg(long, global = true)]
    pub level: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `sample` or `ledoit-wolf`.
    #[arg(long, global = true)]
    pub estimator: Option<Estimator>,
    /// Returns file (date column plus one column per asset).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Critical-value table; defaults to critical_values.csv in the output directory.
    #[arg(long, global = true)]
    pub table: Option<PathBuf>,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[arg(long, global = true)]
    pub repetitions: Option<usize>,
    /// Spacing of calibration origins; defaults to H.
    #[arg(long, global = true)]
    pub origin_step: Option<usize>,
    #[arg(long, global = true)]
    pub origin: Option<usize>,
    #[arg(long, global = true)]
    pub decisions: Option<usize>,
    /// Decision dates in the in-sample span.
    #[arg(long, global = true)]
    pub split: Option<usize>,
    /// Let strategy A search every grid cell instead of the frontier only.
    #[arg(long, global = true)]
    pub all_cells: bool,
    /// Forecast draws for the simulated ex-post frontier.
    #[arg(long, global = true)]
    pub draws: Option<usize>,
    #[arg(long, global = true)]
    pub periods: Option<usize>,
    #[arg(long, global = true)]
    pub assets: Option<usize>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    pub overwrite: bool,
}

impl Overrides {
    /// Defaults, then the config file, then the flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::parse_file(&text)?
            }
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        take!(m, k, h, b, c, u, rp, gamma, level, seed, estimator, out, reps, repetitions, split, draws, assets);
        macro_rules! take_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    cfg.$field = self.$field.clone();
                }
            )*};
        }
        take_opt!(input, table, origin_step, origin, decisions, periods);
        if self.all_cells {
            cfg.all_cells = true;
        }
        Ok(cfg)
    }
}
