//! Batch front end for the consistent-portfolio workbench.

pub mod commands;
pub mod config;

use std::cell::RefCell;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{} exists; pass --overwrite to replace it", .0.display())]
    Exists(PathBuf),
    #[error("input: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] conport_core::Error),
    #[error("writing {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for violated preconditions, 1 for internal failures.
    pub fn exit_code(&self) -> i32 {
        use conport_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Exists(_) | CliError::Input(_) => 2,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::Parse { .. }
                | E::Structure { .. }
                | E::Ordering { .. }
                | E::DimensionMismatch { .. }
                | E::InvalidWindow(_)
                | E::InsufficientData { .. }
                | E::InvalidParameter(_)
                | E::Infeasible(_)
                | E::FrontierLevel { .. }
                | E::MissingCalibration(_) => 2,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "conport", version, about = "Consistent portfolio workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate Berkowitz critical values for each (M, K, γ).
    Calibrate,
    /// Long-only capped efficient frontier at one origin.
    Frontier,
    /// B×C grid of portfolios inside the frontier at one origin.
    Grid,
    /// Rolling consistency maps and proportion series.
    Consistency,
    /// Closed-form and simulated ex-post frontiers with CVaR.
    Expost,
    /// Frontier strategy against the consistency-screened strategy.
    Backtest,
    /// Multivariate-normal returns panel.
    Simulate,
    /// Simulated-data experiment over a range of window lengths.
    Validate,
    /// Maps, proportion series and strategy report for a returns file.
    Run,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Calibrate => "calibrate",
            Command::Frontier => "frontier",
            Command::Grid => "grid",
            Command::Consistency => "consistency",
            Command::Expost => "expost",
            Command::Backtest => "backtest",
            Command::Simulate => "simulate",
            Command::Validate => "validate",
            Command::Run => "run",
        }
    }
}

/// Output directory handle. Every file starts with a provenance line and
/// existing files are only replaced with `overwrite`.
#[derive(Debug, Clone)]
pub struct Output {
    pub dir: PathBuf,
    pub overwrite: bool,
    pub header: String,
    notes: RefCell<Vec<String>>,
}

impl Output {
    pub fn new(cfg: &RunConfig, command: Command, overwrite: bool) -> Self {
        Self {
            dir: cfg.out.clone(),
            overwrite,
            header: format!("conport {} config_sha256={} seed={}", command.name(), cfg.hash(), cfg.seed),
            notes: RefCell::new(Vec::new()),
        }
    }

    /// Records a line of the console summary.
    pub fn note(&self, line: String) {
        self.notes.borrow_mut().push(line);
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Fails early if any of `names` would be clobbered.
    pub fn preflight(&self, names: &[&str]) -> CliResult<()> {
        for name in names {
            let p = self.path(name);
            if p.exists() && !self.overwrite {
                return Err(CliError::Exists(p));
            }
        }
        Ok(())
    }

    /// Opens `name` without writing the provenance line.
    pub fn create_bare(&self, name: &str) -> CliResult<FileWriter> {
        let path = self.path(name);
        if path.exists() && !self.overwrite {
            return Err(CliError::Exists(path));
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let file = File::create(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(FileWriter {
            inner: BufWriter::new(file),
            path,
        })
    }

    pub fn create(&self, name: &str) -> CliResult<FileWriter> {
        let mut w = self.create_bare(name)?;
        let header = format!("# {}\n", self.header);
        w.io(|f| f.write_all(header.as_bytes()))?;
        Ok(w)
    }
}

pub struct FileWriter {
    pub inner: BufWriter<File>,
    pub path: PathBuf,
}

impl FileWriter {
    pub fn io<T>(&mut self, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<T>) -> CliResult<T> {
        f(&mut self.inner).map_err(|source| CliError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn line(&mut self, text: &str) -> CliResult<()> {
        self.io(|f| writeln!(f, "{text}"))
    }

    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.io(|f| f.flush())?;
        Ok(self.path)
    }
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Files written by a subcommand, in write order, and its console summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
}

pub fn run(cli: &Cli) -> CliResult<RunOutput> {
    let cfg = cli.overrides.resolve()?;
    let out = Output::new(&cfg, cli.command, cli.overrides.overwrite);
    let files = commands::dispatch(cli.command, &cfg, &out)?;
    Ok(RunOutput {
        files,
        notes: out.notes.take(),
    })
}
