//! Command-line front end: scenario parsing, dispatch and report files.

mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::report::{CheckReport, Status};

pub use config::{parse, resolve, Resolved, Scenario, TerminalCostFile};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

/// Numbers in CSV files: 17 significant digits in scientific notation.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Check(_) => EXIT_CHECK_FAILED,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "empc", version, about = "Economic MPC with terminal conditions for periodic operation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Closed-loop simulation with Lyapunov checks.
    Simulate(CommonArgs),
    /// Assumption and regularity checks.
    Verify(CommonArgs),
    /// Cesàro performance of the closed loop and the turnpike table.
    Performance(CommonArgs),
    /// Terminal cost from the orbit or from Cesàro value iteration.
    TerminalCost(CommonArgs),
}

#[derive(Debug, Clone, PartialEq, Eq, Args)]
pub struct CommonArgs {
    /// Scenario JSON document.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Jitter sample grids with this seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Verify(_) => "verify",
            Command::Performance(_) => "performance",
            Command::TerminalCost(_) => "terminal-cost",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Simulate(a) | Command::Verify(a) | Command::Performance(a) | Command::TerminalCost(a) => a,
        }
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub status: Status,
    pub exit_code: i32,
    pub stage_cost_shift: f64,
    pub error: Option<String>,
    pub reports: Vec<CheckReport>,
    pub tables: BTreeMap<String, Value>,
}

/// Mutable state shared by a command while it runs.
pub(crate) struct Context {
    pub res: Resolved,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub shift: f64,
    pub reports: Vec<CheckReport>,
    pub tables: BTreeMap<String, Value>,
}

impl Context {
    pub fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn push(&mut self, report: CheckReport) -> bool {
        let ok = report.status.is_ok();
        self.reports.push(report);
        ok
    }

    fn all_ok(&self) -> bool {
        self.reports.iter().all(|r| r.status.is_ok())
    }
}

fn overall(reports: &[CheckReport], error: Option<&CliError>) -> Status {
    if error.is_some() || reports.iter().any(|r| r.status == Status::Fail) {
        Status::Fail
    } else if reports.iter().any(|r| r.status == Status::Inconclusive) {
        Status::Inconclusive
    } else {
        Status::Pass
    }
}

/// Parses arguments and runs one command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    run_command(&cli.command)
}

/// Runs one command on its scenario and writes the output files.
pub fn run_command(command: &Command) -> i32 {
    let CommonArgs { config, out, seed } = command.args();
    let text = match std::fs::read_to_string(config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config.display());
            return EXIT_CONFIG;
        }
    };
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let resolved = parse(&text).and_then(|s| resolve(s, &base));
    let res = match resolved {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Err(e) = std::fs::create_dir_all(out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return EXIT_CONFIG;
    }
    let mut ctx = Context {
        res,
        out: out.to_path_buf(),
        seed: *seed,
        shift: 0.0,
        reports: Vec::new(),
        tables: BTreeMap::new(),
    };
    let result = match command {
        Command::Simulate(_) => commands::simulate(&mut ctx),
        Command::Verify(_) => commands::verify(&mut ctx),
        Command::Performance(_) => commands::performance(&mut ctx),
        Command::TerminalCost(_) => commands::terminal_cost(&mut ctx),
    };
    let error = result.err();
    let code = match &error {
        Some(e) => e.exit_code(),
        None if ctx.all_ok() => EXIT_PASS,
        None => EXIT_CHECK_FAILED,
    };
    let report = RunReport {
        command: command.name().into(),
        config_sha256: hash,
        seed: ctx.seed,
        status: overall(&ctx.reports, error.as_ref()),
        exit_code: code,
        stage_cost_shift: ctx.shift,
        error: error.as_ref().map(|e| e.to_string()),
        reports: std::mem::take(&mut ctx.reports),
        tables: std::mem::take(&mut ctx.tables),
    };
    let json = serde_json::to_string_pretty(&report).unwrap_or_default() + "\n";
    if let Err(e) = ctx.write("report.json", &json) {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    if let Some(e) = &error {
        eprintln!("error: {e}");
    }
    for r in report.reports.iter().filter(|r| r.status == Status::Fail) {
        eprintln!("{}: fail ({} witnesses)", r.name, r.witness_count);
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.3), "2.9999999999999999e-1");
        assert_eq!(fmt_num(-1.0), "-1.0000000000000000e0");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(0.3).parse::<f64>().unwrap(), 0.3);
    }

    #[test]
    fn argument_parsing() {
        let cli = Cli::try_parse_from(["empc", "terminal-cost", "--config", "a.json", "--out", "o", "--seed", "7"]);
        let cli = cli.unwrap();
        assert_eq!(cli.command.name(), "terminal-cost");
        assert_eq!(cli.command.args().seed, Some(7));
        assert!(Cli::try_parse_from(["empc", "simulate", "--out", "o"]).is_err());
    }

    #[test]
    fn missing_config_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let code = run_command(&Command::Verify(CommonArgs {
            config: dir.path().join("nope.json"),
            out: dir.path().to_path_buf(),
            seed: None,
        }));
        assert_eq!(code, EXIT_CONFIG);
    }
}
