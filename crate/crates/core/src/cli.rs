//! `accesssim run` and `accesssim check`.
//!
//! Exit codes: 0 success, 1 a failing verdict, 2 invalid configuration or
//! missing input, 3 runtime fault.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{parse_time, ConfigError, ScenarioConfig, TraceMode};
use crate::network::{
    no_disadvantage_check, DisadvantageVerdict, Network, NetworkError, RunReport, NO_DISADVANTAGE_EPSILON,
};
use crate::traffic::{read_csv, ReportRow};

pub const SCENARIO_FILE: &str = "scenario.conf";
pub const VERDICTS_FILE: &str = "verdicts.csv";
pub const FDB_FILE: &str = "fdb.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Parser)]
#[command(name = "accesssim", version, about = "Hybrid ISP traffic control simulator over stacked VLANs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write reports.
    Run(RunArgs),
    /// Evaluate conformance and no-disadvantage verdicts of a finished run.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `outputs.trace`.
    #[arg(long, value_parser = clap::value_parser!(TraceMode))]
    pub trace: Option<TraceMode>,
    /// Overrides `run.duration`; bare numbers are seconds.
    #[arg(long)]
    pub duration: Option<String>,
    /// Run every shared member as a standalone legacy subscriber instead.
    #[arg(long)]
    pub legacy_reference: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
}

impl clap::builder::ValueParserFactory for TraceMode {
    type Parser = clap::builder::ValueParser;

    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<TraceMode>())
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}: not a valid report")]
    Malformed(PathBuf),
    #[error("simulation failed: {0}")]
    Runtime(#[from] NetworkError),
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } | CliError::Config(_) | CliError::Malformed(_) => 2,
            CliError::Runtime(_) | CliError::Write { .. } => 3,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

/// The configuration `run` would simulate, overrides applied.
pub fn effective_config(args: &RunArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::parse(&read(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(t) = args.trace {
        cfg.outputs.trace = t;
    }
    if let Some(d) = &args.duration {
        cfg.run.duration_ns = parse_time("--duration", d)?;
    }
    if args.legacy_reference {
        cfg = cfg.legacy_reference();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run_command(args: &RunArgs) -> Result<RunReport, CliError> {
    let cfg = effective_config(args)?;
    let report = Network::build(&cfg)?.run()?;
    let out = &args.out;
    fs::create_dir_all(out).map_err(|source| CliError::Write { path: out.clone(), source })?;
    write(&out.join(SCENARIO_FILE), cfg.dump().as_bytes())?;
    write(&out.join(&cfg.outputs.csv), report.report_csv().as_bytes())?;
    write(&out.join(VERDICTS_FILE), report.verdicts_csv().as_bytes())?;
    write(&out.join(FDB_FILE), report.fdb_csv().as_bytes())?;
    write(&out.join(SUMMARY_FILE), report.summary().as_bytes())?;
    if let Some(trace) = &report.trace {
        let name = match cfg.outputs.trace {
            TraceMode::Pcap => "trace.pcap",
            _ => "trace.hex",
        };
        write(&out.join(name), trace)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredVerdict {
    pub vid: u16,
    pub conformant: bool,
    pub worst_excess_bits: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub conformance: Vec<StoredVerdict>,
    pub disadvantage: Vec<DisadvantageVerdict>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.conformance.iter().all(|v| v.conformant) && self.disadvantage.iter().all(|d| d.pass)
    }

    pub fn lines(&self) -> Vec<String> {
        let word = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let mut out: Vec<String> = self
            .conformance
            .iter()
            .map(|v| {
                format!("conformance vid={} worst_excess_bits={} {}", v.vid, v.worst_excess_bits, word(v.conformant))
            })
            .collect();
        for d in &self.disadvantage {
            let reference = d.reference_bps.map_or("missing".to_string(), |r| format!("{r:.3}"));
            out.push(format!(
                "no-disadvantage subscriber={} goodput_bps={:.3} reference_bps={} {}",
                d.subscriber,
                d.goodput_bps,
                reference,
                word(d.pass)
            ));
        }
        out
    }
}

fn load_rows(dir: &Path) -> Result<Vec<ReportRow>, CliError> {
    let cfg = ScenarioConfig::parse(&read(&dir.join(SCENARIO_FILE))?)?;
    let path = dir.join(&cfg.outputs.csv);
    read_csv(&read(&path)?).ok_or(CliError::Malformed(path))
}

fn load_verdicts(dir: &Path) -> Result<Vec<StoredVerdict>, CliError> {
    let path = dir.join(VERDICTS_FILE);
    let text = read(&path)?;
    let malformed = || CliError::Malformed(path.clone());
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(malformed());
            }
            Ok(StoredVerdict {
                vid: f[0].parse().map_err(|_| malformed())?,
                worst_excess_bits: f[5].parse().map_err(|_| malformed())?,
                conformant: f[6].parse().map_err(|_| malformed())?,
            })
        })
        .collect()
}

pub fn check_command(args: &CheckArgs) -> Result<CheckOutcome, CliError> {
    let rows = load_rows(&args.run)?;
    let conformance = load_verdicts(&args.run)?;
    let reference = load_rows(&args.reference)?;
    Ok(CheckOutcome { conformance, disadvantage: no_disadvantage_check(&rows, &reference, NO_DISADVANTAGE_EPSILON) })
}

/// Parses `args` (program name first) and executes; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match cli.command {
        Command::Run(a) => match run_command(&a) {
            Ok(report) => {
                for r in &report.rows {
                    println!("{}", r.csv_line());
                }
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Check(a) => match check_command(&a) {
            Ok(outcome) => {
                for l in outcome.lines() {
                    println!("{l}");
                }
                if outcome.passed() {
                    0
                } else {
                    1
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    }
}
