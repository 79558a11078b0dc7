//! `dirac-shoot`: command-line front end of `dirac-core`.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 computation failure,
//! 3 failed verification.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod verify;

use std::ffi::OsString;
use std::io::Write as _;

use clap::{Parser, Subcommand};

use crate::commands::CommandOutput;
use crate::config::{resolve, Format, Options};
use crate::error::CliError;
use crate::output::{sibling_path, write_file, Envelope, SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(name = "dirac-shoot", version, about = "Shooting-method ground states of the 2D cubic Dirac equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// bracket and bisect the datum of the nodeless localized state
    GroundState,
    /// classify each --lambda as A(k), ICandidate(k) or Undecided
    Classify,
    /// rescaled convergence, first-order log law and remainder estimates
    Asymptotics,
    /// zero energy level set and trajectories in the (u, v) plane
    Portrait,
    /// run the invariant suite; exit 3 if any check fails
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GroundState => "ground-state",
            Command::Classify => "classify",
            Command::Asymptotics => "asymptotics",
            Command::Portrait => "portrait",
            Command::Verify => "verify",
        }
    }
}

/// Envelope, tables and exit code of one run, before anything is written.
pub struct Report {
    pub envelope: Envelope,
    pub output: CommandOutput,
}

pub fn execute(cli: &Cli) -> Result<Report, CliError> {
    let cfg = resolve(&cli.options)?;
    let output = match cli.command {
        Command::GroundState => commands::ground_state(&cfg)?.1,
        Command::Classify => commands::classify_all(&cfg)?,
        Command::Asymptotics => commands::asymptotics(&cfg)?,
        Command::Portrait => commands::portrait(&cfg)?,
        Command::Verify => {
            let checks = verify::run_suite(&cfg);
            let failed: Vec<String> =
                checks.iter().filter(|c| !c.passed).map(|c| format!("{}/{} failed: {}", c.module, c.name, c.note)).collect();
            CommandOutput {
                payload: serde_json::to_value(&checks).expect("checks serialize"),
                tables: vec![verify::table(&checks)],
                exit_code: if failed.is_empty() { 0 } else { 3 },
                diagnostics: failed,
            }
        }
    };
    let envelope = Envelope {
        schema_version: SCHEMA_VERSION,
        command: cli.command.name().to_string(),
        params: cfg,
        payload: output.payload.clone(),
        diagnostics: output.diagnostics.clone(),
    };
    Ok(Report { envelope, output })
}

/// Writes the report and returns its exit code.
pub fn emit(report: &Report) -> Result<i32, CliError> {
    let cfg = &report.envelope.params;
    match (cfg.format, &cfg.out) {
        (Format::Json, Some(path)) => write_file(path, &report.envelope.to_json())?,
        (Format::Json, None) => print_stdout(&report.envelope.to_json())?,
        (Format::Csv, Some(path)) => {
            let mut tables = report.output.tables.iter();
            if let Some(primary) = tables.next() {
                write_file(path, &primary.to_csv())?;
            }
            for t in tables {
                write_file(&sibling_path(path, &t.name), &t.to_csv())?;
            }
        }
        (Format::Csv, None) => {
            if let Some(primary) = report.output.tables.first() {
                print_stdout(&primary.to_csv())?;
            }
        }
    }
    for d in &report.envelope.diagnostics {
        eprintln!("warning: {d}");
    }
    Ok(report.output.exit_code)
}

fn print_stdout(s: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(s.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::Computation(format!("cannot write output: {e}")))
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli).and_then(|r| emit(&r)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("dirac-shoot").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn global_flags_after_the_subcommand() {
        let cli = parse(&["classify", "--lambda", "0.5", "--lambda", "1,2", "--m", "2", "--omega", "1"]);
        assert_eq!(cli.command, Command::Classify);
        assert_eq!(cli.options.lambdas, vec![0.5, 1.0, 2.0]);
        assert_eq!(cli.options.m, Some(2.0));
    }

    #[test]
    fn parse_errors_exit_one_and_help_exits_zero() {
        assert_eq!(run(["dirac-shoot", "bogus"]), 1);
        assert_eq!(run(["dirac-shoot", "classify", "--m", "x"]), 1);
        assert_eq!(run(["dirac-shoot", "--help"]), 0);
    }

    #[test]
    fn ground_state_envelope() {
        let r = execute(&parse(&["ground-state"])).unwrap();
        assert_eq!(r.envelope.schema_version, "1");
        assert_eq!(r.envelope.command, "ground-state");
        assert_eq!(r.envelope.payload["node_count"], 0);
        assert!(r.envelope.payload["decay_slope"].as_f64().unwrap() <= -0.2);
        assert_eq!(r.output.tables[0].header, vec!["r", "u", "v", "H"]);
    }

    #[test]
    fn payload_round_trips() {
        let r = execute(&parse(&["ground-state"])).unwrap();
        let text = r.envelope.to_json();
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["payload"], r.envelope.payload);
    }
}
