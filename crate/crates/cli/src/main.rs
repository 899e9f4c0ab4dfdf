//! `ragmark`: generate splits, watermark owner data, audit simulated RAG
//! systems, run baselines and sweeps.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal invariant violation.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ragmark::exec::{with_jobs, Exec};
use ragmark::experiment::{Axis, Method};

use crate::commands::Ctx;
use crate::config::{parse_u64, Overrides};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Self {
            code: 3,
            msg: msg.into(),
        }
    }
}

impl From<ragmark::Error> for Failure {
    fn from(e: ragmark::Error) -> Self {
        use ragmark::Error as E;
        let code = match e {
            E::Config(_) => 1,
            E::Parse { .. } | E::Mismatch(_) | E::Io { .. } => 2,
            E::Contract(_) | E::EmptyEvidence => 3,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ragmark",
    version,
    about = "Watermark-based dataset inference against simulated RAG systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
    /// Worker threads for seeds and sweep points.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Replace an existing output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an unwatermarked split (manifest plus JSONL files).
    Gen {
        /// World seed; defaults to the first configured seed.
        #[arg(long, value_parser = parse_u64)]
        seed: Option<u64>,
    },
    /// Watermark the owner's documents of a generated split.
    Watermark {
        /// Split directory written by `gen`.
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run IN and OUT audits and write reports, traces and a summary.
    Audit {
        /// Watermarked split to audit; without it every configured seed is generated in memory.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run a baseline membership method with midpoint calibration.
    Baseline {
        /// accfacts, sib or ibm.
        #[arg(long)]
        method: Method,
    },
    /// Audit across the values of one configuration axis.
    Sweep {
        /// n_queries, qpd, omega, k, delta, h or memfree.
        #[arg(long)]
        axis: Axis,
        /// Comma-separated axis values; defaults to the axis' standard grid.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
    },
    /// Rebuild summary and trace tables from an audit output directory.
    Report {
        /// Directory written by `audit`.
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let ctx = Ctx {
        resolved: config::resolve(&cli.overrides)?,
        force: cli.force,
        exec: Exec::default(),
    };
    with_jobs(cli.jobs, || match &cli.command {
        Command::Gen { seed } => commands::gen(&ctx, *seed),
        Command::Watermark { corpus } => commands::watermark(&ctx, corpus),
        Command::Audit { corpus } => commands::audit(&ctx, corpus.as_deref()),
        Command::Baseline { method } => commands::baseline(&ctx, *method),
        Command::Sweep { axis, values } => commands::sweep(&ctx, *axis, values.as_deref()),
        Command::Report { dir } => commands::report(&ctx, dir),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
