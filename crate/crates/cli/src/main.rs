//! `cobe`: data generation, decomposition runs and experiment replication.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Format, Overrides, RunConfig};

const EXIT_CODES: &str = "\
Exit codes:
   0  success
   2  usage error (bad flag, missing --input, non-positive --runs)
   3  config file could not be parsed
   4  i/o error
   5  malformed input file
  10  blocks disagree on the row count
  11  non-finite entry in a block
  12  fewer than 2 blocks
  13  empty matrix
  14  invalid synthetic spec
  15  zero-energy signal
  16  requested rank too large
  17  numerically zero matrix
  18  singular value list too short
  19  invalid input or parameter
  20  degenerate projection sum in COBE
  21  degenerate Procrustes target in COBEc
  22  lifted common feature has zero norm
  23  source separation failed
  24  zero-variance signal
  25  too few samples in a class
  26  label or signal lengths differ";

#[derive(Parser)]
#[command(name = "cobe", version, about = "Common and individual feature analysis for linked matrices", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Format of matrix outputs.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Input directory (multi-block layout: meta.json + block_NNN.csv).
    #[arg(long, global = true, value_name = "DIR")]
    input: Option<PathBuf>,
    /// Acceptance threshold on f_k / N.
    #[arg(long, global = true, value_name = "REAL")]
    epsilon: Option<f64>,
    /// Number of common components (selects the fixed-count solver).
    #[arg(long, global = true, value_name = "COUNT")]
    c: Option<usize>,
    /// Random projection to this many rows before solving.
    #[arg(long, global = true, value_name = "COUNT")]
    project: Option<usize>,
    /// Monte-Carlo repetitions.
    #[arg(long, global = true, value_name = "COUNT")]
    runs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write a synthetic multi-block directory with meta.json and truth.json.
    Generate,
    /// Extract the common basis (COBE, COBEc with --c, projected with --project).
    Cobe,
    /// Common nonnegative features of the common space.
    Cnfe,
    /// Split each block into common and individual parts.
    Split,
    /// Linked source separation benchmark: COBE, COBEc and stacked PCA.
    BenchLinkedBss,
    /// Clustering with and without common-feature removal.
    ClusterDemo,
    /// Classification by common features.
    ClassifyDemo,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Io(String),
    Core(cobe::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Io(m) => write!(f, "i/o: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<cobe::Error> for CliError {
    fn from(e: cobe::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        use cobe::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Core(e) => match e {
                E::Io { .. } => 4,
                E::Parse { .. } => 5,
                E::DimensionMismatch { .. } => 10,
                E::NonFinite { .. } => 11,
                E::TooFewBlocks(_) => 12,
                E::EmptyMatrix(_) => 13,
                E::InvalidSpec(_) => 14,
                E::ZeroSignal => 15,
                E::RankTooLarge { .. } => 16,
                E::ZeroMatrix => 17,
                E::TooShort { .. } => 18,
                E::InvalidInput(_) => 19,
                E::DegenerateSum { .. } => 20,
                E::DegenerateP { .. } => 21,
                E::DegenerateLift { .. } => 22,
                E::SeparatorFailure(_) => 23,
                E::ZeroVariance => 24,
                E::TooFewSamples { .. } => 25,
                E::LengthMismatch(..) => 26,
            },
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let a = cli.common;
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: a.seed,
        format: a.format,
        input: a.input,
        epsilon: a.epsilon,
        c: a.c,
        project: a.project,
        runs: a.runs,
    });
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    let ctx = commands::Context { cfg, out: a.out };
    let report = match cli.command {
        Command::Generate => commands::generate(&ctx)?,
        Command::Cobe => commands::run_cobe(&ctx)?,
        Command::Cnfe => commands::run_cnfe(&ctx)?,
        Command::Split => commands::run_split(&ctx)?,
        Command::BenchLinkedBss => commands::bench_linked_bss(&ctx)?,
        Command::ClusterDemo => commands::cluster_demo(&ctx)?,
        Command::ClassifyDemo => commands::classify_demo(&ctx)?,
    };
    report.write(&ctx.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
