//! `got4rec` command line: ingest → embed → run → eval, each stage reading
//! the previous one's files from the configured work directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use got4rec::dataset::{DatasetError, SEED_PRESETS};
use got4rec::graph::Branch;
use got4rec::llm::LlmError;
use got4rec::retrieval::RetrievalError;

use crate::commands::RunOptions;
use crate::config::RunConfig;

/// Bad invocation or contradictory configuration.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A model or embedding endpoint failed.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser)]
#[command(name = "got4rec", version, about = "Graph-of-thoughts sequential recommendation")]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true, default_value = "got4rec.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter and split the review file; writes the manifest and catalog.
    Ingest,
    /// Write item and pooled sequence vectors.
    Embed {
        /// Overwrite vector files of a different dimension.
        #[arg(long)]
        force: bool,
    },
    /// Run a strategy for every sampled user. Completed users are skipped.
    Run {
        #[arg(long)]
        out: PathBuf,
        /// Branch to leave out (short, long, collab); repeatable.
        #[arg(long, value_parser = parse_branch)]
        disable: Vec<Branch>,
        #[arg(long)]
        strategy: Option<String>,
        /// Use one of the shipped sampling seeds (0, 1 or 2).
        #[arg(long, conflicts_with = "sample_seed", value_parser = clap::value_parser!(u8).range(0..3))]
        preset: Option<u8>,
        #[arg(long)]
        sample_seed: Option<u64>,
        /// Stop after this many new records.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score one or more run directories; several are averaged.
    Eval {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write the (averaged) report here as well.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write recommendation vs training frequency per item as TSV.
        #[arg(long)]
        popularity: Option<PathBuf>,
    },
}

fn parse_branch(s: &str) -> Result<Branch, String> {
    match s.parse()? {
        b @ (Branch::Short | Branch::Long | Branch::Collab) => Ok(b),
        other => Err(format!("{other:?} is not a reasoning branch")),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<BackendError>() || cause.is::<LlmError>() {
            return EXIT_BACKEND;
        }
        if let Some(RetrievalError::Embedder(_)) = cause.downcast_ref::<RetrievalError>() {
            return EXIT_BACKEND;
        }
        if cause.is::<DatasetError>() {
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&cli.config)?;
    match cli.command {
        Command::Ingest => println!("{}", commands::ingest(&cfg)?),
        Command::Embed { force } => println!("{}", commands::embed(&cfg, force)?),
        Command::Run { out, disable, strategy, preset, sample_seed, limit } => {
            let sample_seed = sample_seed.or(preset.map(|p| SEED_PRESETS[p as usize]));
            let s = commands::run(&cfg, &RunOptions { out, disable, strategy, sample_seed, limit })?;
            println!("written={} skipped={} failed={} llm_calls={}", s.written, s.skipped, s.failed, s.llm_calls);
            if s.backend_failures > 0 {
                return Err(BackendError(format!("{} user(s) failed on the backend; see the failure ledger", s.backend_failures)).into());
            }
        }
        Command::Eval { runs, report, popularity } => {
            let out = commands::eval(&cfg, &runs, report.as_deref(), popularity.as_deref())?;
            print!("{}", out.table);
            println!("users={} failed={} excluded={}", out.report.users, out.report.failed_runs, out.report.excluded);
            if let Some(t) = out.tail_coverage {
                println!("tail_coverage={t:.4}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
