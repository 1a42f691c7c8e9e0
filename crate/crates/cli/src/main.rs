//! `specgr`: tokenize, fit, index, recommend, evaluate and benchmark from one config file.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use specgr_core::eval::SweepParam;

use crate::commands::{BenchArgs, HistorySource, SplitName};
use crate::config::Loaded;
use crate::error::CliError;

const DEFAULT_CONFIG: &str = "specgr.toml";

#[derive(Parser)]
#[command(name = "specgr", version, about = "Speculative generative recommendation over semantic IDs")]
struct Cli {
    /// Config file; defaults to ./specgr.toml when present.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set engine.threshold=-1.8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Consume upstream artifacts even if their config hash differs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign semantic IDs; writes semantic_ids.jsonl and codebooks.json.
    Tokenize,
    /// Fit the n-gram scorer on training sequences; writes model.ngram.
    Fit,
    /// Build the draft index; writes index.f32 and index.json.
    Index,
    /// Recommend for one history and print JSON.
    Recommend {
        /// Comma-separated item ids, oldest first.
        #[arg(long, value_delimiter = ',', conflicts_with = "user")]
        history: Option<Vec<String>>,
        /// Use this user's interactions from the log as history.
        #[arg(long)]
        user: Option<String>,
        /// Output size; defaults to engine.k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Evaluate every configured method on a split.
    Evaluate {
        #[arg(long, default_value = "valid")]
        split: String,
    },
    /// Hyperparameter sweeps and subset-ranking latency.
    Bench {
        /// Parameters to sweep; repeatable.
        #[arg(long, value_enum)]
        sweep: Vec<SweepArg>,
        /// Skip the subset latency benchmark.
        #[arg(long)]
        no_latency: bool,
        /// Skip the sweeps.
        #[arg(long, conflicts_with = "sweep")]
        no_sweep: bool,
    },
    /// Write a synthetic dataset and matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Gamma,
    Delta,
    Beta,
}

impl From<SweepArg> for SweepParam {
    fn from(a: SweepArg) -> Self {
        match a {
            SweepArg::Gamma => SweepParam::Threshold,
            SweepArg::Delta => SweepParam::DraftSize,
            SweepArg::Beta => SweepParam::BeamWidth,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.or_else(|| {
        let p = Path::new(DEFAULT_CONFIG);
        p.exists().then(|| p.to_path_buf())
    });
    let loaded = Loaded::load(config_path.as_deref(), &cli.overrides)?;
    let force = cli.force;
    match cli.command {
        Command::Tokenize => commands::tokenize(&loaded),
        Command::Fit => commands::fit(&loaded, force),
        Command::Index => commands::index(&loaded, force),
        Command::Recommend { history, user, k } => {
            let source = match (history, user) {
                (Some(ids), _) => HistorySource::Ids(ids),
                (None, Some(u)) => HistorySource::User(u),
                (None, None) => HistorySource::Stdin,
            };
            commands::recommend(&loaded, force, source, k)
        }
        Command::Evaluate { split } => {
            let which: SplitName = split.parse().map_err(CliError::Usage)?;
            commands::evaluate_cmd(&loaded, force, which)
        }
        Command::Bench {
            sweep,
            no_latency,
            no_sweep,
        } => {
            let sweeps = if no_sweep {
                Vec::new()
            } else if sweep.is_empty() {
                vec![SweepParam::Threshold, SweepParam::DraftSize, SweepParam::BeamWidth]
            } else {
                sweep.into_iter().map(Into::into).collect()
            };
            commands::bench(
                &loaded,
                force,
                &BenchArgs {
                    sweeps,
                    latency: !no_latency,
                },
            )
        }
        Command::Synth { out } => commands::synth(&loaded, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("specgr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
