//! `deforest`: command-line front end for the change-detection toolkit.

mod commands;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{BuildArgs, EvaluateArgs, Output, PostprocessArgs, SynthArgs, TrainArgs, VoteArgs};
use crate::settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "deforest", version, about = "Deforestation change detection from bitemporal imagery")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print reports as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// JSON config file keyed by long flag names; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene pair, reference and producer maps.
    Synth(SynthArgs),
    /// Cut aligned, normalized patch samples from scenes and polygons.
    BuildDataset(BuildArgs),
    /// Train the convolutional combiner on producer maps.
    TrainEnsemble(TrainArgs),
    /// Combine producer maps by simple, weighted or learned voting.
    Vote(VoteArgs),
    /// Compare predicted masks with a reference.
    Evaluate(EvaluateArgs),
    /// Remove small connected regions from a mask.
    Postprocess(PostprocessArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Format(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] deforest_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Format(_) | CliError::Io { .. } => 2,
            CliError::Core(e) if e.is_io_or_format() => 2,
            CliError::Core(_) => 1,
        }
    }
}

fn run(cli: Cli) -> Result<Output, CliError> {
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.pick(cli.seed, "seed", 0u64)?;
    let threads = settings.pick_opt(cli.threads, "threads")?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        if k == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(k);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Validation(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => commands::synth(a, &settings, seed),
        Command::BuildDataset(a) => commands::build(a, &settings),
        Command::TrainEnsemble(a) => commands::train_ensemble(a, &settings, seed),
        Command::Vote(a) => commands::vote(a, &settings),
        Command::Evaluate(a) => commands::evaluate(a, &settings),
        Command::Postprocess(a) => commands::postprocess(a, &settings),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json_flag = cli.json;
    let config = cli.config.clone();
    match run(cli) {
        Ok(out) => {
            let json = json_flag
                || Settings::load(config.as_deref())
                    .and_then(|s| s.pick(None, "json", false))
                    .unwrap_or(false);
            if json {
                println!("{}", serde_json::to_string_pretty(&out.json).expect("report serializes"));
            } else {
                print!("{}", out.text);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
