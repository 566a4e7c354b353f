//! `compat-graph`: prepare outfit data, train and evaluate compatibility
//! models, and score outfits from the command line.
//!
//! Exit codes: 0 ok, 1 other failure, 2 usage, 3 numeric, 4 lookup,
//! 5 verification.

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use compat_core::Error;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Verification(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 5,
            CliError::Core(e) => match e.root() {
                Error::Argument(_) => 2,
                Error::Numeric(_) => 3,
                Error::Lookup { .. } => 4,
                _ => 1,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "compat-graph", version, about = "Outfit compatibility with graph neural networks")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Prepared data directory.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SeedArg {
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter and split raw outfit files into a prepared data directory.
    Prepare {
        /// Directory holding train_no_dup.json, valid_no_dup.json, test_no_dup.json.
        #[arg(long)]
        raw: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Draw this many filtered outfits and split them train/test.
        #[arg(long)]
        subset: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Generate a planted-structure synthetic dataset.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        outfits: Option<usize>,
        #[arg(long)]
        categories: Option<usize>,
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        /// Seed of the generator (the split uses --seed).
        #[arg(long)]
        synth_seed: Option<u64>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Encode item names as one-hot text vectors.
    EmbedText {
        #[command(flatten)]
        data: DataArgs,
        /// Output store (default: <data>/text.embd).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for checkpoints and history.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        modality: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Evaluate a checkpoint (or the random baseline) on the test split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Directory receiving report.json and report.txt.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// fitb, compat or both.
        #[arg(long)]
        task: Option<String>,
        /// Score with the untrained random baseline.
        #[arg(long)]
        random: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Print the compatibility score of a set of items.
    Score {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(required = true)]
        items: Vec<String>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long, hide = true)]
        inject_bug: bool,
    },
}

fn set_path(cfg: &mut RunConfig, key: &str, value: &Option<PathBuf>) -> Result<(), Error> {
    if let Some(v) = value {
        cfg.set(key, &v.display().to_string())?;
    }
    Ok(())
}

fn set_value<T: ToString>(cfg: &mut RunConfig, key: &str, value: &Option<T>) -> Result<(), Error> {
    if let Some(v) = value {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::from_env()?;
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for pair in &cli.overrides {
        cfg.set_pair(pair)?;
    }
    match &cli.command {
        Command::Prepare { raw, out, subset, seed } => {
            set_path(&mut cfg, "raw_dir", raw)?;
            set_path(&mut cfg, "data_dir", out)?;
            set_value(&mut cfg, "subset", subset)?;
            set_value(&mut cfg, "seed", &seed.seed)?;
        }
        Command::Synth { out, outfits, categories, groups, noise, synth_seed, seed } => {
            set_path(&mut cfg, "data_dir", out)?;
            set_value(&mut cfg, "synth_outfits", outfits)?;
            set_value(&mut cfg, "synth_categories", categories)?;
            set_value(&mut cfg, "synth_groups", groups)?;
            set_value(&mut cfg, "synth_noise", noise)?;
            set_value(&mut cfg, "synth_seed", synth_seed)?;
            set_value(&mut cfg, "seed", &seed.seed)?;
        }
        Command::EmbedText { data, out } => {
            set_path(&mut cfg, "data_dir", &data.data)?;
            set_path(&mut cfg, "text_store", out)?;
        }
        Command::Train { data, run, model, modality, epochs, seed } => {
            set_path(&mut cfg, "data_dir", &data.data)?;
            set_path(&mut cfg, "run_dir", run)?;
            set_value(&mut cfg, "model", model)?;
            set_value(&mut cfg, "modality", modality)?;
            set_value(&mut cfg, "max_epochs", epochs)?;
            set_value(&mut cfg, "seed", &seed.seed)?;
        }
        Command::Eval { data, run, checkpoint, task, random, seed } => {
            set_path(&mut cfg, "data_dir", &data.data)?;
            set_path(&mut cfg, "run_dir", run)?;
            set_path(&mut cfg, "checkpoint", checkpoint)?;
            set_value(&mut cfg, "task", task)?;
            if *random {
                cfg.set("random", "true")?;
            }
            set_value(&mut cfg, "seed", &seed.seed)?;
        }
        Command::Score { data, checkpoint, .. } => {
            set_path(&mut cfg, "data_dir", &data.data)?;
            set_path(&mut cfg, "checkpoint", checkpoint)?;
        }
        Command::Gradcheck { seed, .. } => {
            set_value(&mut cfg, "seed", &seed.seed)?;
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Argument("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Argument(format!("cannot configure thread pool: {e}")))?;
    }
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Prepare { .. } => commands::prepare(&cfg),
        Command::Synth { .. } => commands::synth(&cfg),
        Command::EmbedText { .. } => commands::embed_text(&cfg),
        Command::Train { .. } => commands::train_cmd(&cfg),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Score { items, .. } => commands::score(&cfg, items),
        Command::Gradcheck { inject_bug, .. } => commands::gradcheck(&cfg, *inject_bug),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
