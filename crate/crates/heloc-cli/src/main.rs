//! `heloc` — the command-line pipeline around `heloc-core`.
//!
//! Exit codes: 0 success, 2 input error, 3 training-signal error, 4
//! model/config mismatch.

mod commands;
mod config;
mod errors;
mod ioutil;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "heloc", version, about = "AST hierarchy encoder: parse, pretrain, apply")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse demo-language sources or interchange files into validated
    /// interchange files plus a per-tree stats report.
    Parse(ParseArgs),
    /// Pretrain the encoder on a corpus directory and write a checkpoint.
    Pretrain(PretrainArgs),
    /// Run a downstream task from a checkpoint.
    Apply(ApplyArgs),
}

/// Shared config assembly: a flat key=value file, then flag overrides.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Base profile: `desk` (small, runnable) or `paper` (full scale).
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Flat key=value config file; keys follow the training config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    max_paths: Option<usize>,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    triplets_per_graph: Option<usize>,
    #[arg(long)]
    activation: Option<String>,
    /// Disable the level-prediction objective.
    #[arg(long)]
    no_nep: bool,
    /// Disable the triplet objective.
    #[arg(long)]
    no_nro: bool,
    /// Bypass the self-attention sub-layer.
    #[arg(long)]
    no_self_attention: bool,
    /// Drop the internal and external attention residuals.
    #[arg(long)]
    no_residual: bool,
}

#[derive(Args)]
struct ParseArgs {
    /// Demo-language sources (anything else is treated as interchange).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PretrainArgs {
    /// Directory of `.dl` sources and/or `.jsonl` interchange files.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ApplyArgs {
    #[command(subcommand)]
    task: ApplyTask,
}

#[derive(Args, Clone)]
struct ApplyCommon {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum ApplyTask {
    /// Fine-tune a classifier on a labeled corpus and score a held-out one.
    Classify {
        #[command(flatten)]
        common: ApplyCommon,
        /// Training corpus CSV: `path,label`.
        #[arg(long)]
        train: PathBuf,
        /// Evaluation corpus CSV: `path,label`.
        #[arg(long)]
        eval: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 3e-3)]
        ft_lr: f64,
        #[arg(long, default_value_t = 6)]
        patience: usize,
        #[arg(long, default_value_t = 0.1)]
        smoothing: f64,
        /// Fraction of the training corpus held out for early stopping.
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
    },
    /// Score clone pairs with frozen code vectors.
    Clone {
        #[command(flatten)]
        common: ApplyCommon,
        /// Pair file CSV: `path1,path2,y` with y in {1,-1}.
        #[arg(long)]
        pairs: PathBuf,
        /// Optional pair file used to fit a linear calibration on the score.
        #[arg(long)]
        calibrate_pairs: Option<PathBuf>,
    },
    /// K-means over pooled code vectors.
    Cluster {
        #[command(flatten)]
        common: ApplyCommon,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        k: usize,
        /// Optional labels CSV (`path,label`) scored with the adjusted Rand
        /// index.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
    },
    /// Write pooled code vectors for each input.
    Embed {
        #[command(flatten)]
        common: ApplyCommon,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Export per-node 2-D principal-component coordinates for one input.
    Project {
        #[command(flatten)]
        common: ApplyCommon,
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Parse(args) => commands::parse::run(args),
        Command::Pretrain(args) => commands::pretrain::run(args),
        Command::Apply(args) => commands::apply::run(args.task),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("heloc: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
