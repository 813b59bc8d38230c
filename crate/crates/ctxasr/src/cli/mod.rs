//! Command-line interface: one static binary, subcommands over plain files.

mod commands;
mod config;
mod manifest;
mod reproduce;

pub use config::{EvalSection, ExperimentConfig, TrainSection};
pub use manifest::RunManifest;
pub use reproduce::{
    directional_checks, run_seed, soft_check, DirectionalOutcome, SeedArtifacts,
    SeedMeasurements,
};

use crate::corpus::Split;
use crate::eval::ContextKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

const RUN_ROOT_ENV: &str = "CTXASR_RUN_ROOT";

#[derive(Parser)]
#[command(
    name = "ctxasr",
    about = "Context-aware pseudo-speech recognition lab with latent context compression",
    version
)]
struct Cli {
    /// Worker threads for data generation, training, and evaluation
    /// (defaults to the available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic conversational corpus.
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory for split files and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing corpus.
        #[arg(long)]
        force: bool,
        /// Override the corpus seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one regime: single | raw | stage1 | stage2.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        regime: String,
        #[arg(long)]
        corpus: PathBuf,
        /// Initialization checkpoint (required for stage1/stage2).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Run directory (default: <run-root>/<regime>-seed<seed>).
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Root for default run directories (or set CTXASR_RUN_ROOT).
        #[arg(long)]
        run_root: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        /// Override epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint over one or more context sizes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// none | raw | compressed
        #[arg(long, default_value = "none")]
        context: String,
        /// Comma-separated context turn counts, e.g. 0,1,5,10.
        #[arg(long, default_value = "0")]
        turns: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = crate::eval::DEFAULT_MAX_DECODE)]
        max_decode: usize,
        #[arg(long)]
        force: bool,
    },
    /// Compression-rate curves over a split.
    Analyze {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 16)]
        k: usize,
        /// Context range, e.g. 1..10.
        #[arg(long, default_value = "1..10")]
        turns_range: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Full pipeline: properties, data, all regimes, sweeps, report.
    Reproduce {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated training seeds.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        /// Nonzero exit if a blocking property check fails.
        #[arg(long)]
        strict: bool,
        /// Also run the stage-1 data ablation.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        force: bool,
    },
    /// Re-render tables from a directory of report files.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    Split::parse(s).ok_or_else(|| anyhow::anyhow!("unknown split {s:?}"))
}

fn parse_turns(s: &str) -> anyhow::Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| anyhow::anyhow!("bad turn count {p:?}: {e}")))
        .collect()
}

fn parse_range(s: &str) -> anyhow::Result<(usize, usize)> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| anyhow::anyhow!("range must look like 1..10"))?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| anyhow::anyhow!("bad seed {p:?}: {e}")))
        .collect()
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    let threads = rayon::current_num_threads();

    match cli.command {
        Command::GenData {
            config,
            out,
            force,
            seed,
        } => {
            let mut cfg = commands::load_config(config.config.as_deref())?;
            if let Some(s) = seed {
                cfg.corpus.seed = s;
            }
            commands::cmd_gen_data(&cfg, &out, force)
        }
        Command::Train {
            config,
            regime,
            corpus,
            init,
            run_dir,
            run_root,
            force,
            epochs,
            seed,
        } => {
            let mut cfg = commands::load_config(config.config.as_deref())?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let regime = commands::parse_regime(&regime)?;
            let root = run_root
                .or_else(|| std::env::var(RUN_ROOT_ENV).ok().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"));
            let run_dir = run_dir
                .unwrap_or_else(|| root.join(format!("{}-seed{}", regime.as_str(), cfg.train.seed)));
            commands::cmd_train(
                &cfg,
                commands::TrainArgs {
                    regime,
                    corpus_dir: &corpus,
                    run_dir,
                    init: init.as_deref(),
                    force,
                    threads,
                },
            )?;
            Ok(())
        }
        Command::Eval {
            checkpoint,
            corpus,
            split,
            context,
            turns,
            out,
            max_decode,
            force,
        } => {
            let context = ContextKind::parse(&context)
                .ok_or_else(|| anyhow::anyhow!("unknown context kind {context:?}"))?;
            commands::cmd_eval(commands::EvalArgs {
                checkpoint: &checkpoint,
                corpus_dir: &corpus,
                split: parse_split(&split)?,
                context,
                turns: parse_turns(&turns)?,
                out_dir: &out,
                max_decode_tokens: max_decode,
                force,
            })?;
            Ok(())
        }
        Command::Analyze {
            corpus,
            split,
            k,
            turns_range,
            out,
            force,
        } => commands::cmd_analyze(commands::AnalyzeArgs {
            corpus_dir: &corpus,
            split: parse_split(&split)?,
            k,
            turns_range: parse_range(&turns_range)?,
            out_dir: &out,
            force,
        }),
        Command::Reproduce {
            config,
            out,
            seeds,
            strict,
            full,
            force,
        } => {
            let cfg = commands::load_config(config.config.as_deref())?;
            reproduce::cmd_reproduce(
                &cfg,
                reproduce::ReproduceArgs {
                    out_dir: out,
                    seeds: parse_seeds(&seeds)?,
                    strict,
                    full,
                    force,
                },
            )
        }
        Command::Report { dir } => commands::cmd_report(&dir),
    }
}

/// Binary entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
