//! Subcommand implementations: gen-data, train, eval, analyze, report.

use super::config::ExperimentConfig;
use super::manifest::{sha256_file, RunManifest};
use crate::corpus::{generate_corpus, load_corpus, Corpus, Split};
use crate::eval::{
    compression_curves, evaluate_model, format_compression_table, format_metric_table,
    write_compression_jsonl, write_metric_jsonl, ContextKind, EvalSettings, MetricReport,
};
use crate::model::{load_checkpoint, ModelParams};
use crate::promptkit::Vocab;
use crate::training::{
    train_raw_multiturn, train_single_turn, train_stage1, train_stage2, Regime, RunOutput,
    Trainer,
};
use anyhow::{bail, Context};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

pub fn cmd_gen_data(
    config: &ExperimentConfig,
    out_dir: &Path,
    force: bool,
) -> anyhow::Result<()> {
    let manifest = generate_corpus(&config.corpus, out_dir, force)?;
    println!("corpus written to {}", out_dir.display());
    println!(
        "{:>9}  {:>6}  {:>7}  {:>7}  {:>7}  {:>6}",
        "split", "convs", "utts", "words", "ent", "ratio"
    );
    for (split, stats) in &manifest.stats {
        println!(
            "{:>9}  {:>6}  {:>7}  {:>7}  {:>7}  {:>6.3}",
            split,
            stats.conversations,
            stats.utterances,
            stats.words,
            stats.entity_words,
            stats.entity_word_ratio
        );
    }
    Ok(())
}

pub struct TrainArgs<'a> {
    pub regime: Regime,
    pub corpus_dir: &'a Path,
    pub run_dir: PathBuf,
    pub init: Option<&'a Path>,
    pub force: bool,
    pub threads: usize,
}

fn regime_of_str(s: &str) -> anyhow::Result<Regime> {
    Ok(match s {
        "single" => Regime::Single,
        "raw" => Regime::RawMultiturn,
        "stage1" => Regime::Stage1,
        "stage2" => Regime::Stage2,
        other => bail!("unknown regime {other:?} (single|raw|stage1|stage2)"),
    })
}

pub fn parse_regime(s: &str) -> anyhow::Result<Regime> {
    regime_of_str(s)
}

fn load_init(path: &Path) -> anyhow::Result<ModelParams<f32>> {
    let (params, _) = load_checkpoint(path)
        .with_context(|| format!("loading init checkpoint {}", path.display()))?;
    Ok(params)
}

pub fn cmd_train(config: &ExperimentConfig, args: TrainArgs) -> anyhow::Result<RunOutput> {
    if args.run_dir.join("run.json").exists() && !args.force {
        bail!(
            "run directory {} already holds a completed run (pass --force to replace)",
            args.run_dir.display()
        );
    }
    let corpus = load_corpus(args.corpus_dir)?;
    let vocab = Vocab::new();
    let train_config = config.train.to_config(args.regime);

    // dependency checkpoints
    let init: Option<ModelParams<f32>> = match (args.regime, args.init) {
        (Regime::Stage1, None) => bail!("stage1 requires --init with a single-turn checkpoint"),
        (Regime::Stage2, None) => bail!("stage2 requires --init with a stage1 checkpoint"),
        (_, Some(p)) => Some(load_init(p)?),
        (_, None) => None,
    };
    if args.regime == Regime::Stage2 {
        let has = init.as_ref().map(|p| p.config.has_compressor).unwrap_or(false);
        if !has {
            bail!("stage2 requires a stage1 checkpoint (init has no compressor)");
        }
    }

    std::fs::create_dir_all(&args.run_dir)
        .with_context(|| args.run_dir.display().to_string())?;
    config.save(&args.run_dir.join("config.toml"))?;

    let trainer = Trainer {
        corpus: &corpus,
        vocab: &vocab,
        model_config: config.model.clone(),
        config: train_config,
        run_dir: args.run_dir.clone(),
    };
    let started = Instant::now();
    let (out, _best) = match args.regime {
        Regime::Single => train_single_turn(&trainer)?,
        Regime::RawMultiturn => train_raw_multiturn(&trainer, init)?,
        Regime::Stage1 => train_stage1(&trainer, init.expect("checked above"))?,
        Regime::Stage2 => train_stage2(&trainer, init.expect("checked above"))?,
    };

    let mut manifest = RunManifest {
        run_id: args
            .run_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into()),
        regime: args.regime.as_str().into(),
        seed: config.train.seed,
        threads: args.threads,
        corpus_dir: args.corpus_dir.display().to_string(),
        corpus_manifest_sha256: sha256_file(&args.corpus_dir.join("manifest.json"))?,
        total_steps: out.total_steps,
        best_dev_metric: out.best_dev_metric,
        wall_clock_secs: started.elapsed().as_secs(),
        artifacts: Default::default(),
    };
    for rel in [
        "config.toml",
        "metrics.jsonl",
        "eval.jsonl",
        "checkpoints/best",
        "checkpoints/last",
    ] {
        manifest.hash_artifact(&args.run_dir, rel)?;
    }
    manifest.save(&args.run_dir)?;
    manifest.verify(&args.run_dir)?;
    println!(
        "run {} complete: {} steps, best dev metric {:.4}, artifacts verified",
        manifest.run_id, out.total_steps, out.best_dev_metric
    );
    Ok(out)
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub corpus_dir: &'a Path,
    pub split: Split,
    pub context: ContextKind,
    pub turns: Vec<usize>,
    pub out_dir: &'a Path,
    pub max_decode_tokens: usize,
    pub force: bool,
}

pub fn cmd_eval(args: EvalArgs) -> anyhow::Result<Vec<MetricReport>> {
    if args.context == ContextKind::None && args.turns.iter().any(|&n| n > 0) {
        bail!("--context none contradicts --turns > 0");
    }
    let reports_path = args.out_dir.join("reports.jsonl");
    if reports_path.exists() && !args.force {
        bail!(
            "{} already exists (pass --force to replace)",
            reports_path.display()
        );
    }
    let (params, vocab) = load_checkpoint(args.checkpoint)?;
    let corpus = load_corpus(args.corpus_dir)?;
    let convs = corpus.split(args.split);
    if convs.is_empty() {
        bail!("split {} is empty", args.split);
    }
    let mut reports = Vec::new();
    for &n in &args.turns {
        let report = evaluate_model(
            &params,
            &vocab,
            convs,
            args.split.as_str(),
            EvalSettings {
                context: args.context,
                n_decode: n,
                max_decode_tokens: args.max_decode_tokens,
            },
        )?;
        reports.push(report);
    }
    std::fs::create_dir_all(args.out_dir).with_context(|| args.out_dir.display().to_string())?;
    write_metric_jsonl(&reports_path, &reports)?;
    let table = format_metric_table(
        &format!("{} on {} ({})", args.context.as_str(), args.split, args.checkpoint.display()),
        &reports,
    );
    std::fs::write(args.out_dir.join("table.txt"), &table)
        .with_context(|| args.out_dir.display().to_string())?;
    print!("{table}");
    Ok(reports)
}

pub struct AnalyzeArgs<'a> {
    pub corpus_dir: &'a Path,
    pub split: Split,
    pub k: usize,
    pub turns_range: (usize, usize),
    pub out_dir: &'a Path,
    pub force: bool,
}

pub fn cmd_analyze(args: AnalyzeArgs) -> anyhow::Result<()> {
    let out_path = args.out_dir.join("compression.jsonl");
    if out_path.exists() && !args.force {
        bail!("{} already exists (pass --force to replace)", out_path.display());
    }
    let corpus = load_corpus(args.corpus_dir)?;
    let convs = corpus.split(args.split);
    let vocab = Vocab::new();
    let stats = compression_curves(convs, &vocab, args.k, args.turns_range.0..=args.turns_range.1)?;
    for n in &stats.skipped {
        eprintln!("warning: no eligible conversations with {n} prior turns; omitted");
    }
    std::fs::create_dir_all(args.out_dir).with_context(|| args.out_dir.display().to_string())?;
    write_compression_jsonl(&out_path, &stats)?;
    let table = format_compression_table(&stats);
    std::fs::write(args.out_dir.join("table.txt"), &table)
        .with_context(|| args.out_dir.display().to_string())?;
    print!("{table}");
    Ok(())
}

/// Re-renders tables from a directory of previously written reports.
pub fn cmd_report(dir: &Path) -> anyhow::Result<()> {
    let reports_path = dir.join("reports.jsonl");
    let compression_path = dir.join("compression.jsonl");
    let report_txt = dir.join("report.txt");
    let mut printed = false;
    if reports_path.exists() {
        let text = std::fs::read_to_string(&reports_path)?;
        let reports: Vec<MetricReport> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        print!("{}", format_metric_table(&dir.display().to_string(), &reports));
        printed = true;
    }
    if compression_path.exists() {
        let text = std::fs::read_to_string(&compression_path)?;
        println!("# compression curve records");
        print!("{text}");
        printed = true;
    }
    if report_txt.exists() {
        print!("{}", std::fs::read_to_string(&report_txt)?);
        printed = true;
    }
    if !printed {
        bail!("no report files found under {}", dir.display());
    }
    Ok(())
}

/// Shared helper: evaluate a loaded model over one setting.
pub fn eval_setting(
    params: &ModelParams<f32>,
    vocab: &Vocab,
    corpus: &Corpus,
    split: Split,
    context: ContextKind,
    n: usize,
    max_decode: usize,
) -> anyhow::Result<MetricReport> {
    Ok(evaluate_model(
        params,
        vocab,
        corpus.split(split),
        split.as_str(),
        EvalSettings {
            context,
            n_decode: n,
            max_decode_tokens: max_decode,
        },
    )?)
}
