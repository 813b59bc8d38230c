//! Full experiment reproduction: property suite, corpus generation, all
//! training regimes, evaluation sweeps, compression analytics, and one
//! consolidated report with directional checks.

use super::config::ExperimentConfig;
use super::commands::eval_setting;
use crate::corpus::{generate_corpus, load_corpus, Corpus, Split};
use crate::eval::{
    compression_curves, evaluate_stage1_alignment, format_compression_table,
    format_metric_table, write_metric_jsonl, ContextKind, MetricReport, RhoRow,
};
use crate::model::ModelParams;
use crate::promptkit::Vocab;
use crate::properties::{blocking_property_suite, PropertyResult};
use crate::training::{
    train_raw_multiturn, train_single_turn, train_stage1, train_stage2, DataSelection, Regime,
    Trainer,
};
use anyhow::{bail, Context};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub struct ReproduceArgs {
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub strict: bool,
    /// Adds the stage-2 K sweep and the pretrain-pool stage-1 variant.
    pub full: bool,
    pub force: bool,
}

/// Seed-level measurements feeding the directional checks.
#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct SeedMeasurements {
    pub untrained_wer: f64,
    pub single_wer: f64,
    pub single_bias: f64,
    pub single_raw_bias_n10: f64,
    pub single_raw_wer_n10: f64,
    pub raw_wer_n10: f64,
    pub raw_bias_n10: f64,
    pub comp_wer_n10: f64,
    pub comp_bias_by_n: BTreeMap<usize, f64>,
    pub stage1_wer_by_k: BTreeMap<usize, f64>,
}

pub struct DirectionalOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Means over seeds, then the pinned directional thresholds.
pub fn directional_checks(
    seeds: &[SeedMeasurements],
    rho_rows: &[RhoRow],
) -> Vec<DirectionalOutcome> {
    let n = seeds.len() as f64;
    let mean = |f: &dyn Fn(&SeedMeasurements) -> f64| seeds.iter().map(f).sum::<f64>() / n;
    let untrained = mean(&|s| s.untrained_wer);
    let single_wer = mean(&|s| s.single_wer);
    let single_bias = mean(&|s| s.single_bias);
    let raw_wer10 = mean(&|s| s.raw_wer_n10);
    let raw_bias10 = mean(&|s| s.raw_bias_n10);
    let comp_bias = |k: usize| mean(&|s| s.comp_bias_by_n.get(&k).copied().unwrap_or(f64::NAN));
    let stage1 = |k: usize| mean(&|s| s.stage1_wer_by_k.get(&k).copied().unwrap_or(f64::NAN));

    let mut out = Vec::new();

    let c8 = single_wer < 0.5 * untrained;
    out.push(DirectionalOutcome {
        name: "training_helps",
        passed: c8,
        detail: format!("single WER {single_wer:.4} vs untrained {untrained:.4} (need < 50%)"),
    });

    let rel_bias = (single_bias - raw_bias10) / single_bias;
    let rel_wer = (single_wer - raw_wer10) / single_wer;
    let c9 = rel_bias >= 0.10 && rel_bias > rel_wer;
    out.push(DirectionalOutcome {
        name: "raw_context_helps_entities",
        passed: c9,
        detail: format!(
            "Bias-WER {single_bias:.4} -> {raw_bias10:.4} ({:.1}% rel, need >= 10%); WER rel {:.1}%",
            rel_bias * 100.0,
            rel_wer * 100.0
        ),
    });

    let cb10 = comp_bias(10);
    let ordering = single_bias > cb10 && cb10 > raw_bias10;
    let recovery = (single_bias - cb10) / (single_bias - raw_bias10);
    let c10 = ordering && recovery >= 0.40;
    out.push(DirectionalOutcome {
        name: "compression_recovers_gain",
        passed: c10,
        detail: format!(
            "Bias-WER single {single_bias:.4} > compressed {cb10:.4} > raw {raw_bias10:.4}; recovery {:.1}% (need >= 40%)",
            recovery * 100.0
        ),
    });

    let (k4, k8, k16) = (stage1(4), stage1(8), stage1(16));
    let c11 = k4 >= k8 && k8 >= k16;
    out.push(DirectionalOutcome {
        name: "k_monotonicity",
        passed: c11,
        detail: format!("stage-1 WER K=4 {k4:.4} >= K=8 {k8:.4} >= K=16 {k16:.4}"),
    });

    let (b0, b1, b5, b10) = (comp_bias(0), comp_bias(1), comp_bias(5), cb10);
    let c12 = b5 <= b1 && b1 <= b0 && (b10 - b5).abs() <= 0.005;
    out.push(DirectionalOutcome {
        name: "context_length_saturation",
        passed: c12,
        detail: format!(
            "compressed Bias-WER n=0 {b0:.4} >= n=1 {b1:.4} >= n=5 {b5:.4}; |n10-n5| = {:.4} (need <= 0.005)",
            (b10 - b5).abs()
        ),
    });

    let audio_nonincreasing = rho_rows.windows(2).all(|w| w[1].audio_median <= w[0].audio_median + 1e-12);
    let context_nonincreasing =
        rho_rows.windows(2).all(|w| w[1].context_median <= w[0].context_median + 1e-12);
    let iqr_ok = match (rho_rows.first(), rho_rows.last()) {
        (Some(first), Some(last)) if first.n == 1 && last.n == 10 => {
            (last.audio_q3 - last.audio_q1) <= (first.audio_q3 - first.audio_q1) + 1e-12
                && (last.context_q3 - last.context_q1) <= (first.context_q3 - first.context_q1) + 1e-12
        }
        _ => false,
    };
    let c13 = audio_nonincreasing && context_nonincreasing && iqr_ok;
    out.push(DirectionalOutcome {
        name: "compression_rate_curves",
        passed: c13,
        detail: format!(
            "medians non-increasing (audio {audio_nonincreasing}, context {context_nonincreasing}); IQR(10) <= IQR(1): {iqr_ok}"
        ),
    });

    out
}

/// The soft check: prompting the single-turn model with raw context should
/// not help. Reported, never blocking.
pub fn soft_check(seeds: &[SeedMeasurements]) -> DirectionalOutcome {
    let n = seeds.len() as f64;
    let single_bias = seeds.iter().map(|s| s.single_bias).sum::<f64>() / n;
    let with_ctx = seeds.iter().map(|s| s.single_raw_bias_n10).sum::<f64>() / n;
    DirectionalOutcome {
        name: "untrained_context_prompting_does_not_help",
        passed: with_ctx >= single_bias,
        detail: format!(
            "single-turn model Bias-WER {single_bias:.4} -> {with_ctx:.4} when prompted with raw context"
        ),
    }
}

pub struct SeedArtifacts {
    pub measurements: SeedMeasurements,
    pub reports: Vec<MetricReport>,
}

/// One seed's full directional pipeline: untrained reference, single-turn
/// baseline, raw multi-turn SFT, the stage-1 K sweep, stage 2, and every
/// evaluation the directional checks consume.
pub fn run_seed(
    config: &ExperimentConfig,
    corpus: &Corpus,
    vocab: &Vocab,
    seed: u64,
    out_dir: &Path,
    full: bool,
) -> anyhow::Result<SeedArtifacts> {
    let max_decode = config.eval.max_decode_tokens;
    let seed_dir = out_dir.join(format!("seed-{seed}"));
    let mut m = SeedMeasurements::default();
    let mut reports = Vec::new();

    let record = |r: &MetricReport, tag: &str, reports: &mut Vec<MetricReport>| {
        let mut r = r.clone();
        r.label = format!("{tag} [{}]", r.label);
        reports.push(r);
    };

    // untrained reference
    let untrained: ModelParams<f32> =
        crate::model::new_model(&config.model, seed, &corpus.lexicon().silence);
    let r = eval_setting(&untrained, vocab, corpus, Split::Test, ContextKind::None, 0, max_decode)?;
    m.untrained_wer = r.wer;
    record(&r, "untrained", &mut reports);

    // single-turn baseline
    let mut tc = config.train.to_config(Regime::Single);
    tc.seed = seed;
    let trainer = Trainer {
        corpus,
        vocab,
        model_config: config.model.clone(),
        config: tc,
        run_dir: seed_dir.join("single"),
    };
    let (_, single_best) = train_single_turn(&trainer)?;
    let r = eval_setting(&single_best, vocab, corpus, Split::Test, ContextKind::None, 0, max_decode)?;
    m.single_wer = r.wer;
    m.single_bias = r.bias_wer;
    record(&r, "single", &mut reports);
    let r = eval_setting(&single_best, vocab, corpus, Split::Test, ContextKind::Raw, 10, max_decode)?;
    m.single_raw_wer_n10 = r.wer;
    m.single_raw_bias_n10 = r.bias_wer;
    record(&r, "single+rawctx", &mut reports);

    // raw multi-turn SFT from the single-turn baseline
    let mut tc = config.train.to_config(Regime::RawMultiturn);
    tc.seed = seed;
    let trainer = Trainer {
        corpus,
        vocab,
        model_config: config.model.clone(),
        config: tc,
        run_dir: seed_dir.join("raw"),
    };
    let (_, raw_best) = train_raw_multiturn(&trainer, Some(single_best.clone()))?;
    for n in [5usize, 10] {
        let r = eval_setting(&raw_best, vocab, corpus, Split::Test, ContextKind::Raw, n, max_decode)?;
        if n == 10 {
            m.raw_wer_n10 = r.wer;
            m.raw_bias_n10 = r.bias_wer;
        }
        record(&r, "raw", &mut reports);
    }

    // stage 1 across K, from the single-turn baseline
    let mut stage1_best_k16: Option<ModelParams<f32>> = None;
    for k in [4usize, 8, 16] {
        let mut mc = config.model.clone();
        mc.k_latent = k;
        let mut tc = config.train.to_config(Regime::Stage1);
        tc.seed = seed;
        let trainer = Trainer {
            corpus,
            vocab,
            model_config: mc,
            config: tc,
            run_dir: seed_dir.join(format!("stage1-k{k}")),
        };
        let (_, s1) = train_stage1(&trainer, single_best.clone())?;
        let r = evaluate_stage1_alignment(
            &s1,
            vocab,
            corpus.split(Split::Test),
            "test",
            config.eval.stage1_rel_index,
            max_decode,
        )?;
        m.stage1_wer_by_k.insert(k, r.wer);
        record(&r, &format!("stage1 K={k}"), &mut reports);
        if k == 16 {
            stage1_best_k16 = Some(s1);
        }
    }

    // optional: stage-1 data ablation with the pretraining pool
    if full {
        let mut tc = config.train.to_config(Regime::Stage1);
        tc.seed = seed;
        tc.stage1_data = DataSelection::PretrainPlusTrain;
        let mut mc = config.model.clone();
        mc.k_latent = 16;
        let trainer = Trainer {
            corpus,
            vocab,
            model_config: mc,
            config: tc,
            run_dir: seed_dir.join("stage1-k16-pretrain"),
        };
        let (_, s1p) = train_stage1(&trainer, single_best.clone())?;
        let r = evaluate_stage1_alignment(
            &s1p,
            vocab,
            corpus.split(Split::Test),
            "test",
            config.eval.stage1_rel_index,
            max_decode,
        )?;
        record(&r, "stage1 K=16 pretrain+train", &mut reports);
    }

    // stage 2 from the K=16 stage-1 checkpoint
    let mut tc = config.train.to_config(Regime::Stage2);
    tc.seed = seed;
    let trainer = Trainer {
        corpus,
        vocab,
        model_config: config.model.clone(),
        config: tc,
        run_dir: seed_dir.join("stage2-k16"),
    };
    let (_, stage2_best) = train_stage2(&trainer, stage1_best_k16.expect("k16 trained"))?;
    for n in [0usize, 1, 5, 10] {
        let r = eval_setting(
            &stage2_best,
            vocab,
            corpus,
            Split::Test,
            ContextKind::Compressed,
            n,
            max_decode,
        )?;
        if n == 10 {
            m.comp_wer_n10 = r.wer;
        }
        m.comp_bias_by_n.insert(n, r.bias_wer);
        record(&r, "compressed", &mut reports);
    }

    write_metric_jsonl(&seed_dir.join("reports.jsonl"), &reports)?;
    Ok(SeedArtifacts {
        measurements: m,
        reports,
    })
}

pub fn cmd_reproduce(config: &ExperimentConfig, args: ReproduceArgs) -> anyhow::Result<()> {
    let report_path = args.out_dir.join("report.txt");
    if report_path.exists() && !args.force {
        bail!("{} already exists (pass --force to replace)", report_path.display());
    }
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| args.out_dir.display().to_string())?;
    config.save(&args.out_dir.join("config.toml"))?;

    let mut report = String::new();
    writeln!(report, "# context-compression experiment report\n").unwrap();

    // blocking property suite runs before anything expensive
    eprintln!("running blocking property suite...");
    let props = blocking_property_suite(&args.out_dir.join("properties"));
    writeln!(report, "## blocking property suite\n").unwrap();
    let mut props_ok = true;
    for PropertyResult { name, passed, detail } in &props {
        props_ok &= passed;
        writeln!(report, "[{}] {name}: {detail}", if *passed { "PASS" } else { "FAIL" }).unwrap();
    }
    writeln!(report).unwrap();
    if !props_ok {
        std::fs::write(&report_path, &report)?;
        if args.strict {
            bail!("blocking property suite failed; see {}", report_path.display());
        }
    }

    // corpus
    let corpus_dir = args.out_dir.join("corpus");
    if !corpus_dir.join("manifest.json").exists() || args.force {
        eprintln!("generating corpus...");
        generate_corpus(&config.corpus, &corpus_dir, true)?;
    }
    let corpus = load_corpus(&corpus_dir)?;
    let vocab = Vocab::new();

    // per-seed pipelines
    let mut seed_measurements = Vec::new();
    let mut all_reports: Vec<MetricReport> = Vec::new();
    for &seed in &args.seeds {
        eprintln!("=== seed {seed} ===");
        let artifacts = run_seed(config, &corpus, &vocab, seed, &args.out_dir, args.full)?;
        seed_measurements.push(artifacts.measurements);
        all_reports.extend(artifacts.reports);
    }

    // compression analytics on the test split
    let stats = compression_curves(
        corpus.split(Split::Test),
        &vocab,
        config.model.k_latent,
        1..=config.model.c_max,
    )?;

    // tables
    writeln!(report, "## main results (test split, means shown per seed)\n").unwrap();
    report.push_str(&format_metric_table("all evaluation settings", &all_reports));
    writeln!(report).unwrap();
    report.push_str(&format_compression_table(&stats));
    writeln!(report).unwrap();

    // directional checks over seed means
    let checks = directional_checks(&seed_measurements, &stats.rows);
    let soft = soft_check(&seed_measurements);
    writeln!(report, "## directional checks (mean over {} seeds)\n", args.seeds.len()).unwrap();
    let mut directional_ok = true;
    for c in &checks {
        directional_ok &= c.passed;
        writeln!(report, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)
            .unwrap();
    }
    writeln!(
        report,
        "[{}] (soft) {}: {}",
        if soft.passed { "PASS" } else { "FAIL" },
        soft.name,
        soft.detail
    )
    .unwrap();

    let measurements_json = serde_json::to_string_pretty(&seed_measurements)?;
    std::fs::write(args.out_dir.join("measurements.json"), measurements_json)?;
    std::fs::write(&report_path, &report)?;
    println!("{report}");
    println!("report written to {}", report_path.display());

    if args.strict && !props_ok {
        bail!("blocking property suite failed");
    }
    let _ = directional_ok;
    Ok(())
}
