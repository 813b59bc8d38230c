//! Acceptance suite.
//!
//! Criteria 1-7 are the blocking property checks; each runs as its own test
//! against the shared property implementations. Criteria 8-13 are the
//! directional reproductions: one end-to-end pipeline (three seeds of
//! single-turn, raw multi-turn, stage-1 K sweep, and stage-2 training, plus
//! all evaluations) runs once and every criterion asserts its own check.
//!
//! The directional pipeline runs at a pinned reduced scale so the whole
//! suite finishes on a small CPU box; `ctxasr reproduce` executes the same
//! checks at the full default scale. Thresholds are identical.

use ctxasr::cli::{directional_checks, run_seed, soft_check, ExperimentConfig, SeedMeasurements};
use ctxasr::corpus::{generate_corpus, load_corpus, CorpusConfig, Split, SplitCounts};
use ctxasr::eval::{compression_curves, RhoRow};
use ctxasr::model::ModelConfig;
use ctxasr::promptkit::Vocab;
use ctxasr::properties;
use std::path::PathBuf;
use std::sync::OnceLock;

fn check(name: &str, result: Result<String, String>) {
    match result {
        Ok(detail) => println!("ACCEPTANCE {name} PASS: {detail}"),
        Err(detail) => panic!("ACCEPTANCE {name} FAIL: {detail}"),
    }
}

fn workdir(sub: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("ctxasr-acceptance").join(sub);
    std::fs::create_dir_all(&dir).expect("workdir");
    dir
}

#[test]
fn c01_gradient_correctness() {
    check("C1", properties::check_gradient_correctness());
}

#[test]
fn c02_fixed_k_bottleneck() {
    check("C2", properties::check_fixed_k());
}

#[test]
fn c03_loss_masking() {
    check("C3", properties::check_loss_masking());
}

#[test]
fn c04_freeze_contracts() {
    check("C4", properties::check_freeze_contracts(&workdir("freeze")));
}

#[test]
fn c05_metric_oracle_equivalence() {
    check("C5", properties::check_metric_oracles());
}

#[test]
fn c06_curriculum_and_schedule() {
    check("C6", properties::check_schedules());
}

#[test]
fn c07_determinism() {
    check("C7", properties::check_determinism(&workdir("determinism")));
}

/// Pinned reduced scale for the directional suite: the spec's default knobs
/// except for corpus counts and model width, sized for a 2-core budget.
fn acceptance_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.corpus = CorpusConfig {
        seed: 7,
        n_common: 150,
        n_entities: 300,
        conversations: SplitCounts {
            train: 192,
            dev: 24,
            test: 72,
            pretrain: 0,
        },
        ..CorpusConfig::default()
    };
    cfg.model = ModelConfig {
        dim: 64,
        enc_channels: 48,
        blocks: 4,
        heads: 4,
        max_len: 4096,
        k_latent: 16,
        c_max: 10,
        ..ModelConfig::default()
    };
    cfg.train.epochs = 4;
    cfg.eval.max_decode_tokens = 120;
    cfg
}

struct Pipeline {
    seeds: Vec<SeedMeasurements>,
    rho_rows: Vec<RhoRow>,
}

static PIPELINE: OnceLock<Pipeline> = OnceLock::new();

fn pipeline() -> &'static Pipeline {
    PIPELINE.get_or_init(|| {
        let cfg = acceptance_config();
        let dir = workdir("directional");
        let corpus_dir = dir.join("corpus");
        generate_corpus(&cfg.corpus, &corpus_dir, true).expect("corpus generates");
        let corpus = load_corpus(&corpus_dir).expect("corpus loads");
        let vocab = Vocab::new();

        let mut seeds = Vec::new();
        for seed in [1u64, 2, 3] {
            eprintln!("=== acceptance pipeline seed {seed} ===");
            let artifacts =
                run_seed(&cfg, &corpus, &vocab, seed, &dir, false).expect("seed pipeline");
            seeds.push(artifacts.measurements);
        }

        // criterion 13 uses the default synthetic test set; only the test
        // split is needed, and split contents are independent of the other
        // splits' counts
        let default_corpus_dir = dir.join("default-test-corpus");
        let mut dc = CorpusConfig::default();
        dc.conversations = SplitCounts {
            train: 0,
            dev: 0,
            test: dc.conversations.test,
            pretrain: 0,
        };
        generate_corpus(&dc, &default_corpus_dir, true).expect("default test corpus");
        let default_corpus = load_corpus(&default_corpus_dir).expect("loads");
        let stats = compression_curves(
            default_corpus.split(Split::Test),
            &vocab,
            ModelConfig::default().k_latent,
            1..=ModelConfig::default().c_max,
        )
        .expect("curves");

        Pipeline {
            seeds,
            rho_rows: stats.rows,
        }
    })
}

fn directional(name: &'static str, tag: &str) {
    let p = pipeline();
    let checks = directional_checks(&p.seeds, &p.rho_rows);
    let c = checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("unknown check {name}"));
    if c.passed {
        println!("ACCEPTANCE {tag} PASS: {}", c.detail);
    } else {
        panic!("ACCEPTANCE {tag} FAIL: {}", c.detail);
    }
}

#[test]
fn c08_training_helps() {
    directional("training_helps", "C8");
}

#[test]
fn c09_raw_context_helps_entities() {
    directional("raw_context_helps_entities", "C9");
}

#[test]
fn c10_compression_recovers_part_of_the_gain() {
    directional("compression_recovers_gain", "C10");
}

#[test]
fn c11_k_monotonicity() {
    directional("k_monotonicity", "C11");
}

#[test]
fn c12_context_length_saturation() {
    directional("context_length_saturation", "C12");
}

#[test]
fn c13_compression_rate_curves() {
    directional("compression_rate_curves", "C13");
}

/// Soft, non-blocking: reported either way.
#[test]
fn soft_inference_time_prompting() {
    let p = pipeline();
    let s = soft_check(&p.seeds);
    println!(
        "ACCEPTANCE SOFT {}: {} — {}",
        if s.passed { "PASS" } else { "FAIL (non-blocking)" },
        s.name,
        s.detail
    );
}
