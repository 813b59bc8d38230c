//! End-to-end smoke runs of the training regimes on a miniature corpus.

use ctxasr::corpus::{generate_corpus, load_corpus, CorpusConfig, Split, SplitCounts};
use ctxasr::eval::{evaluate_model, ContextKind, EvalSettings, DEFAULT_MAX_DECODE};
use ctxasr::model::ModelConfig;
use ctxasr::promptkit::Vocab;
use ctxasr::training::{
    tensor_hash, train_single_turn, train_stage1, train_stage2, Regime, TrainConfig, Trainer,
};
use std::time::Instant;

fn smoke_corpus_config() -> CorpusConfig {
    CorpusConfig {
        seed: 11,
        n_common: 60,
        n_entities: 80,
        conversations: SplitCounts {
            train: 24,
            dev: 6,
            test: 6,
            pretrain: 4,
        },
        turns_per_conversation: (3, 6),
        words_per_turn: (4, 8),
        ..CorpusConfig::default()
    }
}

fn smoke_model_config() -> ModelConfig {
    ModelConfig {
        dim: 64,
        enc_channels: 32,
        blocks: 3,
        heads: 4,
        max_len: 2048,
        k_latent: 8,
        c_max: 6,
        ..ModelConfig::default()
    }
}

#[test]
fn single_turn_smoke_learns_and_all_stages_hold_freeze_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    generate_corpus(&smoke_corpus_config(), &corpus_dir, false).unwrap();
    let corpus = load_corpus(&corpus_dir).unwrap();
    let vocab = Vocab::new();

    let mut tc = TrainConfig::for_regime(Regime::Single, 3);
    tc.epochs = 2;
    tc.warmup_steps = 5;
    tc.raw_context_max = 6;

    let t0 = Instant::now();
    let trainer = Trainer {
        corpus: &corpus,
        vocab: &vocab,
        model_config: smoke_model_config(),
        config: tc.clone(),
        run_dir: dir.path().join("run-single"),
    };
    let (out, best) = train_single_turn(&trainer).unwrap();
    eprintln!(
        "single: {} steps in {:.1}s, best dev WER {:.3}",
        out.total_steps,
        t0.elapsed().as_secs_f32(),
        out.best_dev_metric
    );

    // losses from the metric log: finite, and late average beats early
    let log = std::fs::read_to_string(&out.metric_log).unwrap();
    let losses: Vec<f64> = log
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["loss"].as_f64().unwrap()
        })
        .collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    let k = losses.len() / 3;
    let early: f64 = losses[..k].iter().sum::<f64>() / k as f64;
    let late: f64 = losses[losses.len() - k..].iter().sum::<f64>() / k as f64;
    assert!(
        late < early,
        "training did not reduce loss: early {early} late {late}"
    );

    // a smoke run is far too short to reach useful WER; the end-to-end
    // trained-beats-untrained claims live in the acceptance suite
    let settings = EvalSettings {
        context: ContextKind::None,
        n_decode: 0,
        max_decode_tokens: DEFAULT_MAX_DECODE,
    };
    let test = corpus.split(Split::Test);
    let report = evaluate_model(&best, &vocab, test, "test", settings).unwrap();
    assert!(report.wer.is_finite() && report.bias_wer.is_finite());

    // stage 1: everything but the compressor stays bit-identical
    let mut tc1 = TrainConfig::for_regime(Regime::Stage1, 3);
    tc1.epochs = 1;
    tc1.warmup_steps = 5;
    let trainer1 = Trainer {
        corpus: &corpus,
        vocab: &vocab,
        model_config: smoke_model_config(),
        config: tc1,
        run_dir: dir.path().join("run-stage1"),
    };
    let t1 = Instant::now();
    let (_, stage1_best) = train_stage1(&trainer1, best.clone()).unwrap();
    eprintln!("stage1 in {:.1}s", t1.elapsed().as_secs_f32());
    let non_comp = |n: &str| !n.starts_with("comp.");
    assert_eq!(
        tensor_hash(&best, non_comp),
        tensor_hash(&stage1_best, non_comp),
        "stage1 touched non-compressor tensors"
    );

    // stage 2: everything but compressor+adapters stays bit-identical
    let mut tc2 = TrainConfig::for_regime(Regime::Stage2, 3);
    tc2.epochs = 1;
    tc2.warmup_steps = 5;
    let trainer2 = Trainer {
        corpus: &corpus,
        vocab: &vocab,
        model_config: smoke_model_config(),
        config: tc2,
        run_dir: dir.path().join("run-stage2"),
    };
    let t2 = Instant::now();
    let (_, stage2_best) = train_stage2(&trainer2, stage1_best.clone()).unwrap();
    eprintln!("stage2 in {:.1}s", t2.elapsed().as_secs_f32());
    let base_only = |n: &str| !n.starts_with("comp.") && !n.starts_with("adapt.");
    assert_eq!(
        tensor_hash(&stage1_best, base_only),
        tensor_hash(&stage2_best, base_only),
        "stage2 touched frozen base tensors"
    );
}
