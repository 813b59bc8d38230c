//! Manual learnability probe, ignored by default. Run with
//! `cargo test --test probe -- --ignored --nocapture` while tuning scales.

use ctxasr::corpus::{generate_corpus, load_corpus, CorpusConfig, Split, SplitCounts};
use ctxasr::eval::{evaluate_model, ContextKind, EvalSettings};
use ctxasr::model::ModelConfig;
use ctxasr::promptkit::Vocab;
use ctxasr::training::{train_single_turn, Regime, TrainConfig, Trainer};
use std::time::Instant;

#[test]
#[ignore]
fn single_turn_learnability() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let fpc: usize = std::env::var("PROBE_FPC")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let cc = CorpusConfig {
        seed: 11,
        n_common: 150,
        n_entities: 300,
        conversations: SplitCounts {
            train: 128,
            dev: 16,
            test: 48,
            pretrain: 0,
        },
        frames_per_char: if fpc > 0 { (fpc, fpc) } else { (2, 4) },
        ..CorpusConfig::default()
    };
    let t0 = Instant::now();
    generate_corpus(&cc, &corpus_dir, false).unwrap();
    let corpus = load_corpus(&corpus_dir).unwrap();
    eprintln!("corpus gen+load {:.1}s", t0.elapsed().as_secs_f32());
    let vocab = Vocab::new();

    let mc = ModelConfig {
        dim: 64,
        enc_channels: 48,
        blocks: 4,
        heads: 4,
        ..ModelConfig::default()
    };
    let mut tc = TrainConfig::for_regime(Regime::Single, 5);
    tc.learning_rate = std::env::var("PROBE_LR")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-3);
    tc.epochs = std::env::var("PROBE_EPOCHS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(6);

    let trainer = Trainer {
        corpus: &corpus,
        vocab: &vocab,
        model_config: mc,
        config: tc,
        run_dir: dir.path().join("run"),
    };
    let t1 = Instant::now();
    let (out, best) = train_single_turn(&trainer).unwrap();
    eprintln!(
        "trained {} steps in {:.1}s; best dev WER {:.4}",
        out.total_steps,
        t1.elapsed().as_secs_f32(),
        out.best_dev_metric
    );
    let t2 = Instant::now();
    let report = evaluate_model(
        &best,
        &vocab,
        corpus.split(Split::Test),
        "test",
        EvalSettings {
            context: ContextKind::None,
            n_decode: 0,
            max_decode_tokens: 160,
        },
    )
    .unwrap();
    eprintln!(
        "test eval in {:.1}s: WER {:.4} Bias-WER {:.4} (S{} D{} I{} / ref {})",
        t2.elapsed().as_secs_f32(),
        report.wer,
        report.bias_wer,
        report.substitutions,
        report.deletions,
        report.insertions,
        report.ref_words
    );
}
