//! Manual single-seed calibration of the acceptance-scale pipeline.
//! Run with `cargo test --test calibrate -- --ignored --nocapture`.
//! Knobs: CAL_EPOCHS_SINGLE, CAL_EPOCHS, CAL_LR_SINGLE, CAL_SEED.

use ctxasr::cli::{run_seed, ExperimentConfig};
use ctxasr::corpus::{generate_corpus, load_corpus, CorpusConfig, SplitCounts};
use ctxasr::model::ModelConfig;
use ctxasr::promptkit::Vocab;

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

#[test]
#[ignore]
fn calibrate_one_seed() {
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
    cfg.train.epochs = env_or("CAL_EPOCHS", 4);
    cfg.train.epochs_single = env_or("CAL_EPOCHS_SINGLE", 28);
    cfg.train.lr_single = env_or("CAL_LR_SINGLE", 3e-3);
    cfg.eval.max_decode_tokens = 120;

    let dir = std::env::temp_dir().join("ctxasr-calibrate");
    std::fs::create_dir_all(&dir).unwrap();
    let corpus_dir = dir.join("corpus");
    generate_corpus(&cfg.corpus, &corpus_dir, true).unwrap();
    let corpus = load_corpus(&corpus_dir).unwrap();
    let vocab = Vocab::new();
    let seed = env_or("CAL_SEED", 1u64);

    let t0 = std::time::Instant::now();
    let artifacts = run_seed(&cfg, &corpus, &vocab, seed, &dir, false).unwrap();
    eprintln!(
        "calibration seed {seed} in {:.1}s\n{}",
        t0.elapsed().as_secs_f32(),
        serde_json::to_string_pretty(&artifacts.measurements).unwrap()
    );
}
