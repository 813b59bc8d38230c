//! The training loop and the four regime entry points.

use super::{
    curriculum_max_context, frozen_hash, optimizer_step, trainable_names, AdamState,
    ContextSampling, DataSelection, QueryMode, Regime, TrainConfig, TrainError,
};
use crate::corpus::{Conversation, Corpus, Split};
use crate::eval::{
    evaluate_model, evaluate_stage1_alignment, ContextKind, EvalSettings, MetricReport,
};
use crate::model::{
    attach_adapters, attach_compressor, new_model, save_checkpoint, Forward, ModelConfig,
    ModelParams, TensorGrads,
};
use crate::promptkit::{
    build_compressed_context, build_latent_single_turn, build_raw_context, build_single_turn,
    PromptSequence, Vocab,
};
use crate::rng::{stream, tag};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::PathBuf;

pub struct Trainer<'a> {
    pub corpus: &'a Corpus,
    pub vocab: &'a Vocab,
    pub model_config: ModelConfig,
    pub config: TrainConfig,
    pub run_dir: PathBuf,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub metric_log: PathBuf,
    pub eval_log: PathBuf,
    pub total_steps: usize,
    pub best_dev_metric: f64,
    pub dev_reports: Vec<MetricReport>,
}

/// (conversation index within its pool, turn index)
type ExampleRef = (usize, usize);

/// Raw-context turn count for one example.
pub fn sample_context_n(rng: &mut ChaCha8Rng, sampling: ContextSampling, cap: usize) -> usize {
    match sampling {
        ContextSampling::ZeroToMax => rng.gen_range(0..=cap),
        ContextSampling::OneToMax => rng.gen_range(1..=cap.max(1)),
    }
}

struct Example<'c> {
    prompt: PromptSequence,
    audio: Vec<&'c Array2<f32>>,
}

fn build_example<'c>(
    regime: Regime,
    config: &TrainConfig,
    model_config: &ModelConfig,
    pool: &[&'c Conversation],
    ex: ExampleRef,
    max_ctx: usize,
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
) -> Result<Example<'c>, TrainError> {
    let conv = pool[ex.0];
    let t = ex.1;
    let current = &conv.turns[t];
    let (prompt, prior) = match regime {
        Regime::Single => (build_single_turn(vocab, current)?, &conv.turns[t..t]),
        Regime::Stage1 => {
            let rel = match config.stage1_query {
                QueryMode::SampleUniform => rng.gen_range(1..=model_config.c_max),
                QueryMode::FixedOne => 1,
            };
            (
                build_latent_single_turn(vocab, current, rel, model_config.c_max)?,
                &conv.turns[t..t],
            )
        }
        Regime::RawMultiturn => {
            let drawn = sample_context_n(rng, config.raw_context_sampling, config.raw_context_max);
            let n = drawn.min(t);
            let prior = &conv.turns[t - n..t];
            (build_raw_context(vocab, prior, current)?, prior)
        }
        Regime::Stage2 => {
            let drawn = rng.gen_range(0..=max_ctx);
            let n = drawn.min(t);
            let prior = &conv.turns[t - n..t];
            (
                build_compressed_context(vocab, prior, current, model_config.c_max)?,
                prior,
            )
        }
    };
    let mut audio: Vec<&Array2<f32>> = prior.iter().map(|p| &p.frames).collect();
    audio.push(&current.frames);
    Ok(Example { prompt, audio })
}

fn dev_metric(
    regime: Regime,
    params: &ModelParams<f32>,
    vocab: &Vocab,
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<(f64, MetricReport), TrainError> {
    let dev = corpus.split(Split::Dev);
    if dev.is_empty() {
        return Err(TrainError::EmptySplit(Split::Dev));
    }
    let report = match regime {
        Regime::Single => evaluate_model(
            params,
            vocab,
            dev,
            "dev",
            EvalSettings {
                context: ContextKind::None,
                n_decode: 0,
                max_decode_tokens: config.max_decode_tokens,
            },
        )?,
        Regime::RawMultiturn => evaluate_model(
            params,
            vocab,
            dev,
            "dev",
            EvalSettings {
                context: ContextKind::Raw,
                n_decode: config.raw_context_max,
                max_decode_tokens: config.max_decode_tokens,
            },
        )?,
        Regime::Stage1 => {
            evaluate_stage1_alignment(params, vocab, dev, "dev", 1, config.max_decode_tokens)?
        }
        Regime::Stage2 => evaluate_model(
            params,
            vocab,
            dev,
            "dev",
            EvalSettings {
                context: ContextKind::Compressed,
                n_decode: params.config.c_max,
                max_decode_tokens: config.max_decode_tokens,
            },
        )?,
    };
    // stage 2 selects on entity errors, everything else on plain WER
    let metric = if regime == Regime::Stage2 {
        report.bias_wer
    } else {
        report.wer
    };
    Ok((metric, report))
}

/// Stage-1 FixedOne mode trains only query 1; saved checkpoints carry it
/// copied into every index.
fn finalize_for_save(params: &ModelParams<f32>, config: &TrainConfig) -> ModelParams<f32> {
    if config.regime != Regime::Stage1 || config.stage1_query != QueryMode::FixedOne {
        return params.clone();
    }
    let mut out = params.clone();
    let q1 = out.get("comp.q.1").clone();
    for i in 2..=out.config.c_max {
        out.tensors.insert(format!("comp.q.{i}"), q1.clone());
    }
    out
}

fn io_err(path: &std::path::Path, source: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn run_training(
    trainer: &Trainer,
    mut params: ModelParams<f32>,
) -> Result<(RunOutput, ModelParams<f32>), TrainError> {
    let config = &trainer.config;
    config.validate()?;
    let regime = config.regime;
    let corpus = trainer.corpus;

    let mut pool: Vec<&Conversation> = corpus.split(Split::Train).iter().collect();
    if regime == Regime::Stage1 && config.stage1_data == DataSelection::PretrainPlusTrain {
        pool.extend(corpus.split(Split::Pretrain).iter());
    }
    if pool.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let examples = example_pool_refs(&pool);
    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;

    let trainable = trainable_names(&params, regime);
    let frozen_before = frozen_hash(&params, &trainable);
    let mut state = AdamState::new(&params, &trainable);

    std::fs::create_dir_all(&trainer.run_dir).map_err(|e| io_err(&trainer.run_dir, e))?;
    let metric_log = trainer.run_dir.join("metrics.jsonl");
    let eval_log = trainer.run_dir.join("eval.jsonl");
    let mut metric_w = std::io::BufWriter::new(
        std::fs::File::create(&metric_log).map_err(|e| io_err(&metric_log, e))?,
    );
    let mut eval_w = std::io::BufWriter::new(
        std::fs::File::create(&eval_log).map_err(|e| io_err(&eval_log, e))?,
    );

    let best_dir = trainer.run_dir.join("checkpoints").join("best");
    let last_dir = trainer.run_dir.join("checkpoints").join("last");
    let mut best_metric = f64::INFINITY;
    let mut best_params = params.clone();
    let mut dev_reports = Vec::new();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut stream(&[
            config.seed,
            tag::EPOCH_SHUFFLE,
            regime.id(),
            epoch as u64,
        ]));

        let mut epoch_loss = 0.0f64;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let step0 = state.step;
            let max_ctx = match regime {
                Regime::Stage2 => {
                    curriculum_max_context(step0, total_steps, params.config.c_max)
                }
                Regime::RawMultiturn => config.raw_context_max,
                _ => 0,
            };

            let results: Vec<Result<(f64, TensorGrads<f32>), TrainError>> = chunk
                .par_iter()
                .enumerate()
                .map(|(offset, &ex_idx)| {
                    let mut rng = stream(&[
                        config.seed,
                        tag::EXAMPLE,
                        regime.id(),
                        epoch as u64,
                        (batch_idx * config.batch_size + offset) as u64,
                    ]);
                    let ex = build_example(
                        regime,
                        config,
                        &trainer.model_config,
                        &pool,
                        examples[ex_idx],
                        max_ctx,
                        trainer.vocab,
                        &mut rng,
                    )?;
                    let mut f = Forward::new(&params);
                    let root = f.example_loss(&ex.prompt, &ex.audio)?;
                    Ok(f.grads(root))
                })
                .collect();

            // reduce in example order so results are thread-count independent
            let mut acc = TensorGrads::new();
            let mut loss_sum = 0.0f64;
            let count = results.len();
            for r in results {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { step: step0 + 1 });
                }
                loss_sum += loss;
                for (name, g) in grads {
                    match acc.get_mut(&name) {
                        Some(a) => *a += &g,
                        None => {
                            acc.insert(name, g);
                        }
                    }
                }
            }
            let scale = 1.0 / count as f32;
            for g in acc.values_mut() {
                g.mapv_inplace(|x| x * scale);
            }
            let mean_loss = loss_sum / count as f64;
            epoch_loss += loss_sum;

            let lr = optimizer_step(&mut params, &acc, &trainable, &mut state, config, total_steps)?;
            writeln!(
                metric_w,
                r#"{{"step":{},"loss":{},"lr":{},"max_ctx":{}}}"#,
                state.step, mean_loss, lr, max_ctx
            )
            .map_err(|e| io_err(&metric_log, e))?;
        }
        metric_w.flush().map_err(|e| io_err(&metric_log, e))?;

        let (metric, report) = dev_metric(regime, &params, trainer.vocab, corpus, config)?;
        let mut line = serde_json::to_value(&report).expect("report serializes");
        line["epoch"] = serde_json::json!(epoch);
        line["dev_metric"] = serde_json::json!(metric);
        writeln!(eval_w, "{line}").map_err(|e| io_err(&eval_log, e))?;
        eval_w.flush().map_err(|e| io_err(&eval_log, e))?;
        eprintln!(
            "[{}] epoch {} mean loss {:.4} dev metric {:.4}",
            regime.as_str(),
            epoch,
            epoch_loss / examples.len() as f64,
            metric
        );
        dev_reports.push(report);

        let snapshot = finalize_for_save(&params, config);
        save_checkpoint(&last_dir, &snapshot, trainer.vocab)?;
        if metric < best_metric {
            best_metric = metric;
            best_params = snapshot.clone();
            save_checkpoint(&best_dir, &snapshot, trainer.vocab)?;
        }
    }

    let frozen_after = frozen_hash(&params, &trainable);
    if frozen_before != frozen_after {
        return Err(TrainError::FreezeViolation(format!(
            "regime {} modified frozen tensors",
            regime.as_str()
        )));
    }

    Ok((
        RunOutput {
            best_checkpoint: best_dir,
            last_checkpoint: last_dir,
            metric_log,
            eval_log,
            total_steps,
            best_dev_metric: best_metric,
            dev_reports,
        },
        best_params,
    ))
}

fn example_pool_refs(pool: &[&Conversation]) -> Vec<ExampleRef> {
    let mut out = Vec::new();
    for (ci, conv) in pool.iter().enumerate() {
        for t in 0..conv.turns.len() {
            out.push((ci, t));
        }
    }
    out
}

/// Trains every model parameter on single-turn prompts from a fresh
/// initialization; selects by dev WER.
pub fn train_single_turn(trainer: &Trainer) -> Result<(RunOutput, ModelParams<f32>), TrainError> {
    assert_eq!(trainer.config.regime, Regime::Single);
    let silence = trainer.corpus.lexicon().silence.clone();
    let params = new_model(&trainer.model_config, trainer.config.seed, &silence);
    run_training(trainer, params)
}

/// Multi-turn SFT on raw prior audio plus transcripts; all parameters
/// train. `init` continues from a checkpoint (a fresh model otherwise).
pub fn train_raw_multiturn(
    trainer: &Trainer,
    init: Option<ModelParams<f32>>,
) -> Result<(RunOutput, ModelParams<f32>), TrainError> {
    assert_eq!(trainer.config.regime, Regime::RawMultiturn);
    let params = match init {
        Some(p) => p,
        None => {
            let silence = trainer.corpus.lexicon().silence.clone();
            new_model(&trainer.model_config, trainer.config.seed, &silence)
        }
    };
    run_training(trainer, params)
}

/// Stage 1: attaches the compressor to a trained single-turn model and
/// aligns latent audio to the frozen backbone on the single-turn task.
pub fn train_stage1(
    trainer: &Trainer,
    base: ModelParams<f32>,
) -> Result<(RunOutput, ModelParams<f32>), TrainError> {
    assert_eq!(trainer.config.regime, Regime::Stage1);
    let mut params = base;
    if !params.config.has_compressor {
        params.config.k_latent = trainer.model_config.k_latent;
        attach_compressor(&mut params, trainer.config.seed);
    }
    run_training(trainer, params)
}

/// Stage 2: curriculum fine-tuning on compressed multi-turn prompts;
/// only the compressor and adapters train.
pub fn train_stage2(
    trainer: &Trainer,
    stage1: ModelParams<f32>,
) -> Result<(RunOutput, ModelParams<f32>), TrainError> {
    assert_eq!(trainer.config.regime, Regime::Stage2);
    if !stage1.config.has_compressor {
        return Err(TrainError::MissingDependency {
            regime: "stage2",
            needs: "stage1",
        });
    }
    let mut params = stage1;
    if !params.config.has_adapters {
        attach_adapters(&mut params, trainer.config.seed);
    }
    run_training(trainer, params)
}
