//! The blocking property suite: fast, deterministic checks of the core
//! numeric and structural contracts. The acceptance tests run each check as
//! its own test; the experiment reproduction command runs the whole suite
//! and reports it ahead of any directional results.

use crate::corpus::{generate_corpus, load_corpus, CorpusConfig, Split, SplitCounts};
use crate::eval::{
    evaluate_model, rho_audio, rho_context, wer, word_align, ContextKind, EvalSettings,
    Utterance,
};
use crate::model::{
    attach_compressor, compressor_attention_probs, lm_attention_probs, new_model, Forward,
    ModelConfig, ModelParams,
};
use crate::oracles;
use crate::promptkit::{AudioSlot, Element, PromptSequence, SlotKind, Vocab};
use crate::rng::stream;
use crate::training::{
    curriculum_max_context, lr_at, tensor_hash, train_single_turn, train_stage1, train_stage2,
    Regime, TrainConfig, Trainer,
};
use ndarray::Array2;
use rand::Rng;
use std::path::Path;

pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = Result<String, String>;

fn miniature_model() -> ModelParams<f64> {
    let cfg = ModelConfig {
        feature_dim: 3,
        enc_channels: 5,
        dim: 4,
        blocks: 1,
        heads: 2,
        ff_mult: 2,
        max_len: 64,
        vocab_size: 8,
        k_latent: 2,
        c_max: 3,
        adapter_rank: 2,
        ..ModelConfig::default()
    };
    let mut p: ModelParams<f64> = new_model(&cfg, 17, &[0.3, 0.4, 0.5]);
    attach_compressor(&mut p, 17);
    crate::model::attach_adapters(&mut p, 17);
    p
}

/// A hand-built teacher-forced prompt over the miniature vocab: one latent
/// context slot, one raw current slot, and a short supervised tail.
fn miniature_prompt() -> PromptSequence {
    let mut elements = vec![Element::Text(1)];
    elements.push(Element::Slot(AudioSlot {
        slot_id: 0,
        kind: SlotKind::Latent,
        rel_index: 1,
    }));
    for id in [2, 3] {
        elements.push(Element::Text(id));
    }
    elements.push(Element::Slot(AudioSlot {
        slot_id: 1,
        kind: SlotKind::Raw,
        rel_index: 0,
    }));
    for id in [3, 5, 6, 7, 4] {
        elements.push(Element::Text(id));
    }
    let n = elements.len();
    // supervise the last four predictions (positions n-5 .. n-2)
    let mut targets = vec![0u32; n];
    let mut loss_mask = vec![false; n];
    for i in (n - 5)..(n - 1) {
        let Element::Text(id) = elements[i + 1] else { unreachable!() };
        targets[i] = id;
        loss_mask[i] = true;
    }
    PromptSequence {
        elements,
        targets,
        loss_mask,
        gen_start: n - 4,
    }
}

/// Full-pipeline gradient check (frames -> loss) at f64 on the miniature
/// configuration, 20+ random coordinates per touched tensor.
pub fn check_gradient_correctness() -> Check {
    let params = miniature_model();
    let prompt = miniature_prompt();
    let frames_a = Array2::from_shape_fn((7, 3), |(i, j)| ((i * 3 + j) as f32 * 0.37).sin());
    let frames_b = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 5 + j) as f32 * 0.23).cos());
    let audio = [&frames_a, &frames_b];
    let mut rng = stream(&[99, 1]);
    let report = oracles::finite_difference_check(&params, &prompt, &audio, 20, &mut rng);
    let detail = format!(
        "{} coordinates, max rel err {:.3e} at {}",
        report.coords_checked, report.max_rel_err, report.worst_tensor
    );
    if report.max_rel_err <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Fixed-K bottleneck: exactly K rows for L in {1,2,7,64,301}, attention
/// rows sum to 1 within 1e-6, and identical-value inputs collapse to the
/// projected value independent of the queries.
pub fn check_fixed_k() -> Check {
    let mut params = miniature_model();
    let k = params.config.k_latent;
    for l in [1usize, 2, 7, 64, 301] {
        let x = Array2::from_shape_fn((l, 4), |(i, j)| ((i + j) as f64 * 0.11).sin());
        let mut f = Forward::new(&params);
        let xid = f.tape.leaf(x.clone());
        let z = f.compress_turn(xid, 1).map_err(|e| e.to_string())?;
        if f.tape.value(z).dim() != (k, 4) {
            return Err(format!("L={l}: output not {k} rows"));
        }
        for probs in compressor_attention_probs(&params, &x, 1) {
            for row in probs.rows() {
                let s: f64 = row.sum();
                if (s - 1.0).abs() > 1e-6 {
                    return Err(format!("L={l}: attention row sums to {s}"));
                }
            }
        }
    }
    // LM attention rows as well
    let emb = Array2::from_shape_fn((9, 4), |(i, j)| ((2 * i + j) as f64 * 0.17).cos());
    for (b, heads) in lm_attention_probs(&params, &emb).into_iter().enumerate() {
        for p in heads {
            for row in p.rows() {
                let s: f64 = row.sum();
                if (s - 1.0).abs() > 1e-6 {
                    return Err(format!("lm block {b}: attention row sums to {s}"));
                }
            }
        }
    }
    // identical-value collapse, feed-forward disabled
    params.config.compressor_ff = false;
    let row: Vec<f64> = vec![0.4, -0.9, 0.2, 0.7];
    let x = Array2::from_shape_fn((6, 4), |(_, j)| row[j]);
    let expect = Array2::from_shape_vec((1, 4), row)
        .unwrap()
        .dot(params.get("comp.attn.wv"))
        .dot(params.get("comp.attn.wo"));
    for rel in 1..=2 {
        let mut f = Forward::new(&params);
        let xid = f.tape.leaf(x.clone());
        let z = f.compress_turn(xid, rel).map_err(|e| e.to_string())?;
        let z = f.tape.value(z);
        for r in 0..z.nrows() {
            for c in 0..4 {
                if (z[[r, c]] - expect[[0, c]]).abs() > 1e-9 {
                    return Err(format!("collapse failed at rel {rel} [{r},{c}]"));
                }
            }
        }
    }
    Ok("K rows for all L; softmax normalized; identical-value collapse".into())
}

/// Corrupting context-turn targets leaves the loss bit-identical, and the
/// mask covers exactly the current transcript plus END.
pub fn check_loss_masking() -> Check {
    let cc = CorpusConfig {
        n_common: 30,
        n_entities: 40,
        conversations: SplitCounts {
            train: 3,
            dev: 1,
            test: 1,
            pretrain: 0,
        },
        ..CorpusConfig::default()
    };
    let lex = crate::corpus::build_lexicon(&cc).map_err(|e| e.to_string())?;
    let conv = crate::corpus::sample_conversation(&lex, &cc, Split::Train, 0, &mut stream(&[3, 1]))
        .map_err(|e| e.to_string())?;
    let vocab = Vocab::new();
    let cfg = ModelConfig {
        dim: 32,
        enc_channels: 16,
        blocks: 2,
        heads: 2,
        max_len: 4096,
        k_latent: 2,
        c_max: 4,
        ..ModelConfig::default()
    };
    let params: ModelParams<f32> = new_model(&cfg, 9, &lex.silence);
    let t = conv.turns.len() - 1;
    let prompt =
        crate::promptkit::build_raw_context(&vocab, &conv.turns[..t], &conv.turns[t])
            .map_err(|e| e.to_string())?;
    let mut audio: Vec<&Array2<f32>> = conv.turns[..t].iter().map(|x| &x.frames).collect();
    audio.push(&conv.turns[t].frames);

    let loss_of = |p: &PromptSequence| -> f64 {
        let mut f = Forward::new(&params);
        let root = f.example_loss(p, &audio).expect("runs");
        f.tape.value(root)[[0, 0]] as f64
    };
    let base = loss_of(&prompt);
    let mut corrupted = prompt.clone();
    for i in 0..corrupted.targets.len() {
        if !corrupted.loss_mask[i] {
            corrupted.targets[i] = (corrupted.targets[i] + 13) % 44;
        }
    }
    let after = loss_of(&corrupted);
    if base.to_bits() != after.to_bits() {
        return Err(format!("loss changed: {base} vs {after}"));
    }
    let masked: Vec<u32> = prompt
        .loss_mask
        .iter()
        .zip(&prompt.targets)
        .filter(|(m, _)| **m)
        .map(|(_, t)| *t)
        .collect();
    let y = vocab
        .tokenize(&conv.turns[t].transcript())
        .map_err(|e| e.to_string())?;
    if masked.len() != y.len() + 1 || masked[..y.len()] != y[..] || *masked.last().unwrap() != Vocab::END
    {
        return Err("mask does not cover exactly transcript + END".into());
    }
    Ok(format!(
        "loss bit-identical under context-target corruption; {} supervised positions",
        masked.len()
    ))
}

fn micro_corpus_config(seed: u64) -> CorpusConfig {
    CorpusConfig {
        seed,
        n_common: 40,
        n_entities: 50,
        conversations: SplitCounts {
            train: 8,
            dev: 2,
            test: 2,
            pretrain: 2,
        },
        turns_per_conversation: (3, 5),
        words_per_turn: (4, 7),
        ..CorpusConfig::default()
    }
}

fn micro_model_config() -> ModelConfig {
    ModelConfig {
        dim: 32,
        enc_channels: 16,
        blocks: 2,
        heads: 2,
        max_len: 2048,
        k_latent: 4,
        c_max: 3,
        adapter_rank: 2,
        ..ModelConfig::default()
    }
}

/// One-epoch micro pipeline: single -> stage1 -> stage2 plus a test eval.
/// Returns (stage hashes, eval report bytes).
fn micro_pipeline(workdir: &Path, seed: u64) -> Result<(Vec<String>, String), String> {
    let corpus_dir = workdir.join(format!("corpus-{seed}"));
    generate_corpus(&micro_corpus_config(7), &corpus_dir, true).map_err(|e| e.to_string())?;
    let corpus = load_corpus(&corpus_dir).map_err(|e| e.to_string())?;
    let vocab = Vocab::new();
    let mc = micro_model_config();

    let mut tc = TrainConfig::for_regime(Regime::Single, seed);
    tc.epochs = 1;
    tc.warmup_steps = 2;
    tc.raw_context_max = 3;
    let trainer = Trainer {
        corpus: &corpus,
        vocab: &vocab,
        model_config: mc.clone(),
        config: tc.clone(),
        run_dir: workdir.join(format!("single-{seed}")),
    };
    let (_, single_best) = train_single_turn(&trainer).map_err(|e| e.to_string())?;

    let mut tc1 = tc.clone();
    tc1.regime = Regime::Stage1;
    tc1.learning_rate = 1e-3;
    let trainer1 = Trainer {
        corpus: &corpus,
        vocab: &vocab,
        model_config: mc.clone(),
        config: tc1,
        run_dir: workdir.join(format!("stage1-{seed}")),
    };
    let (_, stage1_best) = train_stage1(&trainer1, single_best.clone()).map_err(|e| e.to_string())?;

    let mut tc2 = tc.clone();
    tc2.regime = Regime::Stage2;
    let trainer2 = Trainer {
        corpus: &corpus,
        vocab: &vocab,
        model_config: mc.clone(),
        config: tc2,
        run_dir: workdir.join(format!("stage2-{seed}")),
    };
    let (_, stage2_best) = train_stage2(&trainer2, stage1_best.clone()).map_err(|e| e.to_string())?;

    let report = evaluate_model(
        &stage2_best,
        &vocab,
        corpus.split(Split::Test),
        "test",
        EvalSettings {
            context: ContextKind::Compressed,
            n_decode: 2,
            max_decode_tokens: 80,
        },
    )
    .map_err(|e| e.to_string())?;
    let hashes = vec![
        tensor_hash(&single_best, |_| true),
        tensor_hash(&stage1_best, |_| true),
        tensor_hash(&stage2_best, |_| true),
    ];
    Ok((hashes, serde_json::to_string(&report).unwrap()))
}

/// Freeze contracts on a real micro-run: stage 1 leaves non-compressor
/// tensors hash-identical, stage 2 leaves non-compressor non-adapter
/// tensors hash-identical. (Also enforced inside every training run.)
pub fn check_freeze_contracts(workdir: &Path) -> Check {
    let corpus_dir = workdir.join("freeze-corpus");
    generate_corpus(&micro_corpus_config(7), &corpus_dir, true).map_err(|e| e.to_string())?;
    let corpus = load_corpus(&corpus_dir).map_err(|e| e.to_string())?;
    let vocab = Vocab::new();
    let mc = micro_model_config();
    let mut tc = TrainConfig::for_regime(Regime::Single, 5);
    tc.epochs = 1;
    tc.warmup_steps = 2;
    let trainer = Trainer {
        corpus: &corpus,
        vocab: &vocab,
        model_config: mc.clone(),
        config: tc.clone(),
        run_dir: workdir.join("freeze-single"),
    };
    let (_, single_best) = train_single_turn(&trainer).map_err(|e| e.to_string())?;

    let mut tc1 = tc.clone();
    tc1.regime = Regime::Stage1;
    let trainer1 = Trainer {
        corpus: &corpus,
        vocab: &vocab,
        model_config: mc.clone(),
        config: tc1,
        run_dir: workdir.join("freeze-stage1"),
    };
    let (_, s1) = train_stage1(&trainer1, single_best.clone()).map_err(|e| e.to_string())?;
    let non_comp = |n: &str| !n.starts_with("comp.");
    if tensor_hash(&single_best, non_comp) != tensor_hash(&s1, non_comp) {
        return Err("stage1 modified non-compressor tensors".into());
    }

    let mut tc2 = tc.clone();
    tc2.regime = Regime::Stage2;
    let trainer2 = Trainer {
        corpus: &corpus,
        vocab: &vocab,
        model_config: mc,
        config: tc2,
        run_dir: workdir.join("freeze-stage2"),
    };
    let (_, s2) = train_stage2(&trainer2, s1.clone()).map_err(|e| e.to_string())?;
    let base_only = |n: &str| !n.starts_with("comp.") && !n.starts_with("adapt.");
    if tensor_hash(&s1, base_only) != tensor_hash(&s2, base_only) {
        return Err("stage2 modified frozen base tensors".into());
    }
    Ok("stage1 and stage2 freeze hashes match".into())
}

/// Alignment cost equals an independent DP distance on 10,000 random pairs,
/// and the canonical hand-checked values come out exactly.
pub fn check_metric_oracles() -> Check {
    let alphabet = ["alpha", "bravo", "carol", "delta", "echo"];
    let mut rng = stream(&[42, 4242]);
    for i in 0..10_000 {
        let len_r = rng.gen_range(0..=12usize);
        let len_h = rng.gen_range(0..=12usize);
        let r: Vec<String> = (0..len_r)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string())
            .collect();
        let h: Vec<String> = (0..len_h)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string())
            .collect();
        let a = word_align(&r, &h);
        let oracle = oracles::edit_distance_cost(&r, &h);
        if a.cost != oracle {
            return Err(format!("pair {i}: align cost {} vs oracle {oracle}", a.cost));
        }
    }
    let w = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let wer_val = wer(&[(w("the cat sat"), w("the cat sat down"))]).map_err(|e| e.to_string())?;
    if (wer_val - 1.0 / 3.0).abs() > 1e-12 {
        return Err(format!("wer {wer_val} != 1/3"));
    }
    let bias = crate::eval::bias_wer(&[Utterance {
        reference: w("call john smith now"),
        hypothesis: w("call jon smith now"),
        entity_spans: vec![(1, 3)],
    }])
    .map_err(|e| e.to_string())?;
    if (bias - 0.5).abs() > 1e-12 {
        return Err(format!("bias-wer {bias} != 0.5"));
    }
    let ra = rho_audio(&[160], 16).map_err(|e| e.to_string())?;
    if (ra - 0.1).abs() > 1e-15 {
        return Err(format!("rho_audio {ra} != 0.1"));
    }
    let rc = rho_context(&[100, 50], &[10, 5], 4).map_err(|e| e.to_string())?;
    if (rc - 23.0 / 165.0).abs() > 1e-15 {
        return Err(format!("rho_context {rc} != 23/165"));
    }
    Ok("10,000 alignment costs match the oracle; canonical values exact".into())
}

/// Schedule and curriculum match their closed forms at every step of an
/// 1,100-step run.
pub fn check_schedules() -> Check {
    let (total, base, warmup, c_max) = (1100usize, 4e-5, 50usize, 10usize);
    for step in 1..=total {
        let lr = lr_at(step, total, base, warmup);
        let expect = if step <= warmup {
            base * step as f64 / warmup as f64
        } else {
            base * (total - step) as f64 / (total - warmup) as f64
        };
        if (lr - expect).abs() > 1e-18 {
            return Err(format!("lr mismatch at step {step}: {lr} vs {expect}"));
        }
    }
    for step in 0..total {
        let got = curriculum_max_context(step, total, c_max);
        let want = c_max.min((c_max + 1) * step / total);
        if got != want {
            return Err(format!("curriculum mismatch at step {step}"));
        }
    }
    Ok("learning rate and curriculum match closed forms over 1100 steps".into())
}

/// Two identical-seed one-epoch micro pipelines produce identical
/// checkpoints and reports.
pub fn check_determinism(workdir: &Path) -> Check {
    let a = micro_pipeline(&workdir.join("det-a"), 31)?;
    let b = micro_pipeline(&workdir.join("det-b"), 31)?;
    if a.0 != b.0 {
        return Err("checkpoint hashes differ between identical runs".into());
    }
    if a.1 != b.1 {
        return Err("evaluation reports differ between identical runs".into());
    }
    Ok(format!("3 checkpoints and report identical; e.g. {}", &a.0[2][..16]))
}

/// Runs every blocking check; used by the reproduction pipeline.
pub fn blocking_property_suite(workdir: &Path) -> Vec<PropertyResult> {
    let run = |name: &'static str, r: Check| match r {
        Ok(detail) => PropertyResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => PropertyResult {
            name,
            passed: false,
            detail,
        },
    };
    vec![
        run("gradient_correctness", check_gradient_correctness()),
        run("fixed_k_bottleneck", check_fixed_k()),
        run("loss_masking", check_loss_masking()),
        run("freeze_contracts", check_freeze_contracts(workdir)),
        run("metric_oracles", check_metric_oracles()),
        run("schedule_curriculum", check_schedules()),
        run("determinism", check_determinism(workdir)),
    ]
}
