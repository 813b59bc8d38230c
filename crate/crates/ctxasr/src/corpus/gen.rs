//! Lexicon construction, frame synthesis, and conversation sampling.

use super::{Conversation, CorpusConfig, CorpusError, Lexicon, Split, Turn};
use crate::rng::{stream, tag};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeSet;

// Common-word lengths skew short, entity words run long; this keeps
// per-turn frame counts right-skewed the way utterance durations are.
const COMMON_LEN_WEIGHTS: [(usize, u32); 7] =
    [(3, 4), (4, 5), (5, 4), (6, 3), (7, 2), (8, 1), (9, 1)];
const ENTITY_LEN_RANGE: (usize, usize) = (6, 12);

/// Words per turn draw from a truncated geometric over the configured
/// range: most turns run short with a long tail, like real utterance
/// durations. The skew is what makes per-context budget ratios shrink as
/// turns accumulate.
const WORDS_PER_TURN_P: f64 = 0.35;

/// How strongly a turn prefers to reuse an entity mentioned in the last
/// few entity-bearing turns over a fresh pool draw.
const P_RECENT_REUSE: f64 = 0.65;
const RECENT_WINDOW: usize = 3;
/// Forced final-turn recurrences are injected into one of this many most
/// recent prior turns.
const INJECT_WINDOW: usize = 4;

pub fn build_lexicon(config: &CorpusConfig) -> Result<Lexicon, CorpusError> {
    config.validate()?;
    let mut rng = stream(&[config.seed, tag::LEXICON]);

    // 27 classes (a-z plus silence) drawn from a signed random orthonormal
    // frame: min pairwise distance sqrt(2), so frames stay classifiable
    // under per-coordinate noise well beyond the default sigma
    let needed = 27usize;
    let frame = signed_orthonormal_frame(config.feature_dim, needed, &mut rng)?;
    let mut char_basis = std::collections::BTreeMap::new();
    for (i, c) in ('a'..='z').enumerate() {
        char_basis.insert(c, frame[i].clone());
    }
    let silence = frame[26].clone();

    let mut taken: BTreeSet<String> = BTreeSet::new();
    let common_words = sample_words(config.n_common, &mut taken, &mut rng, |r| {
        weighted_len(r, &COMMON_LEN_WEIGHTS)
    })?;
    let entity_words = sample_words(config.n_entities, &mut taken, &mut rng, |r| {
        r.gen_range(ENTITY_LEN_RANGE.0..=ENTITY_LEN_RANGE.1)
    })?;

    let lexicon = Lexicon {
        common_words,
        entity_words,
        char_basis,
        silence,
        feature_dim: config.feature_dim,
    };
    lexicon.validate()?;
    Ok(lexicon)
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    loop {
        let v: Vec<f32> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Up to 2*dim unit vectors of the form +/-q_i over a random orthonormal
/// basis, built by Gram-Schmidt on Gaussian draws.
fn signed_orthonormal_frame(
    dim: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f32>>, CorpusError> {
    if count > 2 * dim {
        return Err(CorpusError::InvalidConfig(format!(
            "feature_dim {dim} supports at most {} well-separated classes, need {count}",
            2 * dim
        )));
    }
    let mut basis: Vec<Vec<f32>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v = unit_vector(dim, rng);
        for b in &basis {
            let dot: f32 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 1e-3 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Ok((0..count)
        .map(|i| {
            let sign = if i < dim { 1.0f32 } else { -1.0 };
            basis[i % dim].iter().map(|x| x * sign).collect()
        })
        .collect())
}

fn weighted_len(rng: &mut ChaCha8Rng, weights: &[(usize, u32)]) -> usize {
    let total: u32 = weights.iter().map(|(_, w)| w).sum();
    let mut dart = rng.gen_range(0..total);
    for &(len, w) in weights {
        if dart < w {
            return len;
        }
        dart -= w;
    }
    weights.last().unwrap().0
}

fn sample_words(
    count: usize,
    taken: &mut BTreeSet<String>,
    rng: &mut ChaCha8Rng,
    mut len_of: impl FnMut(&mut ChaCha8Rng) -> usize,
) -> Result<Vec<String>, CorpusError> {
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > count * 1000 {
            return Err(CorpusError::InvalidConfig(
                "could not sample enough distinct words".into(),
            ));
        }
        let len = len_of(rng);
        let word: String = (0..len)
            .map(|_| (b'a' + rng.gen_range(0..26u8)) as char)
            .collect();
        if taken.insert(word.clone()) {
            out.push(word);
        }
    }
    Ok(out)
}

/// Renders a word list into frames: per character a run of 2-4 noisy copies
/// of its basis vector, one silence frame between words, nothing at the
/// edges. Row count is the sum of character durations plus silences.
pub fn synthesize_frames(
    words: &[String],
    lexicon: &Lexicon,
    frames_per_char: (usize, usize),
    noise_std: f32,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f32>, CorpusError> {
    assert!(!words.is_empty(), "synthesize_frames needs at least one word");
    let dim = lexicon.feature_dim;
    let noise = if noise_std > 0.0 {
        Some(Normal::new(0.0f32, noise_std).expect("valid std"))
    } else {
        None
    };
    let mut rows: Vec<f32> = Vec::new();
    let mut count = 0usize;
    let mut emit = |basis: &[f32], rng: &mut ChaCha8Rng| {
        for j in 0..dim {
            let n = noise.map_or(0.0, |d| d.sample(rng));
            rows.push(basis[j] + n);
        }
        count += 1;
    };
    for (wi, word) in words.iter().enumerate() {
        if wi > 0 {
            emit(&lexicon.silence, rng);
        }
        for c in word.chars() {
            let basis = lexicon
                .char_basis
                .get(&c)
                .ok_or(CorpusError::UnknownChar(c))?;
            let dur = rng.gen_range(frames_per_char.0..=frames_per_char.1);
            for _ in 0..dur {
                emit(basis, rng);
            }
        }
    }
    Ok(Array2::from_shape_vec((count, dim), rows).expect("frame shape"))
}

/// Plan of one turn before frame synthesis.
struct TurnPlan {
    words: Vec<String>,
    entity_positions: Vec<usize>,
}

/// Samples one conversation. Entities come from a private 3-6 word pool;
/// non-final turns prefer recently mentioned entities, and each final-turn
/// entity recurs in an earlier turn with probability `p_recur` (a fresh,
/// previously unused entity otherwise).
pub fn sample_conversation(
    lexicon: &Lexicon,
    config: &CorpusConfig,
    split: Split,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Conversation, CorpusError> {
    config.validate()?;
    let n_turns = rng.gen_range(config.turns_per_conversation.0..=config.turns_per_conversation.1);
    let pool_size = 3 + rng.gen_range(0..=3usize);
    let mut pool: Vec<String> = Vec::with_capacity(pool_size);
    while pool.len() < pool_size.min(lexicon.entity_words.len()) {
        let w = lexicon.entity_words.choose(rng).unwrap().clone();
        if !pool.contains(&w) {
            pool.push(w);
        }
    }

    let mut plans: Vec<TurnPlan> = Vec::with_capacity(n_turns);
    // (turn, word) mention log in order, for recency-weighted reuse
    let mut mentions: Vec<(usize, String)> = Vec::new();
    let mut entity_turns: Vec<usize> = Vec::new();
    // final-turn entities that must be injected into an earlier turn
    let mut pending_injections: Vec<String> = Vec::new();

    for t in 0..n_turns {
        let n_words = sample_turn_words(config.words_per_turn, rng);
        let is_final = t + 1 == n_turns;
        let mut chosen: Vec<String> = Vec::new();
        if rng.gen_bool(config.p_entity_turn) {
            let n_ent = rng.gen_range(1..=2usize).min(n_words);
            for _ in 0..n_ent {
                let word = if is_final {
                    pick_final_entity(
                        &pool,
                        &mentions,
                        lexicon,
                        config.p_recur,
                        rng,
                        &mut pending_injections,
                    )
                } else {
                    pick_context_entity(&pool, &mentions, &entity_turns, rng)
                };
                if !chosen.contains(&word) {
                    chosen.push(word);
                }
            }
        }
        if !chosen.is_empty() {
            entity_turns.push(t);
        }
        for w in &chosen {
            mentions.push((t, w.clone()));
        }

        let mut positions: Vec<usize> = (0..n_words).collect();
        positions.shuffle(rng);
        let mut entity_positions: Vec<usize> = positions[..chosen.len()].to_vec();
        entity_positions.sort_unstable();

        let mut words: Vec<String> = (0..n_words)
            .map(|_| lexicon.common_words.choose(rng).unwrap().clone())
            .collect();
        for (slot, word) in entity_positions.iter().zip(chosen.iter()) {
            words[*slot] = word.clone();
        }
        plans.push(TurnPlan {
            words,
            entity_positions,
        });
    }

    // Forced recurrences: overwrite a common word in a recent prior turn.
    for word in pending_injections {
        let last = n_turns - 1;
        let lo = last.saturating_sub(INJECT_WINDOW);
        let candidates: Vec<usize> = (lo..last).collect();
        let t = *candidates.choose(rng).expect("n_turns >= 2 when injecting");
        let plan = &mut plans[t];
        let free: Vec<usize> = (0..plan.words.len())
            .filter(|p| !plan.entity_positions.contains(p))
            .collect();
        if let Some(&pos) = free.choose(rng) {
            plan.words[pos] = word;
            plan.entity_positions.push(pos);
            plan.entity_positions.sort_unstable();
        }
    }

    let mut turns = Vec::with_capacity(n_turns);
    for (t, plan) in plans.into_iter().enumerate() {
        let frames = synthesize_frames(
            &plan.words,
            lexicon,
            config.frames_per_char,
            config.noise_std,
            rng,
        )?;
        let entity_spans = plan.entity_positions.iter().map(|&p| (p, p + 1)).collect();
        turns.push(Turn {
            words: plan.words,
            entity_spans,
            frames,
            turn_index: t,
        });
    }

    Ok(Conversation {
        id: format!("{split}-{index:05}"),
        turns,
        split,
    })
}

fn sample_turn_words(range: (usize, usize), rng: &mut ChaCha8Rng) -> usize {
    let mut n = range.0;
    while n < range.1 && rng.gen_bool(1.0 - WORDS_PER_TURN_P) {
        n += 1;
    }
    n
}

fn pick_context_entity(
    pool: &[String],
    mentions: &[(usize, String)],
    entity_turns: &[usize],
    rng: &mut ChaCha8Rng,
) -> String {
    if !mentions.is_empty() && rng.gen_bool(P_RECENT_REUSE) {
        let recent_turns: Vec<usize> = entity_turns
            .iter()
            .rev()
            .take(RECENT_WINDOW)
            .copied()
            .collect();
        let recent: Vec<&String> = mentions
            .iter()
            .filter(|(t, _)| recent_turns.contains(t))
            .map(|(_, w)| w)
            .collect();
        if let Some(w) = recent.choose(rng) {
            return (*w).clone();
        }
    }
    pool.choose(rng).unwrap().clone()
}

fn pick_final_entity(
    pool: &[String],
    mentions: &[(usize, String)],
    lexicon: &Lexicon,
    p_recur: f64,
    rng: &mut ChaCha8Rng,
    pending_injections: &mut Vec<String>,
) -> String {
    let used: Vec<&String> = {
        let mut seen = BTreeSet::new();
        mentions
            .iter()
            .map(|(_, w)| w)
            .filter(|w| seen.insert(w.as_str().to_owned()))
            .collect()
    };
    if rng.gen_bool(p_recur) {
        if let Some(w) = used.choose(rng) {
            return (*w).clone();
        }
        // nothing mentioned yet: schedule an injection into a prior turn
        let w = pool.choose(rng).unwrap().clone();
        pending_injections.push(w.clone());
        return w;
    }
    // fresh entity: never mentioned before in this conversation
    let fresh_pool: Vec<&String> = pool.iter().filter(|w| !used.contains(w)).collect();
    if let Some(w) = fresh_pool.choose(rng) {
        return (*w).clone();
    }
    let fresh_global: Vec<&String> = lexicon
        .entity_words
        .iter()
        .filter(|w| !used.contains(w))
        .collect();
    match fresh_global.choose(rng) {
        Some(w) => (*w).clone(),
        None => pool.choose(rng).unwrap().clone(),
    }
}
