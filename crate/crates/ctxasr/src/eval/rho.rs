//! Context-budget retention ratios and their per-context-size curves.

use super::EvalError;
use crate::corpus::Conversation;
use crate::promptkit::Vocab;
use serde::{Deserialize, Serialize};

/// Retained fraction of prior-turn audio: n*K over the raw audio token sum.
pub fn rho_audio(audio_counts: &[usize], k: usize) -> Result<f64, EvalError> {
    if audio_counts.is_empty() {
        return Err(EvalError::EmptyContext);
    }
    if audio_counts.iter().any(|&c| c == 0) {
        return Err(EvalError::ZeroAudioCount);
    }
    let total: usize = audio_counts.iter().sum();
    Ok((audio_counts.len() * k) as f64 / total as f64)
}

/// Retained fraction of the whole context prompt: transcripts stay at full
/// size, only audio shrinks to K per turn.
pub fn rho_context(
    audio_counts: &[usize],
    text_counts: &[usize],
    k: usize,
) -> Result<f64, EvalError> {
    if audio_counts.is_empty() {
        return Err(EvalError::EmptyContext);
    }
    if audio_counts.iter().any(|&c| c == 0) {
        return Err(EvalError::ZeroAudioCount);
    }
    assert_eq!(audio_counts.len(), text_counts.len(), "count lists align");
    let num: usize = text_counts.iter().map(|&y| k + y).sum();
    let den: usize = audio_counts
        .iter()
        .zip(text_counts)
        .map(|(&x, &y)| x + y)
        .sum();
    Ok(num as f64 / den as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoRow {
    pub n: usize,
    pub examples: usize,
    pub audio_median: f64,
    pub audio_q1: f64,
    pub audio_q3: f64,
    pub context_median: f64,
    pub context_q1: f64,
    pub context_q3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub k: usize,
    pub rows: Vec<RhoRow>,
    /// Context sizes with no eligible conversation, omitted from `rows`.
    pub skipped: Vec<usize>,
}

/// Linear-interpolation quantile over a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Per context size n in `n_range`: both rho values for every conversation
/// whose final turn has at least n prior turns (most recent n used), then
/// median and quartiles across those examples.
pub fn compression_curves(
    conversations: &[Conversation],
    vocab: &Vocab,
    k: usize,
    n_range: std::ops::RangeInclusive<usize>,
) -> Result<CompressionStats, EvalError> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for n in n_range {
        if n == 0 {
            skipped.push(0);
            continue;
        }
        let mut audio_vals = Vec::new();
        let mut context_vals = Vec::new();
        for conv in conversations {
            if conv.turns.len() < n + 1 {
                continue;
            }
            let last = conv.turns.len() - 1;
            let prior = &conv.turns[last - n..last];
            let audio: Vec<usize> = prior
                .iter()
                .map(|t| t.frames.nrows().div_ceil(4))
                .collect();
            let text: Vec<usize> = prior
                .iter()
                .map(|t| vocab.tokenize(&t.transcript()).map(|v| v.len()).unwrap_or(0))
                .collect();
            audio_vals.push(rho_audio(&audio, k)?);
            context_vals.push(rho_context(&audio, &text, k)?);
        }
        if audio_vals.is_empty() {
            skipped.push(n);
            continue;
        }
        audio_vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        context_vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rows.push(RhoRow {
            n,
            examples: audio_vals.len(),
            audio_median: quantile(&audio_vals, 0.5),
            audio_q1: quantile(&audio_vals, 0.25),
            audio_q3: quantile(&audio_vals, 0.75),
            context_median: quantile(&context_vals, 0.5),
            context_q1: quantile(&context_vals, 0.25),
            context_q3: quantile(&context_vals, 0.75),
        });
    }
    Ok(CompressionStats { k, rows, skipped })
}
