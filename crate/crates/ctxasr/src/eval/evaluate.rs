//! Greedy-decode evaluation of a checkpoint over a corpus split.

use super::{metric_report, EvalError, MetricReport, Utterance};
use crate::corpus::Conversation;
use crate::model::{embed_prompt_infer, greedy_decode, ModelParams};
use crate::promptkit::{
    build_compressed_context, build_latent_single_turn, build_raw_context, build_single_turn,
    PromptSequence, Vocab,
};
use ndarray::Array2;
use rayon::prelude::*;

pub const DEFAULT_MAX_DECODE: usize = 160;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextKind {
    None,
    Raw,
    Compressed,
}

impl ContextKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextKind::None => "none",
            ContextKind::Raw => "raw",
            ContextKind::Compressed => "compressed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(ContextKind::None),
            "raw" => Some(ContextKind::Raw),
            "compressed" => Some(ContextKind::Compressed),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalSettings {
    pub context: ContextKind,
    pub n_decode: usize,
    pub max_decode_tokens: usize,
}

fn decode_prompt(
    params: &ModelParams<f32>,
    vocab: &Vocab,
    prompt: &PromptSequence,
    audio: &[&Array2<f32>],
    max_new: usize,
) -> Result<Vec<String>, EvalError> {
    let prefix = embed_prompt_infer(params, prompt.prefix(), audio)?;
    let ids = greedy_decode(params, &prefix, max_new)?;
    let text = vocab.decode_lossy(&ids);
    Ok(text.split_whitespace().map(String::from).collect())
}

/// Transcribes every turn of every conversation, conditioning on the most
/// recent `n_decode` prior turns (fewer when unavailable) in the requested
/// representation, and pools WER / Bias-WER.
pub fn evaluate_model(
    params: &ModelParams<f32>,
    vocab: &Vocab,
    conversations: &[Conversation],
    split_name: &str,
    settings: EvalSettings,
) -> Result<MetricReport, EvalError> {
    match settings.context {
        ContextKind::None if settings.n_decode > 0 => {
            return Err(EvalError::ContradictoryContext(settings.n_decode))
        }
        ContextKind::Compressed => {
            if !params.config.has_compressor {
                return Err(EvalError::Model(
                    crate::model::ModelError::MissingComponent("compressor"),
                ));
            }
            if settings.n_decode > params.config.c_max {
                return Err(EvalError::BeyondMaxContext {
                    got: settings.n_decode,
                    max: params.config.c_max,
                });
            }
        }
        _ => {}
    }

    let per_conv: Result<Vec<Vec<Utterance>>, EvalError> = conversations
        .par_iter()
        .map(|conv| {
            let mut utts = Vec::with_capacity(conv.turns.len());
            for t in 0..conv.turns.len() {
                let current = &conv.turns[t];
                let n = settings.n_decode.min(t);
                let prior = &conv.turns[t - n..t];
                let prompt = match settings.context {
                    ContextKind::None => build_single_turn(vocab, current)?,
                    ContextKind::Raw => build_raw_context(vocab, prior, current)?,
                    ContextKind::Compressed => {
                        build_compressed_context(vocab, prior, current, params.config.c_max)?
                    }
                };
                let mut audio: Vec<&Array2<f32>> = prior.iter().map(|p| &p.frames).collect();
                audio.push(&current.frames);
                let hypothesis =
                    decode_prompt(params, vocab, &prompt, &audio, settings.max_decode_tokens)?;
                utts.push(Utterance {
                    reference: current.words.clone(),
                    hypothesis,
                    entity_spans: current.entity_spans.clone(),
                });
            }
            Ok(utts)
        })
        .collect();

    let utterances: Vec<Utterance> = per_conv?.into_iter().flatten().collect();
    let label = format!("{} n={}", settings.context.as_str(), settings.n_decode);
    metric_report(
        &utterances,
        &label,
        split_name,
        settings.context.as_str(),
        settings.n_decode,
    )
}

/// Single-turn transcription from latent audio only: the compressed-audio
/// alignment task. Every turn is decoded from its own K latent tokens at
/// the given relative index.
pub fn evaluate_stage1_alignment(
    params: &ModelParams<f32>,
    vocab: &Vocab,
    conversations: &[Conversation],
    split_name: &str,
    rel_index: usize,
    max_decode_tokens: usize,
) -> Result<MetricReport, EvalError> {
    let per_conv: Result<Vec<Vec<Utterance>>, EvalError> = conversations
        .par_iter()
        .map(|conv| {
            let mut utts = Vec::with_capacity(conv.turns.len());
            for current in &conv.turns {
                let prompt =
                    build_latent_single_turn(vocab, current, rel_index, params.config.c_max)?;
                let audio = [&current.frames];
                let hypothesis =
                    decode_prompt(params, vocab, &prompt, &audio, max_decode_tokens)?;
                utts.push(Utterance {
                    reference: current.words.clone(),
                    hypothesis,
                    entity_spans: current.entity_spans.clone(),
                });
            }
            Ok(utts)
        })
        .collect();
    let utterances: Vec<Utterance> = per_conv?.into_iter().flatten().collect();
    let label = format!("latent-single rel={rel_index} k={}", params.config.k_latent);
    metric_report(&utterances, &label, split_name, "latent", 0)
}
