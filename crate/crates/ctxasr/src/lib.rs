//! A desk-scale lab for context-aware pseudo-speech recognition.
//!
//! The pipeline: a synthetic conversational corpus of noisy character-frame
//! "audio" ([`corpus`]), chat-style prompt assembly with raw or latent audio
//! slots ([`promptkit`]), a small decoder-only LM with an audio encoder,
//! a fixed-budget cross-attention context compressor and low-rank adapters
//! ([`model`]), four training regimes ([`training`]), WER / entity-restricted
//! WER and context-budget analytics ([`eval`]), and a CLI that orchestrates
//! full experiments ([`cli`]).

pub mod corpus;
pub mod eval;
pub mod model;
pub mod oracles;
pub mod promptkit;
pub mod properties;
pub mod rng;
pub mod training;

pub mod cli;
