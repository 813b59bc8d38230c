//! Character tokenization and chat-template prompt assembly.
//!
//! Three prompt forms share one turn template: single-turn, multi-turn with
//! raw prior audio, and multi-turn with each prior turn's audio replaced by
//! a fixed number of latent tokens. Prior-turn transcripts always stay
//! explicit and are never part of the training loss.

mod prompt;
mod vocab;

pub use prompt::{
    build_compressed_context, build_latent_single_turn, build_raw_context, build_single_turn,
    AudioSlot, Element, PromptSequence, SlotKind, INSTRUCTION,
};
pub use vocab::Vocab;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("character {0:?} is not in the vocabulary")]
    OutOfVocab(char),
    #[error("token id {0} is not a text token")]
    NotText(u32),
    #[error("turn has an empty transcript")]
    EmptyTranscript,
    #[error("prompt uses {got} prior turns but at most {max} are supported; truncate to the most recent {max}")]
    TooManyContextTurns { got: usize, max: usize },
    #[error("relative index {got} outside 1..={max}")]
    RelIndexOutOfRange { got: usize, max: usize },
    #[error("malformed vocab file: {0}")]
    VocabParse(String),
}
