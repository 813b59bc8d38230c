//! Prompt assembly for the three context forms.

use super::{PromptError, Vocab};
use crate::corpus::Turn;

/// Fixed transcription instruction, repeated verbatim in every turn block.
pub const INSTRUCTION: &str = "transcribe the audio clip into text";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    Raw,
    Latent,
}

/// Placeholder for audio embeddings. `rel_index` counts distance from the
/// current turn: 0 for the current turn itself, 1 for the most recent prior
/// turn, and so on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AudioSlot {
    pub slot_id: usize,
    pub kind: SlotKind,
    pub rel_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Element {
    Text(u32),
    Slot(AudioSlot),
}

/// A fully assembled teacher-forced sequence. `elements[..gen_start]` is the
/// inference prefix (everything up to and including the final ASSISTANT
/// marker); the remaining elements are the current-turn transcript and its
/// terminating END. `targets[i]`/`loss_mask[i]` describe the prediction made
/// at position i; only current-turn transcript positions are unmasked.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSequence {
    pub elements: Vec<Element>,
    pub targets: Vec<u32>,
    pub loss_mask: Vec<bool>,
    pub gen_start: usize,
}

impl PromptSequence {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn prefix(&self) -> &[Element] {
        &self.elements[..self.gen_start]
    }

    pub fn audio_slots(&self) -> impl Iterator<Item = &AudioSlot> {
        self.elements.iter().filter_map(|e| match e {
            Element::Slot(s) => Some(s),
            Element::Text(_) => None,
        })
    }
}

struct Builder<'v> {
    vocab: &'v Vocab,
    elements: Vec<Element>,
    next_slot: usize,
}

impl<'v> Builder<'v> {
    fn new(vocab: &'v Vocab) -> Self {
        let mut b = Builder {
            vocab,
            elements: Vec::new(),
            next_slot: 0,
        };
        b.text(Vocab::BOS);
        b
    }

    fn text(&mut self, id: u32) {
        self.elements.push(Element::Text(id));
    }

    fn slot(&mut self, kind: SlotKind, rel_index: usize) {
        self.elements.push(Element::Slot(AudioSlot {
            slot_id: self.next_slot,
            kind,
            rel_index,
        }));
        self.next_slot += 1;
    }

    fn tokens(&mut self, text: &str) -> Result<(), PromptError> {
        for id in self.vocab.tokenize(text)? {
            self.text(id);
        }
        Ok(())
    }

    /// USER <audio> \n P END — the request half of a turn block.
    fn request(&mut self, kind: SlotKind, rel_index: usize) -> Result<(), PromptError> {
        self.text(Vocab::USER);
        self.slot(kind, rel_index);
        self.text(Vocab::NEWLINE);
        self.tokens(INSTRUCTION)?;
        self.text(Vocab::END);
        Ok(())
    }

    /// A completed context turn: request, ASSISTANT, transcript, END.
    fn context_turn(
        &mut self,
        turn: &Turn,
        kind: SlotKind,
        rel_index: usize,
    ) -> Result<(), PromptError> {
        let transcript = turn.transcript();
        if transcript.is_empty() {
            return Err(PromptError::EmptyTranscript);
        }
        self.request(kind, rel_index)?;
        self.text(Vocab::ASSISTANT);
        self.tokens(&transcript)?;
        self.text(Vocab::END);
        Ok(())
    }

    /// Closes with the current-turn block and teacher-forced targets.
    fn finish(mut self, current: &Turn, current_kind: SlotKind, current_rel: usize)
        -> Result<PromptSequence, PromptError> {
        let transcript = current.transcript();
        if transcript.is_empty() {
            return Err(PromptError::EmptyTranscript);
        }
        self.request(current_kind, current_rel)?;
        self.text(Vocab::ASSISTANT);
        let gen_start = self.elements.len();
        self.tokens(&transcript)?;
        self.text(Vocab::END);

        let n = self.elements.len();
        let mut targets = vec![Vocab::PAD; n];
        let mut loss_mask = vec![false; n];
        // positions gen_start-1 ..= gen_start-1+|Y| predict Y then END
        for i in (gen_start - 1)..(n - 1) {
            let Element::Text(id) = self.elements[i + 1] else {
                unreachable!("transcript region is text");
            };
            targets[i] = id;
            loss_mask[i] = true;
        }
        Ok(PromptSequence {
            elements: self.elements,
            targets,
            loss_mask,
            gen_start,
        })
    }
}

/// Current turn only: BOS USER <audio> \n P END ASSISTANT Y END.
pub fn build_single_turn(vocab: &Vocab, current: &Turn) -> Result<PromptSequence, PromptError> {
    Builder::new(vocab).finish(current, SlotKind::Raw, 0)
}

/// Prior turns as completed blocks with raw audio, oldest first, then the
/// current turn. Prior transcripts are inputs only; the loss covers the
/// current transcript exclusively.
pub fn build_raw_context(
    vocab: &Vocab,
    prior: &[Turn],
    current: &Turn,
) -> Result<PromptSequence, PromptError> {
    let mut b = Builder::new(vocab);
    let n = prior.len();
    for (j, turn) in prior.iter().enumerate() {
        b.context_turn(turn, SlotKind::Raw, n - j)?;
    }
    b.finish(current, SlotKind::Raw, 0)
}

/// Like [`build_raw_context`] but each prior turn's audio slot is latent;
/// the current turn stays raw. At most `c_max` prior turns are supported.
pub fn build_compressed_context(
    vocab: &Vocab,
    prior: &[Turn],
    current: &Turn,
    c_max: usize,
) -> Result<PromptSequence, PromptError> {
    if prior.len() > c_max {
        return Err(PromptError::TooManyContextTurns {
            got: prior.len(),
            max: c_max,
        });
    }
    let mut b = Builder::new(vocab);
    let n = prior.len();
    for (j, turn) in prior.iter().enumerate() {
        b.context_turn(turn, SlotKind::Latent, n - j)?;
    }
    b.finish(current, SlotKind::Raw, 0)
}

/// Stage-1 alignment prompt: the single-turn form with the current turn's
/// audio passed through the compressor at `rel_index`. Not one of the three
/// standard forms; used only to align latent tokens with the language model.
pub fn build_latent_single_turn(
    vocab: &Vocab,
    current: &Turn,
    rel_index: usize,
    c_max: usize,
) -> Result<PromptSequence, PromptError> {
    if rel_index == 0 || rel_index > c_max {
        return Err(PromptError::RelIndexOutOfRange {
            got: rel_index,
            max: c_max,
        });
    }
    Builder::new(vocab).finish(current, SlotKind::Latent, rel_index)
}
