//! Synthetic conversational pseudo-speech corpus.
//!
//! "Audio" is a T x F matrix of acoustic frames: each transcript character
//! contributes a short run of noisy copies of its basis vector, with one
//! silence frame between words. Conversations share a private pool of rare
//! entity words that recur across turns, so prior turns genuinely help
//! transcribe the current one.

mod gen;
mod io;

pub use gen::{build_lexicon, sample_conversation, synthesize_frames};
pub use io::{generate_corpus, load_corpus, serialize_split, Corpus, CorpusManifest, SplitStats};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("character {0:?} is not in the lexicon basis")]
    UnknownChar(char),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("conversation {id}: {message}")]
    Validation { id: String, message: String },
    #[error("refusing to overwrite existing corpus at {0} (pass force to replace)")]
    AlreadyExists(String),
}

/// Word inventory plus the acoustic basis used to render frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub common_words: Vec<String>,
    pub entity_words: Vec<String>,
    pub char_basis: BTreeMap<char, Vec<f32>>,
    pub silence: Vec<f32>,
    pub feature_dim: usize,
}

impl Lexicon {
    pub fn is_entity(&self, word: &str) -> bool {
        self.entity_words.iter().any(|w| w == word)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| CorpusError::InvalidConfig(m);
        for list in [&self.common_words, &self.entity_words] {
            for w in list {
                if w.is_empty() {
                    return Err(err("empty word in lexicon".into()));
                }
                for c in w.chars() {
                    if !self.char_basis.contains_key(&c) {
                        return Err(CorpusError::UnknownChar(c));
                    }
                }
            }
        }
        for w in &self.common_words {
            if self.is_entity(w) {
                return Err(err(format!("word {w:?} is both common and entity")));
            }
        }
        for v in self.char_basis.values().chain(std::iter::once(&self.silence)) {
            if v.len() != self.feature_dim {
                return Err(err("basis vector width mismatch".into()));
            }
            let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(err(format!("basis vector norm {norm} not unit")));
            }
        }
        Ok(())
    }
}

/// One utterance: words, entity annotations, and synthesized frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Turn {
    pub words: Vec<String>,
    /// Half-open word-index intervals, sorted and non-overlapping.
    pub entity_spans: Vec<(usize, usize)>,
    pub frames: Array2<f32>,
    pub turn_index: usize,
}

impl Turn {
    pub fn transcript(&self) -> String {
        self.words.join(" ")
    }

    pub fn entity_word_count(&self) -> usize {
        self.entity_spans.iter().map(|(s, e)| e - s).sum()
    }

    /// Words covered by entity spans.
    pub fn entity_words(&self) -> impl Iterator<Item = &str> {
        self.entity_spans
            .iter()
            .flat_map(move |&(s, e)| self.words[s..e].iter().map(|w| w.as_str()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    Pretrain,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Dev, Split::Test, Split::Pretrain];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Pretrain => "pretrain",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.as_str())
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|sp| sp.as_str() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
    pub split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub pretrain: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
            Split::Pretrain => self.pretrain,
        }
    }
}

/// Generation knobs. All randomness is a pure function of `seed` plus the
/// conversation's (split, index), so regeneration is byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_common: usize,
    pub n_entities: usize,
    pub conversations: SplitCounts,
    pub turns_per_conversation: (usize, usize),
    pub words_per_turn: (usize, usize),
    pub p_entity_turn: f64,
    pub p_recur: f64,
    pub frames_per_char: (usize, usize),
    pub noise_std: f32,
    pub feature_dim: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 7,
            n_common: 200,
            n_entities: 400,
            conversations: SplitCounts {
                train: 600,
                dev: 100,
                test: 200,
                pretrain: 1800,
            },
            turns_per_conversation: (3, 12),
            words_per_turn: (4, 12),
            p_entity_turn: 0.5,
            p_recur: 0.8,
            frames_per_char: (2, 4),
            noise_std: 0.28,
            feature_dim: 16,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: &str| Err(CorpusError::InvalidConfig(m.into()));
        if self.n_common == 0 || self.n_entities == 0 {
            return err("n_common and n_entities must be at least 1");
        }
        if self.feature_dim < 2 {
            return err("feature_dim must be at least 2");
        }
        for (name, (lo, hi)) in [
            ("turns_per_conversation", self.turns_per_conversation),
            ("words_per_turn", self.words_per_turn),
            ("frames_per_char", self.frames_per_char),
        ] {
            if lo == 0 || lo > hi {
                return Err(CorpusError::InvalidConfig(format!("empty range {name}")));
            }
        }
        for (name, p) in [("p_entity_turn", self.p_entity_turn), ("p_recur", self.p_recur)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::InvalidConfig(format!("{name} not in [0,1]")));
            }
        }
        if !(self.noise_std >= 0.0) {
            return err("noise_std must be nonnegative");
        }
        Ok(())
    }
}

/// Checks every structural invariant of a conversation against a lexicon.
pub fn validate_conversation(conv: &Conversation, lexicon: &Lexicon) -> Result<(), CorpusError> {
    let fail = |m: String| {
        Err(CorpusError::Validation {
            id: conv.id.clone(),
            message: m,
        })
    };
    if conv.turns.is_empty() {
        return fail("conversation has no turns".into());
    }
    for (i, turn) in conv.turns.iter().enumerate() {
        if turn.turn_index != i {
            return fail(format!("turn_index {} at position {i}", turn.turn_index));
        }
        if turn.words.is_empty() {
            return fail(format!("turn {i} has no words"));
        }
        if turn.frames.nrows() < 1 {
            return fail(format!("turn {i} has no frames"));
        }
        if turn.frames.ncols() != lexicon.feature_dim {
            return fail(format!(
                "turn {i} frame width {} != feature_dim {}",
                turn.frames.ncols(),
                lexicon.feature_dim
            ));
        }
        let mut prev_end = 0usize;
        for (k, &(s, e)) in turn.entity_spans.iter().enumerate() {
            if s >= e || e > turn.words.len() {
                return fail(format!("turn {i} span {k} [{s},{e}) out of bounds"));
            }
            if k > 0 && s < prev_end {
                return fail(format!("turn {i} span {k} overlaps or is unsorted"));
            }
            prev_end = e;
            for w in &turn.words[s..e] {
                if !lexicon.is_entity(w) {
                    return fail(format!("turn {i} span word {w:?} is not an entity"));
                }
            }
        }
    }
    Ok(())
}
