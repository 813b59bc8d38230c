//! Fixed character-level vocabulary with chat specials and an audio sentinel.

use super::PromptError;

const SPECIALS: [&str; 6] = ["PAD", "BOS", "USER", "ASSISTANT", "END", "NEWLINE"];

/// Token table: 6 specials, one audio-slot sentinel, then `a-z`, space, `0-9`.
/// Ids are dense and stable; construction is the single source of truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const USER: u32 = 2;
    pub const ASSISTANT: u32 = 3;
    pub const END: u32 = 4;
    pub const NEWLINE: u32 = 5;
    /// Reserved non-text sentinel marking audio positions; never embedded
    /// through the token table.
    pub const AUDIO: u32 = 6;

    const CHAR_BASE: u32 = 7;

    pub fn new() -> Self {
        let mut chars: Vec<char> = ('a'..='z').collect();
        chars.push(' ');
        chars.extend('0'..='9');
        Vocab { chars }
    }

    pub fn size(&self) -> usize {
        Self::CHAR_BASE as usize + self.chars.len()
    }

    pub fn char_to_id(&self, c: char) -> Result<u32, PromptError> {
        if c == '\n' {
            return Ok(Self::NEWLINE);
        }
        self.chars
            .iter()
            .position(|&x| x == c)
            .map(|i| Self::CHAR_BASE + i as u32)
            .ok_or(PromptError::OutOfVocab(c))
    }

    pub fn id_to_char(&self, id: u32) -> Option<char> {
        if id == Self::NEWLINE {
            return Some('\n');
        }
        if id < Self::CHAR_BASE {
            return None;
        }
        self.chars.get((id - Self::CHAR_BASE) as usize).copied()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, PromptError> {
        text.chars().map(|c| self.char_to_id(c)).collect()
    }

    /// Strict inverse of [`Vocab::tokenize`]; errors on any id that is not a
    /// text token.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String, PromptError> {
        ids.iter()
            .map(|&id| self.id_to_char(id).ok_or(PromptError::NotText(id)))
            .collect()
    }

    /// Decoder-output rendering: text tokens map to characters, everything
    /// else is dropped. Used when scoring model output, where specials can
    /// legitimately appear.
    pub fn decode_lossy(&self, ids: &[u32]) -> String {
        ids.iter().filter_map(|&id| self.id_to_char(id)).collect()
    }

    /// One line per token: `<id>\t<kind>\t<value>`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (i, name) in SPECIALS.iter().enumerate() {
            out.push_str(&format!("{i}\tspecial\t{name}\n"));
        }
        out.push_str(&format!("{}\tsentinel\tAUDIO\n", Self::AUDIO));
        for (i, c) in self.chars.iter().enumerate() {
            out.push_str(&format!(
                "{}\tchar\tU+{:04X}\n",
                Self::CHAR_BASE + i as u32,
                *c as u32
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Vocab, PromptError> {
        let mut chars = Vec::new();
        let mut next_id = 0u32;
        for (ln, line) in text.lines().enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(PromptError::VocabParse(format!("line {}: expected 3 fields", ln + 1)));
            }
            let id: u32 = parts[0]
                .parse()
                .map_err(|_| PromptError::VocabParse(format!("line {}: bad id", ln + 1)))?;
            if id != next_id {
                return Err(PromptError::VocabParse(format!(
                    "line {}: ids must be dense, expected {next_id}",
                    ln + 1
                )));
            }
            next_id += 1;
            match parts[1] {
                "special" => {
                    let want = SPECIALS.get(id as usize).copied();
                    if want != Some(parts[2]) {
                        return Err(PromptError::VocabParse(format!(
                            "line {}: unexpected special {:?}",
                            ln + 1,
                            parts[2]
                        )));
                    }
                }
                "sentinel" => {
                    if id != Self::AUDIO {
                        return Err(PromptError::VocabParse(format!(
                            "line {}: sentinel at wrong id",
                            ln + 1
                        )));
                    }
                }
                "char" => {
                    let hex = parts[2].strip_prefix("U+").ok_or_else(|| {
                        PromptError::VocabParse(format!("line {}: bad char entry", ln + 1))
                    })?;
                    let cp = u32::from_str_radix(hex, 16).map_err(|_| {
                        PromptError::VocabParse(format!("line {}: bad codepoint", ln + 1))
                    })?;
                    let c = char::from_u32(cp).ok_or_else(|| {
                        PromptError::VocabParse(format!("line {}: invalid codepoint", ln + 1))
                    })?;
                    chars.push(c);
                }
                other => {
                    return Err(PromptError::VocabParse(format!(
                        "line {}: unknown kind {other:?}",
                        ln + 1
                    )))
                }
            }
        }
        let v = Vocab { chars };
        if v.size() != next_id as usize {
            return Err(PromptError::VocabParse("missing entries".into()));
        }
        Ok(v)
    }
}
