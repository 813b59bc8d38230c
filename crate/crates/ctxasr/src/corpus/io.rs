//! Corpus serialization: one JSONL file per split plus a manifest.

use super::{
    build_lexicon, sample_conversation, validate_conversation, Conversation, CorpusConfig,
    CorpusError, Lexicon, Split, Turn,
};
use crate::rng::{stream, tag};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    words: Vec<String>,
    entity_spans: Vec<[usize; 2]>,
    frames: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct ConversationRecord {
    id: String,
    split: String,
    turns: Vec<TurnRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub conversations: usize,
    pub utterances: usize,
    pub words: usize,
    pub entity_words: usize,
    pub entity_word_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config: CorpusConfig,
    pub lexicon: Lexicon,
    pub stats: BTreeMap<String, SplitStats>,
}

/// A fully loaded corpus. Immutable once loaded; share freely.
#[derive(Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    splits: BTreeMap<Split, Vec<Conversation>>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Conversation] {
        self.splits.get(&split).map_or(&[], |v| v.as_slice())
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.manifest.lexicon
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn conversation_to_record(conv: &Conversation) -> ConversationRecord {
    ConversationRecord {
        id: conv.id.clone(),
        split: conv.split.as_str().to_string(),
        turns: conv
            .turns
            .iter()
            .map(|t| TurnRecord {
                words: t.words.clone(),
                entity_spans: t.entity_spans.iter().map(|&(s, e)| [s, e]).collect(),
                frames: t.frames.rows().into_iter().map(|r| r.to_vec()).collect(),
            })
            .collect(),
    }
}

fn record_to_conversation(
    rec: ConversationRecord,
    path: &Path,
    line: usize,
) -> Result<Conversation, CorpusError> {
    let split = Split::parse(&rec.split).ok_or_else(|| CorpusError::Parse {
        path: path.display().to_string(),
        line,
        message: format!("unknown split {:?}", rec.split),
    })?;
    let mut turns = Vec::with_capacity(rec.turns.len());
    for (i, t) in rec.turns.into_iter().enumerate() {
        let rows = t.frames.len();
        let cols = t.frames.first().map_or(0, |r| r.len());
        if rows == 0 || cols == 0 || t.frames.iter().any(|r| r.len() != cols) {
            return Err(CorpusError::Parse {
                path: path.display().to_string(),
                line,
                message: format!("turn {i} has ragged or empty frames"),
            });
        }
        let flat: Vec<f32> = t.frames.into_iter().flatten().collect();
        let frames = Array2::from_shape_vec((rows, cols), flat).expect("frame shape");
        turns.push(Turn {
            words: t.words,
            entity_spans: t.entity_spans.iter().map(|&[s, e]| (s, e)).collect(),
            frames,
            turn_index: i,
        });
    }
    Ok(Conversation {
        id: rec.id,
        turns,
        split,
    })
}

/// Generates every split to `out_dir` and writes `manifest.json`.
/// Refuses an existing corpus directory unless `force` is set.
pub fn generate_corpus(
    config: &CorpusConfig,
    out_dir: &Path,
    force: bool,
) -> Result<CorpusManifest, CorpusError> {
    config.validate()?;
    let manifest_path = out_dir.join("manifest.json");
    if manifest_path.exists() && !force {
        return Err(CorpusError::AlreadyExists(out_dir.display().to_string()));
    }
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let lexicon = build_lexicon(config)?;
    let mut stats = BTreeMap::new();

    for (split_idx, split) in Split::ALL.into_iter().enumerate() {
        let count = config.conversations.get(split);
        let convs: Result<Vec<Conversation>, CorpusError> = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(&[
                    config.seed,
                    tag::CONVERSATION,
                    split_idx as u64,
                    i as u64,
                ]);
                sample_conversation(&lexicon, config, split, i, &mut rng)
            })
            .collect();
        let convs = convs?;

        let path = out_dir.join(split.file_name());
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(file);
        for conv in &convs {
            let line = serde_json::to_string(&conversation_to_record(conv))
                .expect("conversation serializes");
            writeln!(w, "{line}").map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;

        stats.insert(split.as_str().to_string(), split_stats(&convs));
    }

    let manifest = CorpusManifest {
        config: config.clone(),
        lexicon,
        stats,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;
    Ok(manifest)
}

fn split_stats(convs: &[Conversation]) -> SplitStats {
    let utterances: usize = convs.iter().map(|c| c.turns.len()).sum();
    let words: usize = convs
        .iter()
        .flat_map(|c| c.turns.iter())
        .map(|t| t.words.len())
        .sum();
    let entity_words: usize = convs
        .iter()
        .flat_map(|c| c.turns.iter())
        .map(|t| t.entity_word_count())
        .sum();
    SplitStats {
        conversations: convs.len(),
        utterances,
        words,
        entity_words,
        entity_word_ratio: if words == 0 {
            0.0
        } else {
            entity_words as f64 / words as f64
        },
    }
}

/// Loads and validates a corpus directory written by [`generate_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let manifest_path = dir.join("manifest.json");
    let manifest_text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&manifest_text).map_err(|e| CorpusError::Parse {
            path: manifest_path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
    manifest.lexicon.validate()?;

    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let convs = load_split_file(&path, split, &manifest.lexicon)?;
        splits.insert(split, convs);
    }
    Ok(Corpus { manifest, splits })
}

fn load_split_file(
    path: &Path,
    split: Split,
    lexicon: &Lexicon,
) -> Result<Vec<Conversation>, CorpusError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ConversationRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                path: path.display().to_string(),
                line: line_no,
                message: e.to_string(),
            })?;
        let conv = record_to_conversation(rec, path, line_no)?;
        if conv.split != split {
            return Err(CorpusError::Parse {
                path: path.display().to_string(),
                line: line_no,
                message: format!("record split {} in {} file", conv.split, split),
            });
        }
        validate_conversation(&conv, lexicon)?;
        out.push(conv);
    }
    Ok(out)
}

/// Re-serializes a loaded split exactly as [`generate_corpus`] writes it.
pub fn serialize_split(convs: &[Conversation]) -> String {
    let mut out = String::new();
    for conv in convs {
        out.push_str(
            &serde_json::to_string(&conversation_to_record(conv)).expect("serializes"),
        );
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> CorpusConfig {
        CorpusConfig {
            n_common: 30,
            n_entities: 40,
            conversations: super::super::SplitCounts {
                train: 6,
                dev: 2,
                test: 3,
                pretrain: 0,
            },
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn generate_load_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        generate_corpus(&cfg, dir.path(), false).unwrap();
        let corpus = load_corpus(dir.path()).unwrap();
        for split in Split::ALL {
            let original = fs::read_to_string(dir.path().join(split.file_name())).unwrap();
            assert_eq!(original, serialize_split(corpus.split(split)), "{split}");
        }
        // zero-count split produces an empty file and zero stats
        assert_eq!(corpus.split(Split::Pretrain).len(), 0);
        assert_eq!(corpus.manifest.stats["pretrain"].conversations, 0);
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        generate_corpus(&cfg, d1.path(), false).unwrap();
        generate_corpus(&cfg, d2.path(), false).unwrap();
        for name in ["train.jsonl", "dev.jsonl", "test.jsonl", "manifest.json"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn refuses_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        generate_corpus(&cfg, dir.path(), false).unwrap();
        match generate_corpus(&cfg, dir.path(), false) {
            Err(CorpusError::AlreadyExists(_)) => {}
            other => panic!("expected AlreadyExists, got {other:?}"),
        }
        generate_corpus(&cfg, dir.path(), true).unwrap();
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        generate_corpus(&cfg, dir.path(), false).unwrap();
        let path = dir.path().join("dev.jsonl");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let broken = &lines[1][..lines[1].len() / 2];
        lines[1] = broken;
        fs::write(&path, lines.join("\n")).unwrap();
        match load_corpus(dir.path()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_span_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        generate_corpus(&cfg, dir.path(), false).unwrap();
        let path = dir.path().join("test.jsonl");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut rec: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
        rec["turns"][0]["entity_spans"] = serde_json::json!([[0, 999]]);
        lines[0] = serde_json::to_string(&rec).unwrap();
        fs::write(&path, lines.join("\n")).unwrap();
        match load_corpus(dir.path()) {
            Err(CorpusError::Validation { id, .. }) => assert!(id.starts_with("test-")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_entity_ratio_matches_independent_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.conversations.test = 30;
        generate_corpus(&cfg, dir.path(), false).unwrap();
        // independent counting pass over the emitted records
        let text = fs::read_to_string(dir.path().join("test.jsonl")).unwrap();
        let mut words = 0usize;
        let mut entity_words = 0usize;
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for t in v["turns"].as_array().unwrap() {
                words += t["words"].as_array().unwrap().len();
                for span in t["entity_spans"].as_array().unwrap() {
                    let s = span[0].as_u64().unwrap();
                    let e = span[1].as_u64().unwrap();
                    entity_words += (e - s) as usize;
                }
            }
        }
        let manifest: CorpusManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        let stats = &manifest.stats["test"];
        assert_eq!(stats.words, words);
        assert_eq!(stats.entity_words, entity_words);
        let ratio = entity_words as f64 / words as f64;
        assert!((stats.entity_word_ratio - ratio).abs() < 1e-12);
        assert!((0.05..=0.30).contains(&ratio), "ratio {ratio}");
    }
}
