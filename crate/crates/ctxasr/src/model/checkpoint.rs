//! Checkpoint format: a directory holding `manifest.json` (config, vocab
//! hash, tensor table), one little-endian f32 blob `weights.bin`, and the
//! vocab table `vocab.txt`.

use super::{expected_shapes, ModelConfig, ModelError, ModelParams, TensorMap};
use crate::promptkit::Vocab;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    shape: [usize; 2],
    dtype: String,
    offset: u64,
    len_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    config: ModelConfig,
    vocab_sha256: String,
    tensors: BTreeMap<String, TensorEntry>,
}

pub fn vocab_sha256(vocab: &Vocab) -> String {
    let mut h = Sha256::new();
    h.update(vocab.serialize().as_bytes());
    hex_digest(&h.finalize())
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParams<f32>,
    vocab: &Vocab,
) -> Result<(), ModelError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = BTreeMap::new();
    for (name, t) in &params.tensors {
        let offset = blob.len() as u64;
        for v in t.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.insert(
            name.clone(),
            TensorEntry {
                shape: [t.nrows(), t.ncols()],
                dtype: "f32".into(),
                offset,
                len_bytes: (t.len() * 4) as u64,
            },
        );
    }
    let manifest = CheckpointManifest {
        config: params.config.clone(),
        vocab_sha256: vocab_sha256(vocab),
        tensors,
    };
    let weights_path = dir.join("weights.bin");
    fs::write(&weights_path, &blob).map_err(|e| io_err(&weights_path, e))?;
    let vocab_path = dir.join("vocab.txt");
    fs::write(&vocab_path, vocab.serialize()).map_err(|e| io_err(&vocab_path, e))?;
    let manifest_path = dir.join("manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| io_err(&manifest_path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams<f32>, Vocab), ModelError> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| ModelError::Checkpoint(format!("bad manifest: {e}")))?;
    manifest.config.validate()?;

    let vocab_path = dir.join("vocab.txt");
    let vocab_text = fs::read_to_string(&vocab_path).map_err(|e| io_err(&vocab_path, e))?;
    let vocab = Vocab::parse(&vocab_text)
        .map_err(|e| ModelError::Checkpoint(format!("bad vocab: {e}")))?;
    if vocab_sha256(&vocab) != manifest.vocab_sha256 {
        return Err(ModelError::Checkpoint(
            "vocab hash does not match manifest".into(),
        ));
    }

    let expected = expected_shapes(&manifest.config);
    if expected.len() != manifest.tensors.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} tensors, manifest lists {}",
            expected.len(),
            manifest.tensors.len()
        )));
    }
    let weights_path = dir.join("weights.bin");
    let blob = fs::read(&weights_path).map_err(|e| io_err(&weights_path, e))?;

    let mut tensors = TensorMap::new();
    for (name, entry) in &manifest.tensors {
        let want = expected.get(name).ok_or_else(|| {
            ModelError::Checkpoint(format!("unexpected tensor {name} for this config"))
        })?;
        if entry.shape != [want.0, want.1] {
            return Err(ModelError::Checkpoint(format!(
                "tensor {name} shape {:?} does not match config {:?}",
                entry.shape, want
            )));
        }
        if entry.dtype != "f32" {
            return Err(ModelError::Checkpoint(format!(
                "tensor {name} has dtype {}",
                entry.dtype
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.len_bytes as usize;
        if end > blob.len() || entry.len_bytes as usize != entry.shape[0] * entry.shape[1] * 4 {
            return Err(ModelError::Checkpoint(format!(
                "tensor {name} byte range is inconsistent"
            )));
        }
        let values: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let arr = ndarray::Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values)
            .expect("validated shape");
        tensors.insert(name.clone(), arr);
    }
    Ok((
        ModelParams {
            config: manifest.config,
            tensors,
        },
        vocab,
    ))
}
