//! Run manifests: what a command produced, with content hashes so a
//! completed run can be verified byte-for-byte.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub regime: String,
    pub seed: u64,
    pub threads: usize,
    pub corpus_dir: String,
    pub corpus_manifest_sha256: String,
    pub total_steps: usize,
    pub best_dev_metric: f64,
    pub wall_clock_secs: u64,
    /// Paths relative to the run directory, with their content hashes.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes =
        std::fs::read(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Hash of a whole directory: file names and contents in sorted order.
pub fn sha256_dir(dir: &Path) -> anyhow::Result<String> {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| anyhow::anyhow!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        if p.is_file() {
            h.update(p.file_name().unwrap().to_string_lossy().as_bytes());
            h.update(std::fs::read(&p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn hash_artifact(&mut self, run_dir: &Path, rel: &str) -> anyhow::Result<()> {
        let full = run_dir.join(rel);
        let hash = if full.is_dir() {
            sha256_dir(&full)?
        } else {
            sha256_file(&full)?
        };
        self.artifacts.insert(rel.to_string(), hash);
        Ok(())
    }

    pub fn save(&self, run_dir: &Path) -> anyhow::Result<()> {
        let path = run_dir.join("run.json");
        std::fs::write(&path, serde_json::to_string_pretty(self).expect("serializes"))
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(())
    }

    pub fn load(run_dir: &Path) -> anyhow::Result<Self> {
        let path = run_dir.join("run.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Re-hashes every artifact; errors on the first mismatch or missing file.
    pub fn verify(&self, run_dir: &Path) -> anyhow::Result<()> {
        for (rel, want) in &self.artifacts {
            let full = run_dir.join(rel);
            let got = if full.is_dir() {
                sha256_dir(&full)?
            } else {
                sha256_file(&full)?
            };
            if &got != want {
                anyhow::bail!("artifact {rel} hash mismatch");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "hello").unwrap();
        let mut m = RunManifest {
            run_id: "r".into(),
            regime: "single".into(),
            seed: 1,
            threads: 2,
            corpus_dir: "c".into(),
            corpus_manifest_sha256: "x".into(),
            total_steps: 0,
            best_dev_metric: 0.0,
            wall_clock_secs: 0,
            artifacts: BTreeMap::new(),
        };
        m.hash_artifact(dir.path(), "a.txt").unwrap();
        m.save(dir.path()).unwrap();
        let loaded = RunManifest::load(dir.path()).unwrap();
        loaded.verify(dir.path()).unwrap();
        std::fs::write(dir.path().join("a.txt"), "tampered").unwrap();
        assert!(loaded.verify(dir.path()).is_err());
    }
}
