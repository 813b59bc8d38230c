//! The differentiable core: audio encoder/projector, fixed-budget latent
//! compressor with turn-indexed queries, a small decoder-only LM, low-rank
//! adapters, masked cross-entropy, and greedy decoding.
//!
//! Parameters live in a flat name -> matrix map so the optimizer, freeze
//! contracts, hashing, and checkpoints all share one representation.

mod checkpoint;
mod forward;
mod infer;
mod init;

pub use checkpoint::{load_checkpoint, save_checkpoint, vocab_sha256};
pub use forward::{Forward, TensorGrads};
pub use infer::{
    compressor_attention_probs, embed_prompt_infer, greedy_decode, lm_attention_probs,
    lm_forward_infer, LmSession,
};
pub use init::{attach_adapters, attach_compressor, expected_shapes, new_model};

use gradtape::Real;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("frame width {got} does not match encoder feature dim {want}")]
    FeatureDimMismatch { got: usize, want: usize },
    #[error("relative index {got} outside 1..={max}")]
    RelIndexOutOfRange { got: usize, max: usize },
    #[error("model has no {0} attached")]
    MissingComponent(&'static str),
    #[error("no audio provided for slot {slot_id}")]
    MissingSlotAudio { slot_id: usize },
    #[error("sequence needs {required} positions but the model supports {available}")]
    LengthOverflow { required: usize, available: usize },
    #[error("loss mask has no supervised positions")]
    EmptyLossMask,
    #[error("loss inputs misaligned: {logits} logit rows, {targets} targets")]
    MisalignedLoss { logits: usize, targets: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Architecture hyperparameters. Shapes of every tensor derive from this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub enc_channels: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub k_latent: usize,
    pub c_max: usize,
    pub adapter_rank: usize,
    pub adapter_alpha: f64,
    pub compressor_ff: bool,
    /// Components present in the parameter map.
    pub has_compressor: bool,
    pub has_adapters: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 16,
            enc_channels: 64,
            dim: 128,
            blocks: 4,
            heads: 4,
            ff_mult: 4,
            max_len: 4096,
            vocab_size: 44,
            k_latent: 16,
            c_max: 10,
            adapter_rank: 8,
            adapter_alpha: 16.0,
            compressor_ff: true,
            has_compressor: false,
            has_adapters: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Checkpoint(m.to_string()));
        if self.dim % self.heads != 0 {
            return bad("dim must be divisible by heads");
        }
        if self.dim == 0 || self.blocks == 0 || self.vocab_size == 0 || self.max_len == 0 {
            return bad("zero-sized model dimension");
        }
        if self.k_latent == 0 || self.c_max == 0 {
            return bad("k_latent and c_max must be positive");
        }
        Ok(())
    }

    /// Encoder output length for a T-frame input (after <4-frame padding).
    pub fn encoded_len(&self, frames: usize) -> usize {
        let t = frames.max(4);
        t.div_ceil(4)
    }
}

/// Name -> matrix parameter store. Deterministic iteration order.
pub type TensorMap<T> = BTreeMap<String, Array2<T>>;

#[derive(Clone, Debug)]
pub struct ModelParams<T: Real> {
    pub config: ModelConfig,
    pub tensors: TensorMap<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn get(&self, name: &str) -> &Array2<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing tensor {name}"))
    }

    /// Non-trainable buffers: saved and hashed, never optimized.
    pub fn is_buffer(name: &str) -> bool {
        name == "enc.silence"
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| U::from_f64(x.to_f64()))))
                .collect(),
        }
    }

    /// Folds every adapter pair into its base weight and drops the adapters.
    pub fn merge_adapters(&self) -> ModelParams<T> {
        assert!(self.config.has_adapters, "no adapters to merge");
        let scale = T::from_f64(self.config.adapter_alpha / self.config.adapter_rank as f64);
        let mut out = self.clone();
        for b in 0..self.config.blocks {
            for proj in ["wq", "wv"] {
                let down = self.get(&format!("adapt.{b}.{proj}.down"));
                let up = self.get(&format!("adapt.{b}.{proj}.up"));
                let delta = down.dot(up).mapv(|x| x * scale);
                let base = out
                    .tensors
                    .get_mut(&format!("lm.{b}.attn.{proj}"))
                    .expect("base weight");
                *base += &delta;
            }
        }
        out.tensors.retain(|k, _| !k.starts_with("adapt."));
        out.config.has_adapters = false;
        out
    }
}
