//! The four training regimes and their shared machinery: AdamW with
//! decoupled weight decay, global-norm clipping, linear warmup/decay,
//! curriculum over context length, and cryptographic freeze contracts.

mod optim;
mod regimes;
mod schedule;

pub use optim::{frozen_hash, optimizer_step, tensor_hash, trainable_names, AdamState};
pub use regimes::{
    train_raw_multiturn, train_single_turn, train_stage1, train_stage2, RunOutput, Trainer,
};
pub use schedule::{curriculum_max_context, lr_at};

use crate::corpus::{CorpusError, Split};
use crate::eval::EvalError;
use crate::model::ModelError;
use crate::promptkit::PromptError;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Single,
    RawMultiturn,
    Stage1,
    Stage2,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Single => "single",
            Regime::RawMultiturn => "raw_multiturn",
            Regime::Stage1 => "stage1",
            Regime::Stage2 => "stage2",
        }
    }

    pub(crate) fn id(self) -> u64 {
        match self {
            Regime::Single => 0,
            Regime::RawMultiturn => 1,
            Regime::Stage1 => 2,
            Regime::Stage2 => 3,
        }
    }
}

/// Raw-context turn-count sampling during multi-turn SFT.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSampling {
    ZeroToMax,
    OneToMax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSelection {
    TrainOnly,
    PretrainPlusTrain,
}

/// Which turn-indexed query the stage-1 alignment task exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Draw the relative index uniformly per example so every query trains.
    SampleUniform,
    /// Train only index 1, then copy it into all indices at the end.
    FixedOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub raw_context_max: usize,
    pub raw_context_sampling: ContextSampling,
    pub stage1_data: DataSelection,
    pub stage1_query: QueryMode,
    pub max_decode_tokens: usize,
}

impl TrainConfig {
    /// Paper-style defaults; stage 1 raises the learning rate to 1e-3.
    pub fn for_regime(regime: Regime, seed: u64) -> Self {
        TrainConfig {
            regime,
            epochs: 4,
            batch_size: 16,
            learning_rate: if regime == Regime::Stage1 { 1e-3 } else { 4e-5 },
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            warmup_steps: 50,
            seed,
            raw_context_max: 10,
            raw_context_sampling: ContextSampling::ZeroToMax,
            stage1_data: DataSelection::TrainOnly,
            stage1_query: QueryMode::SampleUniform,
            max_decode_tokens: crate::eval::DEFAULT_MAX_DECODE,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.max_grad_norm <= 0.0 {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("split {0} has no conversations")]
    EmptySplit(Split),
    #[error("non-finite gradient in {tensor} at step {step}")]
    NonFiniteGradient { tensor: String, step: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("freeze contract violated: {0}")]
    FreezeViolation(String),
    #[error("{regime} requires a checkpoint from {needs}")]
    MissingDependency {
        regime: &'static str,
        needs: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
