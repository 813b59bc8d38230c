//! Experiment configuration: one TOML file with [corpus], [model], [train],
//! and [eval] sections. Every field has a default, so partial files work,
//! and the effective merged config is always written back to the run
//! directory.

use crate::corpus::CorpusConfig;
use crate::eval::DEFAULT_MAX_DECODE;
use crate::model::ModelConfig;
use crate::training::{ContextSampling, DataSelection, QueryMode, Regime, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    /// Single-turn training builds the backbone from scratch and needs far
    /// more passes than the fine-tuning regimes.
    pub epochs_single: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub raw_context_max: usize,
    pub raw_context_sampling: ContextSampling,
    pub stage1_data: DataSelection,
    pub stage1_query: QueryMode,
    /// From-scratch regimes; the reference fine-tuning rate of 4e-5 assumes
    /// a pretrained backbone, which this lab builds itself.
    pub lr_single: f64,
    pub lr_raw: f64,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 4,
            epochs_single: 28,
            batch_size: 16,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            warmup_steps: 50,
            seed: 1,
            raw_context_max: 10,
            raw_context_sampling: ContextSampling::ZeroToMax,
            stage1_data: DataSelection::TrainOnly,
            stage1_query: QueryMode::SampleUniform,
            lr_single: 3e-3,
            lr_raw: 1e-3,
            lr_stage1: 1e-3,
            lr_stage2: 4e-4,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, regime: Regime) -> TrainConfig {
        let mut c = TrainConfig::for_regime(regime, self.seed);
        c.epochs = if regime == Regime::Single {
            self.epochs_single
        } else {
            self.epochs
        };
        c.batch_size = self.batch_size;
        c.weight_decay = self.weight_decay;
        c.max_grad_norm = self.max_grad_norm;
        c.warmup_steps = self.warmup_steps;
        c.raw_context_max = self.raw_context_max;
        c.raw_context_sampling = self.raw_context_sampling;
        c.stage1_data = self.stage1_data;
        c.stage1_query = self.stage1_query;
        c.learning_rate = match regime {
            Regime::Single => self.lr_single,
            Regime::RawMultiturn => self.lr_raw,
            Regime::Stage1 => self.lr_stage1,
            Regime::Stage2 => self.lr_stage2,
        };
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub max_decode_tokens: usize,
    pub stage1_rel_index: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            max_decode_tokens: DEFAULT_MAX_DECODE,
            stage1_rel_index: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        cfg.corpus.validate()?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_toml())
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
[corpus]
seed = 99

[train]
epochs = 2
"#,
        )
        .unwrap();
        assert_eq!(cfg.corpus.seed, 99);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.model.dim, 128);
    }

    #[test]
    fn stage_learning_rates_map_to_regimes() {
        let s = TrainSection::default();
        assert_eq!(s.to_config(Regime::Stage1).learning_rate, s.lr_stage1);
        assert_eq!(s.to_config(Regime::Single).learning_rate, s.lr_single);
    }
}
