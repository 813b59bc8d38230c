//! Word alignment, WER, entity-restricted WER, context-budget ratios, and
//! checkpoint evaluation.

mod align;
mod evaluate;
mod metrics;
mod report;
mod rho;

pub use align::{word_align, AlignOp, Alignment};
pub use evaluate::{
    evaluate_model, evaluate_stage1_alignment, ContextKind, EvalSettings, DEFAULT_MAX_DECODE,
};
pub use metrics::{bias_wer, metric_report, wer, MetricReport, Utterance};
pub use report::{
    format_compression_table, format_metric_table, write_compression_jsonl, write_metric_jsonl,
};
pub use rho::{compression_curves, rho_audio, rho_context, CompressionStats, RhoRow};

use crate::model::ModelError;
use crate::promptkit::PromptError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no reference words to score")]
    ZeroReferenceWords,
    #[error("no entity reference words to score")]
    ZeroEntityWords,
    #[error("compression rate is undefined for zero context turns")]
    EmptyContext,
    #[error("audio token counts must be positive")]
    ZeroAudioCount,
    #[error("context kind 'none' cannot take {0} context turns")]
    ContradictoryContext(usize),
    #[error("compressed evaluation with {got} turns exceeds the supported maximum {max}")]
    BeyondMaxContext { got: usize, max: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
