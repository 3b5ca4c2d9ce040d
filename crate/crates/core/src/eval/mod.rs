//! Text metrics and the evaluation protocols built on them.

mod metrics;
mod protocol;

use thiserror::Error;

use crate::config::ConfigError;
use crate::engine::EngineError;

pub use metrics::{bleu, rouge_l, rouge_n, tokenize, NoteScores, Prf};
pub use protocol::{
    ablation_label, default_lambda_grid, load_mcq_items, load_note_items, mcq_question,
    parse_answer_letter, run_ablation, run_mcq, run_note_completion, tune_lambda, AblationRow,
    CaseInput, McqItem, McqItemResult, McqReport, NoteCompletionItem, NoteItemResult, NoteReport,
    RunSettings, SweepItems, SweepReport, SweepRow, PLAN_INSTRUCTION,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {reason}")]
    MalformedItem { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl From<crate::embed::EmbedError> for EvalError {
    fn from(e: crate::embed::EmbedError) -> Self {
        EvalError::Engine(e.into())
    }
}
