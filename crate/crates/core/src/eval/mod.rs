//! AP@0.5 evaluation per task and the mean across tasks.

mod ap;
mod evaluate;
mod report;

pub use ap::{ap50, ApResult, CountSummary, PrPoint};
pub use evaluate::{evaluate, EvalResult, TaskEval};
pub use report::{render_table, report_to_json, write_pr_svg};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset references task {0} with no matching knowledge base")]
    MissingKnowledge(u32),
    #[error("detector: {0}")]
    Detector(#[from] crate::detector::DetectorError),
    #[error("knowledge: {0}")]
    Knowledge(#[from] crate::knowledge::KnowledgeError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}
