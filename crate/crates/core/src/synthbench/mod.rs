//! Deterministic synthetic attribute-grounded benchmark.
//!
//! Scenes are token grids, not rendered images: objects carry attribute sets
//! drawn from a small vocabulary, a task's suitability predicate is a set of
//! attribute subsets, and an object is suitable iff its attributes contain
//! at least one subset. The generator also emits scripted LLM transcripts
//! whose parsed knowledge units embed exactly the predicate subsets, so the
//! real prompting and knowledge pipeline runs unmodified.

mod catalog;
mod dataset;
mod scene;
mod suite;

pub use catalog::{attribute_vocabulary, category, suite_task_count, Category, SynthTask};
pub use dataset::{load_dataset, save_dataset, Dataset, DatasetInfo};
pub use scene::{generate_scene, scene_tokens, SceneObject, Split, SynthScene};
pub use suite::{generate_suite, object_kb_drafts, Suite, TaskTranscripts};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("unknown attribute {0:?} in predicate or category")]
    UnknownAttribute(String),
    #[error("suite config asks for {requested} tasks but the catalog has {available}")]
    TooManyTasks { requested: usize, available: usize },
    #[error("dataset schema version {found} unsupported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("dataset file is empty or missing its header line")]
    MissingHeader,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}
