//! The knowledge-conditioned detector: relevance scoring of scene tokens
//! against knowledge units, knowledge-aware query generation, transformer
//! decoding with reference points, and prediction heads.

mod decoder;
mod forward;
mod heads;
mod params;
mod pool;
mod queries;
mod relevance;
mod scene;

pub use decoder::{decode, group_mask};
pub use forward::{forward, infer, DnInput, DnOutput, ForwardOutput};
pub use heads::{predict_heads, to_detections, PredSet};
pub use params::{ModelParams, TapeModel};
pub use pool::attention_pool;
pub use queries::{generate_queries, learned_queries, QueryVars};
pub use relevance::{relevance_scores, Relevance};
pub use scene::SceneTokens;

use serde::{Deserialize, Serialize};

use crate::knowledge::{Embedding, KnowledgeError, TextEmbedder};
use crate::mlcot::TaskSpec;

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("requested {k} queries but the scene has only {tokens} tokens")]
    TooManyQueries { k: usize, tokens: usize },
    #[error("knowledge base has no units")]
    EmptyKnowledge,
    #[error("knowledge: {0}")]
    Knowledge(#[from] KnowledgeError),
}

/// Text feature of the task phrase, dimension D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFeature {
    pub vector: Embedding,
}

impl TaskFeature {
    pub fn from_task(
        task: &TaskSpec,
        embedder: &dyn TextEmbedder,
    ) -> Result<Self, KnowledgeError> {
        let (vector, _) = embedder.embed(&task.phrase)?;
        Ok(Self { vector })
    }

    pub fn dim(&self) -> usize {
        self.vector.dim()
    }
}

/// Knowledge-aware queries with their reference points. Source and unit
/// indices are `None` for learned (non-selected) queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBatch {
    pub queries: Vec<Vec<f64>>,
    pub reference_points: Vec<(f64, f64)>,
    pub source_indices: Vec<Option<usize>>,
    pub unit_indices: Vec<Option<usize>>,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// One predicted box with its suitability confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// (cx, cy, w, h), all in [0, 1].
    pub box_cxcywh: [f64; 4],
    pub confidence: f64,
}
