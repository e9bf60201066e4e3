//! Knowledge encoding and aggregation: embed affordance drafts into
//! sentence/word feature pairs, drop outlier units, persist the per-task
//! knowledge base.

mod embedder;
mod filter;
mod store;

pub use embedder::{embedder_from_id, tokenize, TextEmbedder, ToyEmbedder};
pub use filter::{cosine, filter_outliers};
pub use store::{load_kb, save_kb};

use serde::{Deserialize, Serialize};

use crate::mlcot::{KnowledgeUnitDraft, TaskSpec};

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("draft has no attribute phrases")]
    EmptyDraft,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("knowledge base needs at least one unit")]
    EmptyUnits,
    #[error("threshold {0} outside [-1, 1]")]
    ThresholdRange(f64),
    #[error("non-finite value in embedding")]
    NonFinite,
    #[error("unknown embedder id {0:?}")]
    UnknownEmbedder(String),
    #[error("knowledge-base file schema version {found} unsupported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("knowledge base built by embedder {found:?}, expected {expected:?}")]
    EmbedderMismatch { expected: String, found: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// A fixed-length real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// One set of visual affordances with its sentence-level and word-level
/// embeddings, plus the draft it came from for rationale display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeUnit {
    pub text: String,
    pub sentence_feature: Embedding,
    pub word_features: Vec<Embedding>,
    pub provenance: KnowledgeUnitDraft,
}

/// The filtered collection of knowledge units for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub task: TaskSpec,
    pub units: Vec<KnowledgeUnit>,
    pub embedder_id: String,
    pub threshold: f64,
}

impl KnowledgeBase {
    pub fn dim(&self) -> usize {
        self.units
            .first()
            .map(|u| u.sentence_feature.dim())
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Structural invariants: at least one unit, consistent dimensions,
    /// non-empty word features, finite values.
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.units.is_empty() {
            return Err(KnowledgeError::EmptyUnits);
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(KnowledgeError::ThresholdRange(self.threshold));
        }
        let dim = self.dim();
        for unit in &self.units {
            if unit.sentence_feature.dim() != dim {
                return Err(KnowledgeError::DimensionMismatch {
                    expected: dim,
                    got: unit.sentence_feature.dim(),
                });
            }
            if unit.word_features.is_empty() {
                return Err(KnowledgeError::EmptyDraft);
            }
            if !unit.sentence_feature.is_finite() {
                return Err(KnowledgeError::NonFinite);
            }
            for word in &unit.word_features {
                if word.dim() != dim {
                    return Err(KnowledgeError::DimensionMismatch {
                        expected: dim,
                        got: word.dim(),
                    });
                }
                if !word.is_finite() {
                    return Err(KnowledgeError::NonFinite);
                }
            }
        }
        Ok(())
    }
}

/// Embed one draft: the sentence feature is the sequence-level vector of the
/// concatenated phrases, the word features are the per-token vectors.
pub fn embed_unit(
    draft: &KnowledgeUnitDraft,
    embedder: &dyn TextEmbedder,
) -> Result<KnowledgeUnit, KnowledgeError> {
    if draft.attribute_phrases.is_empty() {
        return Err(KnowledgeError::EmptyDraft);
    }
    let text = draft.attribute_phrases.join(" and ");
    let (sentence_feature, word_features) = embedder.embed(&text)?;
    let dim = embedder.dim();
    if sentence_feature.dim() != dim {
        return Err(KnowledgeError::DimensionMismatch {
            expected: dim,
            got: sentence_feature.dim(),
        });
    }
    for word in &word_features {
        if word.dim() != dim {
            return Err(KnowledgeError::DimensionMismatch {
                expected: dim,
                got: word.dim(),
            });
        }
    }
    Ok(KnowledgeUnit {
        text,
        sentence_feature,
        word_features,
        provenance: draft.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft() -> KnowledgeUnitDraft {
        KnowledgeUnitDraft {
            attribute_phrases: vec!["a sharp blade".to_string(), "a handle".to_string()],
            source_object: "knife".to_string(),
            source_rationales: vec!["cuts tape".to_string()],
        }
    }

    #[test]
    fn word_feature_count_matches_tokens() {
        let embedder = ToyEmbedder::new(16, 7);
        let unit = embed_unit(&draft(), &embedder).unwrap();
        // "a sharp blade and a handle" has 6 tokens.
        assert_eq!(unit.text, "a sharp blade and a handle");
        assert_eq!(unit.word_features.len(), 6);
        assert_eq!(unit.sentence_feature.dim(), 16);
    }

    #[test]
    fn embedding_is_deterministic() {
        let embedder = ToyEmbedder::new(16, 7);
        let a = embed_unit(&draft(), &embedder).unwrap();
        let b = embed_unit(&draft(), &embedder).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_draft_rejected() {
        let embedder = ToyEmbedder::new(16, 7);
        let empty = KnowledgeUnitDraft {
            attribute_phrases: vec![],
            source_object: "knife".to_string(),
            source_rationales: vec![],
        };
        assert!(matches!(
            embed_unit(&empty, &embedder),
            Err(KnowledgeError::EmptyDraft)
        ));
    }
}
