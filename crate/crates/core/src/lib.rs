//! Task-driven object detection conditioned on LLM-derived affordance knowledge.
//!
//! The pipeline has four stages, each living in its own module:
//!
//! 1. [`mlcot`] — multi-level chain-of-thought prompting of a language model
//!    (object examples → rationales → visual-affordance summaries), with
//!    pluggable transports and a replayable transcript cache.
//! 2. [`knowledge`] — embedding the extracted affordance units into
//!    sentence/word feature pairs, outlier filtering, and the persistable
//!    per-task knowledge base.
//! 3. [`detector`] / [`training`] — a knowledge-conditioned query-based
//!    detector (relevance scoring, knowledge-aware query generation,
//!    transformer decoding with reference points) trained with bipartite
//!    matching losses and knowledge-conditional denoising.
//! 4. [`synthbench`] / [`eval`] — a deterministic synthetic attribute-grounded
//!    benchmark and AP@0.5 evaluation, so the whole loop runs on a CPU in
//!    minutes.
//!
//! [`autodiff`] is the small reverse-mode tape the detector and losses are
//! built on; [`config`] holds the declarative run configuration shared with
//! the CLI.

pub mod autodiff;
pub mod config;
pub mod detector;
pub mod eval;
pub mod knowledge;
pub mod mlcot;
pub mod rng;
pub mod synthbench;
pub mod training;

pub use config::RunConfig;
pub use detector::{Detection, ModelParams, QueryBatch, SceneTokens, TaskFeature};
pub use knowledge::{Embedding, KnowledgeBase, KnowledgeUnit};
pub use mlcot::{KnowledgeUnitDraft, PromptLevel, TaskSpec};
pub use training::{GroundTruth, LossWeights, NoiseConfig};
