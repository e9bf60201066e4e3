//! Declarative run configuration.
//!
//! One TOML file drives every stage (knowledge building, data generation,
//! training, evaluation). Unknown keys are rejected so typos fail loudly
//! instead of silently falling back to defaults.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::training::{LossWeights, NoiseConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How object queries are produced. The default is the knowledge-conditional
/// path; the other two exist for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// Learned query embeddings, no knowledge involved.
    RandomInit,
    /// Learned query embeddings initialized by adding knowledge-unit
    /// sentence features (cycled) on top.
    KnowledgeInit,
    /// Relevance-scored token selection plus attention-pooled knowledge
    /// enhancement.
    KnowledgeSelect,
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryMode::RandomInit => write!(f, "random-init"),
            QueryMode::KnowledgeInit => write!(f, "knowledge-init"),
            QueryMode::KnowledgeSelect => write!(f, "knowledge-select"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Embedding dimension D shared by scene tokens, knowledge features and
    /// all decoder states.
    pub d_model: usize,
    /// Number of decoder layers L.
    pub decoder_layers: usize,
    /// Attention heads in self/cross attention.
    pub heads: usize,
    /// Hidden width of the decoder feed-forward blocks.
    pub ffn_dim: usize,
    /// Number of object queries k.
    pub num_queries: usize,
    /// Confidence cutoff applied at inference (AP evaluation sweeps all
    /// confidences and ignores this).
    pub score_threshold: f64,
    pub query_mode: QueryMode,
    /// Prior box width/height the box head offsets from, in (0, 1).
    pub box_size_prior: f64,
    /// Supervise decoder outputs at every layer, not just the last.
    pub per_layer_aux: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            decoder_layers: 3,
            heads: 4,
            ffn_dim: 64,
            num_queries: 20,
            score_threshold: 0.5,
            query_mode: QueryMode::KnowledgeSelect,
            box_size_prior: 0.2,
            per_layer_aux: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct KnowledgeConfig {
    /// Cosine threshold below which a unit whose best match falls is dropped.
    pub threshold: f64,
    /// Embedder identifier, e.g. `toy-d32-s7`. Knowledge bases record the id
    /// of the embedder that produced them and refuse to mix.
    pub embedder: String,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self {
            threshold: 0.6,
            embedder: "toy-d32-s7".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MlcotConfig {
    /// Transport selection: "recorded", "scripted" or "http".
    pub backend: String,
    /// Parse-failure retries before giving up (each retry appends a
    /// reformat instruction to the prompt).
    pub retries: usize,
    /// Endpoint for the live backend.
    pub http_url: String,
    /// Model name sent to the live backend.
    pub http_model: String,
    /// Environment variable holding the live-backend credential.
    pub api_key_env: String,
}

impl Default for MlcotConfig {
    fn default() -> Self {
        Self {
            backend: "recorded".to_string(),
            retries: 2,
            http_url: "https://api.openai.com/v1/chat/completions".to_string(),
            http_model: "gpt-3.5-turbo".to_string(),
            api_key_env: "TASKDET_API_KEY".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Print/log a metrics record every this many iterations.
    pub log_every: usize,
    pub weights: LossWeights,
    pub noise: NoiseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            learning_rate: 1e-4,
            batch_size: 4,
            weight_decay: 1e-4,
            seed: 0,
            log_every: 100,
            weights: LossWeights::default(),
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Number of tasks drawn from the built-in suite (at most 5).
    pub tasks: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Scene token grid is `grid` x `grid`.
    pub grid: usize,
    /// Std-dev of the per-cell feature noise.
    pub feature_noise: f64,
    /// Weight of the category-name vector mixed into object features.
    pub category_weight: f64,
    /// Fraction of scenes generated with zero task-suitable objects.
    pub empty_scene_frac: f64,
    /// Probability a non-empty scene contains at least one near-miss object.
    pub near_miss_prob: f64,
    /// Maximum objects per scene.
    pub max_objects: usize,
    /// Object examples emitted per predicate subset in the scripted
    /// object-level transcript.
    pub objects_per_subset: usize,
    /// Unsuitable decoy objects appended to the scripted transcripts; their
    /// knowledge units should be filtered out downstream.
    pub decoy_units: usize,
    /// Draw test-split suitable objects only from categories absent from the
    /// scripted object-level lists.
    pub heldout_eval: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tasks: 5,
            train_scenes: 400,
            test_scenes: 100,
            grid: 16,
            feature_noise: 0.025,
            category_weight: 0.15,
            empty_scene_frac: 0.1,
            near_miss_prob: 0.75,
            max_objects: 5,
            objects_per_subset: 1,
            decoy_units: 1,
            heldout_eval: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub knowledge: KnowledgeConfig,
    pub mlcot: MlcotConfig,
    pub training: TrainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    /// Load and validate a TOML config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        let m = &self.model;
        if m.d_model == 0 || m.d_model % 4 != 0 {
            return fail(format!(
                "model.d_model must be a positive multiple of 4, got {}",
                m.d_model
            ));
        }
        if m.heads == 0 || m.d_model % m.heads != 0 {
            return fail(format!(
                "model.heads must divide d_model ({} heads, d_model {})",
                m.heads, m.d_model
            ));
        }
        if m.num_queries == 0 {
            return fail("model.num_queries must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&m.score_threshold) {
            return fail(format!(
                "model.score_threshold must be in [0, 1], got {}",
                m.score_threshold
            ));
        }
        if !(m.box_size_prior > 0.0 && m.box_size_prior < 1.0) {
            return fail(format!(
                "model.box_size_prior must be in (0, 1), got {}",
                m.box_size_prior
            ));
        }
        if !(-1.0..=1.0).contains(&self.knowledge.threshold) {
            return fail(format!(
                "knowledge.threshold must be in [-1, 1], got {}",
                self.knowledge.threshold
            ));
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return fail("training.batch_size must be at least 1".to_string());
        }
        if !(t.learning_rate > 0.0) {
            return fail(format!(
                "training.learning_rate must be positive, got {}",
                t.learning_rate
            ));
        }
        let w = &t.weights;
        for (name, v) in [
            ("cl", w.cl),
            ("box_l1", w.box_l1),
            ("box_giou", w.box_giou),
            ("aux", w.aux),
            ("dn", w.dn),
        ] {
            if !(v >= 0.0) {
                return fail(format!("training.weights.{name} must be >= 0, got {v}"));
            }
        }
        let n = &t.noise;
        if !(0.0..0.5).contains(&n.center_jitter) {
            return fail(format!(
                "training.noise.center_jitter must be in [0, 0.5), got {}",
                n.center_jitter
            ));
        }
        if !(0.0..1.0).contains(&n.scale_jitter) {
            return fail(format!(
                "training.noise.scale_jitter must be in [0, 1), got {}",
                n.scale_jitter
            ));
        }
        let s = &self.synth;
        if s.tasks == 0 || s.tasks > crate::synthbench::suite_task_count() {
            return fail(format!(
                "synth.tasks must be in 1..={}, got {}",
                crate::synthbench::suite_task_count(),
                s.tasks
            ));
        }
        if s.grid < 4 {
            return fail(format!("synth.grid must be at least 4, got {}", s.grid));
        }
        if m.num_queries > s.grid * s.grid {
            return fail(format!(
                "model.num_queries ({}) exceeds token count ({})",
                m.num_queries,
                s.grid * s.grid
            ));
        }
        if !(0.0..=1.0).contains(&s.empty_scene_frac) {
            return fail(format!(
                "synth.empty_scene_frac must be in [0, 1], got {}",
                s.empty_scene_frac
            ));
        }
        if !(0.0..=1.0).contains(&s.near_miss_prob) {
            return fail(format!(
                "synth.near_miss_prob must be in [0, 1], got {}",
                s.near_miss_prob
            ));
        }
        if s.max_objects == 0 || s.max_objects > 5 {
            return fail(format!(
                "synth.max_objects must be in 1..=5, got {}",
                s.max_objects
            ));
        }
        if s.objects_per_subset == 0 {
            return fail("synth.objects_per_subset must be at least 1".to_string());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn threshold_out_of_range_rejected() {
        let mut config = RunConfig::default();
        config.knowledge.threshold = 1.1;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("threshold"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<RunConfig>("[model]\nd_model = 32\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn toml_round_trip() {
        let config = RunConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }
}
