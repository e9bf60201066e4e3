//! Checkpoints: a versioned container of model parameters, the optimizer
//! state for resumption, and an echo of the model config so incompatible
//! loads fail fast.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::detector::ModelParams;

use super::{AdamW, TrainError};

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model_config: ModelConfig,
    pub iteration: usize,
    pub params: ModelParams,
    pub optimizer: Option<AdamW>,
}

impl Checkpoint {
    pub fn new(
        model_config: ModelConfig,
        iteration: usize,
        params: ModelParams,
        optimizer: Option<AdamW>,
    ) -> Self {
        Self {
            version: SCHEMA_VERSION,
            model_config,
            iteration,
            params,
            optimizer,
        }
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut text = serde_json::to_string(checkpoint)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Load a checkpoint. With `expected` given, any structural mismatch
/// (dimension, layer count, heads, query count or mode) is refused.
pub fn load_checkpoint(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<Checkpoint, TrainError> {
    let text = std::fs::read_to_string(path)?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)?;
    if checkpoint.version != SCHEMA_VERSION {
        return Err(TrainError::SchemaVersion {
            found: checkpoint.version,
            expected: SCHEMA_VERSION,
        });
    }
    if let Some(expected) = expected {
        let stored = &checkpoint.model_config;
        let mismatches: Vec<String> = [
            ("d_model", stored.d_model != expected.d_model),
            (
                "decoder_layers",
                stored.decoder_layers != expected.decoder_layers,
            ),
            ("heads", stored.heads != expected.heads),
            ("ffn_dim", stored.ffn_dim != expected.ffn_dim),
            ("num_queries", stored.num_queries != expected.num_queries),
            ("query_mode", stored.query_mode != expected.query_mode),
        ]
        .iter()
        .filter_map(|(name, bad)| bad.then(|| name.to_string()))
        .collect();
        if !mismatches.is_empty() {
            return Err(TrainError::CheckpointMismatch(mismatches.join(", ")));
        }
    }
    Ok(checkpoint)
}
