//! Dataset persistence: a JSONL file with one self-describing header line
//! followed by one scene per line. Token grids are regenerated from scene
//! seeds on load, so files stay small and round-trip losslessly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::SynthConfig;

use super::scene::{Split, SynthScene};
use super::SynthError;

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub version: u32,
    pub split: Split,
    pub synth: SynthConfig,
    pub embedder_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub info: DatasetInfo,
    pub scenes: Vec<SynthScene>,
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), SynthError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = Vec::new();
    let mut header = serde_json::to_string(&dataset.info)?;
    header.push('\n');
    out.extend_from_slice(header.as_bytes());
    for scene in &dataset.scenes {
        let mut line = serde_json::to_string(scene)?;
        line.push('\n');
        out.extend_from_slice(line.as_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, SynthError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(SynthError::MissingHeader)?;
    let info: DatasetInfo = serde_json::from_str(header)?;
    if info.version != SCHEMA_VERSION {
        return Err(SynthError::SchemaVersion {
            found: info.version,
            expected: SCHEMA_VERSION,
        });
    }
    let scenes = lines
        .map(serde_json::from_str::<SynthScene>)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { info, scenes })
}

impl Dataset {
    pub fn new(split: Split, synth: SynthConfig, embedder_id: String, scenes: Vec<SynthScene>) -> Self {
        Self {
            info: DatasetInfo {
                version: SCHEMA_VERSION,
                split,
                synth,
                embedder_id,
            },
            scenes,
        }
    }

    pub fn task_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.scenes.iter().map(|s| s.task_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}
