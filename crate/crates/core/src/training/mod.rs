//! Training: bipartite matching, detection losses, knowledge-conditional
//! denoising, and the optimization loop.

mod checkpoint;
mod denoise;
mod giou;
mod loss;
mod matching;
mod optim;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use denoise::{denoise_forward, make_noised_queries, NoisedQueries};
pub use giou::{box_area, giou, giou_var, iou, BoxError};
pub use loss::{loss_total, LossBreakdown, LossInputs};
pub use matching::{hungarian_match, matching_cost};
pub use optim::AdamW;
pub use trainer::{train_loop, MetricsRecord, TrainArtifacts, TrainDataset, TrainScene};

use serde::{Deserialize, Serialize};

/// Ground-truth boxes for one scene, (cx, cy, w, h) normalized to the unit
/// square. May be empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub boxes: Vec<[f64; 4]>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// How noised-box visual features are extracted from the token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSampling {
    /// Bilinear sample at the noised center.
    Bilinear,
    /// Mean over tokens whose cell centers fall inside the noised box
    /// (bilinear fallback when none do).
    BoxAverage,
}

/// Box-noising parameters for denoising training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Center shift as a fraction of box size, in [0, 0.5).
    pub center_jitter: f64,
    /// Multiplicative size jitter half-range, in [0, 1).
    pub scale_jitter: f64,
    /// Independent denoising groups per scene.
    pub groups: usize,
    pub seed: u64,
    pub feature_sampling: FeatureSampling,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            center_jitter: 0.4,
            scale_jitter: 0.4,
            groups: 1,
            seed: 0,
            feature_sampling: FeatureSampling::Bilinear,
        }
    }
}

/// Loss weights. `cl`/`box_l1` follow the published training setup; the box
/// weight is split between L1 and GIoU per the usual DETR convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub cl: f64,
    pub box_l1: f64,
    pub box_giou: f64,
    pub aux: f64,
    pub dn: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cl: 4.0,
            box_l1: 5.0,
            box_giou: 2.0,
            aux: 1.0,
            dn: 1.0,
        }
    }
}

/// A one-to-one prediction/ground-truth assignment: `pairs` holds
/// (prediction index, ground-truth index), sorted by prediction index, with
/// |pairs| = min(#preds, #gt).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn empty() -> Self {
        Self { pairs: Vec::new() }
    }

    pub fn gt_for_pred(&self, pred: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|(p, _)| *p == pred)
            .map(|(_, g)| *g)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss at iteration {iteration}; offending batch: {diagnostic}")]
    NonFiniteLoss {
        iteration: usize,
        diagnostic: String,
    },
    #[error("dataset and knowledge bases cover different tasks: {0}")]
    TaskMismatch(String),
    #[error("dataset has no training scenes")]
    EmptyDataset,
    #[error("detector: {0}")]
    Detector(#[from] crate::detector::DetectorError),
    #[error("checkpoint schema version {found} unsupported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("checkpoint incompatible: {0}")]
    CheckpointMismatch(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}
