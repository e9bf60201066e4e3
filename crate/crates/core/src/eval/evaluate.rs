//! Full-split evaluation: run the detector over every scene at a confidence
//! sweep (no fixed threshold), aggregate AP per task, report the mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::detector::{forward, ModelParams, TaskFeature};
use crate::knowledge::{KnowledgeBase, ToyEmbedder};
use crate::synthbench::{scene_tokens, Dataset};
use crate::training::GroundTruth;

use super::ap::{ap50, ApResult};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task_id: u32,
    pub phrase: String,
    pub result: ApResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_task: Vec<TaskEval>,
    pub mean_ap: f64,
}

impl EvalResult {
    pub fn per_task_ap(&self) -> BTreeMap<u32, f64> {
        self.per_task
            .iter()
            .map(|t| (t.task_id, t.result.ap))
            .collect()
    }
}

/// Evaluate a checkpointed model over one dataset split. The embedder must
/// be the one the knowledge bases were built with; every scene's task needs
/// a knowledge base.
pub fn evaluate(
    params: &ModelParams,
    model_config: &ModelConfig,
    dataset: &Dataset,
    kbs: &BTreeMap<u32, KnowledgeBase>,
    embedder: &ToyEmbedder,
) -> Result<EvalResult, EvalError> {
    let mut per_task = Vec::new();
    for task_id in dataset.task_ids() {
        let kb = kbs
            .get(&task_id)
            .ok_or(EvalError::MissingKnowledge(task_id))?;
        let task_feature = TaskFeature::from_task(&kb.task, embedder)?;
        let mut detections_per_scene = Vec::new();
        let mut gt_per_scene: Vec<GroundTruth> = Vec::new();
        for scene in dataset.scenes.iter().filter(|s| s.task_id == task_id) {
            let tokens = scene_tokens(scene, &dataset.info.synth, embedder, model_config.d_model);
            let output = forward(&tokens, &task_feature, kb, params, model_config, None)?;
            detections_per_scene.push(output.main_detections);
            gt_per_scene.push(scene.gt.clone());
        }
        per_task.push(TaskEval {
            task_id,
            phrase: kb.task.phrase.clone(),
            result: ap50(&detections_per_scene, &gt_per_scene),
        });
    }
    let mean_ap = if per_task.is_empty() {
        0.0
    } else {
        per_task.iter().map(|t| t.result.ap).sum::<f64>() / per_task.len() as f64
    };
    Ok(EvalResult { per_task, mean_ap })
}
