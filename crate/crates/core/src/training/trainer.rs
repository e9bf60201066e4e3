//! The optimization loop: seeded, resumable, single writer of parameters.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::config::RunConfig;
use crate::detector::{forward, ModelParams, SceneTokens, TaskFeature};
use crate::knowledge::KnowledgeBase;
use crate::rng;

use super::loss::{loss_total, LossInputs};
use super::matching::{hungarian_match, matching_cost};
use super::optim::AdamW;
use super::{denoise::make_noised_queries, Assignment, GroundTruth, TrainError};

/// One training example: tokens plus ground truth for one task's scene.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub task_id: u32,
    pub tokens: SceneTokens,
    pub gt: GroundTruth,
    /// Free-form identifier used in diagnostics (split/index/seed).
    pub descriptor: String,
}

#[derive(Debug, Clone, Default)]
pub struct TrainDataset {
    pub scenes: Vec<TrainScene>,
}

/// Per-iteration loss components, one JSON line each in the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub loss_total: f64,
    pub loss_cl: f64,
    pub loss_box_l1: f64,
    pub loss_box_giou: f64,
    pub loss_aux: f64,
    pub loss_dn: f64,
}

pub struct TrainArtifacts {
    pub params: ModelParams,
    pub optimizer: AdamW,
    pub metrics: Vec<MetricsRecord>,
    pub iterations_run: usize,
}

fn assign(
    detections: &[crate::detector::Detection],
    gt: &GroundTruth,
    weights: &super::LossWeights,
) -> Assignment {
    if gt.is_empty() || detections.is_empty() {
        return Assignment::empty();
    }
    let cost: Vec<Vec<f64>> = detections
        .iter()
        .map(|d| {
            gt.boxes
                .iter()
                .map(|g| matching_cost(d, g, weights))
                .collect()
        })
        .collect();
    hungarian_match(&cost)
}

/// Run (or resume) training. Deterministic for a fixed seed and config: the
/// batch sampler and the box noise derive their randomness from
/// (seed, iteration), so a resumed run reproduces an uninterrupted one.
pub fn train_loop(
    dataset: &TrainDataset,
    kbs: &BTreeMap<u32, KnowledgeBase>,
    task_features: &BTreeMap<u32, TaskFeature>,
    config: &RunConfig,
    resume: Option<(ModelParams, AdamW, usize)>,
    mut on_metrics: impl FnMut(&MetricsRecord),
) -> Result<TrainArtifacts, TrainError> {
    if dataset.scenes.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for scene in &dataset.scenes {
        if !kbs.contains_key(&scene.task_id) || !task_features.contains_key(&scene.task_id) {
            return Err(TrainError::TaskMismatch(format!(
                "scene {} references task {} with no knowledge base",
                scene.descriptor, scene.task_id
            )));
        }
    }

    let train_config = &config.training;
    let weights = &train_config.weights;
    let (mut params, mut optimizer, start_iter) = match resume {
        Some((p, o, iter)) => (p, o, iter),
        None => (
            ModelParams::init(&config.model, train_config.seed),
            AdamW::new(train_config.learning_rate, train_config.weight_decay),
            0,
        ),
    };

    let mut metrics = Vec::with_capacity(train_config.iterations.saturating_sub(start_iter));
    let denoising_enabled = weights.dn > 0.0 && train_config.noise.groups > 0;

    for iteration in start_iter..train_config.iterations {
        let mut iter_rng = rng::rng_from(rng::derive_seed(
            train_config.seed,
            &[0x6261_7463, iteration as u64],
        ));
        let mut grad_acc: HashMap<String, Matrix> = HashMap::new();
        let mut sums = MetricsRecord {
            iter: iteration,
            loss_total: 0.0,
            loss_cl: 0.0,
            loss_box_l1: 0.0,
            loss_box_giou: 0.0,
            loss_aux: 0.0,
            loss_dn: 0.0,
        };
        let mut batch_descriptors = Vec::with_capacity(train_config.batch_size);

        for slot in 0..train_config.batch_size {
            let scene_index = rand::Rng::gen_range(&mut iter_rng, 0..dataset.scenes.len());
            let scene = &dataset.scenes[scene_index];
            batch_descriptors.push(scene.descriptor.clone());
            let kb = &kbs[&scene.task_id];
            let task_feature = &task_features[&scene.task_id];

            let noised = if denoising_enabled && !scene.gt.is_empty() {
                let mut noise_rng = rng::rng_from(rng::derive_seed(
                    train_config.seed,
                    &[0x6e6f_6973, iteration as u64, slot as u64],
                ));
                make_noised_queries(&scene.gt, &scene.tokens, &train_config.noise, &mut noise_rng)
            } else {
                None
            };
            let dn_input = noised.as_ref().map(|n| n.dn_input());

            let output = forward(
                &scene.tokens,
                task_feature,
                kb,
                &params,
                &config.model,
                dn_input.as_ref(),
            )?;

            let main_assignment = assign(&output.main_detections, &scene.gt, weights);
            let aux_assignment = assign(&output.aux_detections, &scene.gt, weights);
            let per_layer: Vec<_> = output
                .per_layer
                .iter()
                .map(|preds| {
                    let detections = crate::detector::to_detections(&output.tape, preds);
                    (preds, assign(&detections, &scene.gt, weights))
                })
                .collect();
            let pairing: Vec<usize> = noised
                .as_ref()
                .map(|n| n.gt_index.clone())
                .unwrap_or_default();
            let inputs = LossInputs {
                main_assignment: &main_assignment,
                aux: Some((&output.aux, &aux_assignment)),
                per_layer,
                dn: output.dn.as_ref().map(|d| (&d.preds, pairing.as_slice())),
            };
            let (loss, breakdown) =
                loss_total(&output.tape, &output.main, &inputs, &scene.gt, weights);

            if !breakdown.total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    iteration,
                    diagnostic: format!(
                        "scenes {:?}, components {:?}",
                        batch_descriptors, breakdown
                    ),
                });
            }

            let grads = output.tape.backward(loss);
            let scale = 1.0 / train_config.batch_size as f64;
            for (name, grad) in output.model.collect_grads(&output.tape, &grads) {
                grad_acc
                    .entry(name)
                    .and_modify(|acc| {
                        acc.zip_mut_with(&grad, |a, g| *a += g * scale);
                    })
                    .or_insert_with(|| &grad * scale);
            }
            sums.loss_total += breakdown.total * scale;
            sums.loss_cl += breakdown.cl * scale;
            sums.loss_box_l1 += breakdown.box_l1 * scale;
            sums.loss_box_giou += breakdown.box_giou * scale;
            sums.loss_aux += breakdown.aux * scale;
            sums.loss_dn += breakdown.dn * scale;
        }

        optimizer.step(&mut params, &grad_acc);
        on_metrics(&sums);
        metrics.push(sums);
    }

    Ok(TrainArtifacts {
        params,
        optimizer,
        metrics,
        iterations_run: train_config.iterations.saturating_sub(start_iter),
    })
}
