//! Full forward pass: relevance → query generation → decoding → heads, with
//! an optional denoising branch isolated behind a block-diagonal attention
//! mask. The denoising branch never runs at inference, and attaching it
//! cannot change the main branch even at the bit level.

use crate::autodiff::{posenc2d, Matrix, Tape};
use crate::config::{ModelConfig, QueryMode};
use crate::knowledge::KnowledgeBase;

use super::decoder::{decode, group_mask};
use super::heads::{predict_heads, to_detections, PredSet};
use super::pool::attention_pool;
use super::queries::{generate_queries, learned_queries, QueryVars};
use super::relevance::relevance_of_features;
use super::{Detection, DetectorError, ModelParams, QueryBatch, SceneTokens, TapeModel, TaskFeature};

/// Noised-box queries for the training-only denoising branch.
#[derive(Debug, Clone)]
pub struct DnInput {
    /// (groups·M)×D noised-box visual features.
    pub features: Matrix,
    /// (groups·M)×2 noised centers (the denoising reference points).
    pub centers: Matrix,
    /// Query count per denoising group, for mask isolation.
    pub group_sizes: Vec<usize>,
}

pub struct DnOutput {
    pub preds: PredSet,
    /// Knowledge unit looked up per noised query (d_m).
    pub unit_indices: Vec<usize>,
    pub detections: Vec<Detection>,
}

pub struct ForwardOutput {
    pub tape: Tape,
    pub model: TapeModel,
    pub main: PredSet,
    pub aux: PredSet,
    /// Intermediate-layer predictions for the config-gated per-layer
    /// supervision; empty unless enabled.
    pub per_layer: Vec<PredSet>,
    pub query_batch: QueryBatch,
    pub main_detections: Vec<Detection>,
    pub aux_detections: Vec<Detection>,
    pub dn: Option<DnOutput>,
}

pub fn forward(
    tokens: &SceneTokens,
    task: &TaskFeature,
    kb: &KnowledgeBase,
    params: &ModelParams,
    config: &ModelConfig,
    dn: Option<&DnInput>,
) -> Result<ForwardOutput, DetectorError> {
    let d = config.d_model;
    if tokens.dim() != d {
        return Err(DetectorError::DimensionMismatch {
            what: "scene token dimension vs model",
            expected: d,
            got: tokens.dim(),
        });
    }
    if kb.dim() != d {
        return Err(DetectorError::DimensionMismatch {
            what: "knowledge base dimension vs model",
            expected: d,
            got: kb.dim(),
        });
    }
    let feats = d / 4;
    let k = config.num_queries;

    let tape = Tape::new();
    let model = params.to_tape(&tape);
    let tokens_var = tape.leaf(tokens.features.clone());
    let token_pos = tape.leaf(posenc2d(&tokens.positions, feats));

    let queries: QueryVars = match config.query_mode {
        QueryMode::KnowledgeSelect => {
            generate_queries(&tape, tokens, tokens_var, task, kb, k, params, &model)?
        }
        QueryMode::KnowledgeInit => learned_queries(&tape, Some(kb), k, &model),
        QueryMode::RandomInit => learned_queries(&tape, None, k, &model),
    };

    // Assemble the decoder input: main queries first, then any denoising
    // groups, isolated by the attention mask.
    let (content, refs, mask, dn_meta) = if let Some(dn) = dn {
        let dn_count: usize = dn.group_sizes.iter().sum();
        assert_eq!(dn.features.nrows(), dn_count, "dn group sizes vs features");
        let relevance = relevance_of_features(&dn.features, task, kb, params)?;
        let dn_feats = tape.leaf(dn.features.clone());
        let pooled: Vec<_> = (0..dn_count)
            .map(|m| {
                let unit = relevance.unit_index[m];
                let words = {
                    let unit_words = &kb.units[unit].word_features;
                    tape.leaf(Matrix::from_shape_fn(
                        (unit_words.len(), d),
                        |(i, j)| unit_words[i].as_slice()[j],
                    ))
                };
                let row = tape.slice_rows(dn_feats, m, 1);
                attention_pool(&tape, row, words, &model)
            })
            .collect();
        let knowledge = tape.concat_rows(&pooled);
        let dn_content = tape.add(dn_feats, knowledge);
        let dn_refs = tape.leaf(dn.centers.clone());
        let content = tape.concat_rows(&[queries.content, dn_content]);
        let refs = tape.concat_rows(&[queries.refs, dn_refs]);
        let mut sizes = vec![k];
        sizes.extend_from_slice(&dn.group_sizes);
        (
            content,
            refs,
            Some(group_mask(&sizes)),
            Some((dn_count, dn_refs, relevance.unit_index)),
        )
    } else {
        (queries.content, queries.refs, None, None)
    };

    let query_pos = tape.posenc2d(refs, feats);
    let outputs = decode(
        &tape,
        content,
        query_pos,
        tokens_var,
        token_pos,
        &model,
        mask.as_ref(),
    );
    let final_out = *outputs.last().expect("decode returns at least one output");

    let main_emb = if dn_meta.is_some() {
        tape.slice_rows(final_out, 0, k)
    } else {
        final_out
    };
    let main = predict_heads(&tape, main_emb, queries.refs, &model, config.box_size_prior);
    // Selected queries go straight through the same heads for the auxiliary
    // supervision of the top-k selection.
    let aux = predict_heads(
        &tape,
        queries.content,
        queries.refs,
        &model,
        config.box_size_prior,
    );

    let per_layer = if config.per_layer_aux && outputs.len() > 1 {
        outputs[..outputs.len() - 1]
            .iter()
            .map(|&layer_out| {
                let emb = if dn_meta.is_some() {
                    tape.slice_rows(layer_out, 0, k)
                } else {
                    layer_out
                };
                predict_heads(&tape, emb, queries.refs, &model, config.box_size_prior)
            })
            .collect()
    } else {
        Vec::new()
    };

    let dn_output = dn_meta.map(|(dn_count, dn_refs, unit_indices)| {
        let emb = tape.slice_rows(final_out, k, dn_count);
        let preds = predict_heads(&tape, emb, dn_refs, &model, config.box_size_prior);
        let detections = to_detections(&tape, &preds);
        DnOutput {
            preds,
            unit_indices,
            detections,
        }
    });

    let main_detections = to_detections(&tape, &main);
    let aux_detections = to_detections(&tape, &aux);
    Ok(ForwardOutput {
        tape,
        model,
        main,
        aux,
        per_layer,
        query_batch: queries.batch,
        main_detections,
        aux_detections,
        dn: dn_output,
    })
}

/// Inference: forward without denoising, keeping detections at or above the
/// confidence threshold. An empty result is a valid answer.
pub fn infer(
    tokens: &SceneTokens,
    task: &TaskFeature,
    kb: &KnowledgeBase,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<Detection>, DetectorError> {
    let output = forward(tokens, task, kb, params, config, None)?;
    Ok(output
        .main_detections
        .into_iter()
        .filter(|d| d.confidence >= config.score_threshold)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{Embedding, KnowledgeUnit};
    use crate::mlcot::{KnowledgeUnitDraft, TaskSpec};

    fn unit(values: Vec<f64>) -> KnowledgeUnit {
        KnowledgeUnit {
            text: "u".to_string(),
            sentence_feature: Embedding(values.clone()),
            word_features: vec![Embedding(values.clone()), Embedding(values)],
            provenance: KnowledgeUnitDraft {
                attribute_phrases: vec!["u".to_string()],
                source_object: "o".to_string(),
                source_rationales: vec![],
            },
        }
    }

    fn setup() -> (SceneTokens, TaskFeature, KnowledgeBase, ModelParams, ModelConfig) {
        let d = 8;
        let config = ModelConfig {
            d_model: d,
            decoder_layers: 2,
            heads: 2,
            ffn_dim: 16,
            num_queries: 3,
            ..ModelConfig::default()
        };
        let mut rng = crate::rng::rng_from(21);
        let features = Matrix::from_shape_fn((9, d), |_| crate::rng::standard_normal(&mut rng));
        let tokens = SceneTokens::new(features, (3, 3)).unwrap();
        let task = TaskFeature {
            vector: Embedding(vec![0.1; d]),
        };
        let kb = KnowledgeBase {
            task: TaskSpec::new(0, "t"),
            units: vec![
                unit((0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()),
                unit((0..d).map(|i| if i == 1 { 1.0 } else { 0.0 }).collect()),
            ],
            embedder_id: "test".to_string(),
            threshold: 0.0,
        };
        let params = ModelParams::init(&config, 17);
        (tokens, task, kb, params, config)
    }

    #[test]
    fn forward_is_deterministic() {
        let (tokens, task, kb, params, config) = setup();
        let a = forward(&tokens, &task, &kb, &params, &config, None).unwrap();
        let b = forward(&tokens, &task, &kb, &params, &config, None).unwrap();
        assert_eq!(a.main_detections, b.main_detections);
        assert_eq!(a.aux_detections, b.aux_detections);
        assert_eq!(a.query_batch, b.query_batch);
    }

    #[test]
    fn one_query_yields_at_most_one_detection() {
        let (tokens, task, kb, params, mut config) = setup();
        config.num_queries = 1;
        let detections = infer(&tokens, &task, &kb, &params, &config).unwrap();
        assert!(detections.len() <= 1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (tokens, task, kb, params, mut config) = setup();
        config.d_model = 12;
        assert!(matches!(
            forward(&tokens, &task, &kb, &params, &config, None),
            Err(DetectorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn denoising_branch_leaves_main_outputs_bit_identical() {
        let (tokens, task, kb, params, config) = setup();
        let without = forward(&tokens, &task, &kb, &params, &config, None).unwrap();
        let dn = DnInput {
            features: Matrix::from_shape_fn((4, 8), |(i, j)| ((i + j) as f64 * 0.37).sin()),
            centers: Matrix::from_shape_fn((4, 2), |(i, j)| 0.2 + 0.15 * (i + j) as f64),
            group_sizes: vec![2, 2],
        };
        let with = forward(&tokens, &task, &kb, &params, &config, Some(&dn)).unwrap();
        assert_eq!(without.main_detections.len(), with.main_detections.len());
        for (a, b) in without
            .main_detections
            .iter()
            .zip(&with.main_detections)
        {
            for c in 0..4 {
                assert_eq!(a.box_cxcywh[c].to_bits(), b.box_cxcywh[c].to_bits());
            }
            assert_eq!(a.confidence.to_bits(), b.confidence.to_bits());
        }
        assert!(with.dn.is_some());
        assert_eq!(with.dn.as_ref().unwrap().detections.len(), 4);
    }

    #[test]
    fn learned_query_modes_run() {
        let (tokens, task, kb, params, mut config) = setup();
        for mode in [QueryMode::RandomInit, QueryMode::KnowledgeInit] {
            config.query_mode = mode;
            let out = forward(&tokens, &task, &kb, &params, &config, None).unwrap();
            assert_eq!(out.main_detections.len(), 3);
            assert!(out.query_batch.source_indices.iter().all(|s| s.is_none()));
        }
    }

    #[test]
    fn per_layer_aux_collects_intermediate_heads() {
        let (tokens, task, kb, params, mut config) = setup();
        config.per_layer_aux = true;
        let out = forward(&tokens, &task, &kb, &params, &config, None).unwrap();
        assert_eq!(out.per_layer.len(), config.decoder_layers - 1);
    }
}
