//! Query generation: either knowledge-conditional selection of scene tokens
//! (the primary path) or learned query embeddings (ablation modes).

use crate::autodiff::{Matrix, Tape, Var};
use crate::knowledge::KnowledgeBase;

use super::pool::attention_pool;
use super::relevance::relevance_scores;
use super::{DetectorError, ModelParams, QueryBatch, SceneTokens, TapeModel, TaskFeature};

/// Tape-level queries plus a value snapshot.
#[derive(Debug, Clone)]
pub struct QueryVars {
    /// k×D query contents.
    pub content: Var,
    /// k×2 reference points in (0, 1).
    pub refs: Var,
    pub batch: QueryBatch,
}

fn word_matrix(kb: &KnowledgeBase, unit: usize) -> Matrix {
    let words = &kb.units[unit].word_features;
    Matrix::from_shape_fn((words.len(), words[0].dim()), |(i, j)| {
        words[i].as_slice()[j]
    })
}

fn clamp_logit(p: f64) -> f64 {
    let c = p.clamp(1e-6, 1.0 - 1e-6);
    (c / (1.0 - c)).ln()
}

fn snapshot(tape: &Tape, content: Var, refs: Var) -> (Vec<Vec<f64>>, Vec<(f64, f64)>) {
    let content_values = tape.value(content);
    let ref_values = tape.value(refs);
    let queries = (0..content_values.nrows())
        .map(|i| content_values.row(i).to_vec())
        .collect();
    let reference_points = (0..ref_values.nrows())
        .map(|i| (ref_values[[i, 0]], ref_values[[i, 1]]))
        .collect();
    (queries, reference_points)
}

/// Knowledge-conditional query generation: select the k tokens with the
/// largest relevance scores (ties to the lowest token index), enhance each
/// with attention-pooled word features of its argmax unit, and predict a
/// reference point anchored at the source token's position.
pub fn generate_queries(
    tape: &Tape,
    tokens: &SceneTokens,
    tokens_var: Var,
    task: &TaskFeature,
    kb: &KnowledgeBase,
    k: usize,
    params: &ModelParams,
    model: &TapeModel,
) -> Result<QueryVars, DetectorError> {
    if k > tokens.len() {
        return Err(DetectorError::TooManyQueries {
            k,
            tokens: tokens.len(),
        });
    }
    let relevance = relevance_scores(tokens, task, kb, params)?;
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    order.sort_by(|&a, &b| {
        relevance.best[b]
            .partial_cmp(&relevance.best[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let selected: Vec<usize> = order.into_iter().take(k).collect();

    let gathered = tape.gather_rows(tokens_var, selected.clone());
    let pooled: Vec<Var> = selected
        .iter()
        .enumerate()
        .map(|(rank, &token)| {
            let unit = relevance.unit_index[token];
            let words = tape.leaf(word_matrix(kb, unit));
            let query_row = tape.slice_rows(gathered, rank, 1);
            attention_pool(tape, query_row, words, model)
        })
        .collect();
    let pooled_all = tape.concat_rows(&pooled);
    let content = tape.add(gathered, pooled_all);

    // Reference head anchored at the source token position: the selected
    // features' spatial locations are the spatial priors.
    let anchor = Matrix::from_shape_fn((k, 2), |(i, j)| {
        let (x, y) = tokens.position(selected[i]);
        clamp_logit(if j == 0 { x } else { y })
    });
    let head = tape.add_row(tape.matmul(content, model.ref_w), model.ref_b);
    let refs = tape.sigmoid(tape.add_const(head, anchor));

    let (queries, reference_points) = snapshot(tape, content, refs);
    Ok(QueryVars {
        content,
        refs,
        batch: QueryBatch {
            queries,
            reference_points,
            source_indices: selected.iter().map(|&i| Some(i)).collect(),
            unit_indices: selected
                .iter()
                .map(|&i| Some(relevance.unit_index[i]))
                .collect(),
        },
    })
}

/// Learned queries: plain embeddings (`kb = None`) or embeddings with
/// knowledge-unit sentence features cycled on top (`kb = Some`). Reference
/// points come from the reference head alone.
pub fn learned_queries(
    tape: &Tape,
    kb: Option<&KnowledgeBase>,
    k: usize,
    model: &TapeModel,
) -> QueryVars {
    let content = if let Some(kb) = kb {
        let d = tape.shape(model.query_embeds).1;
        let n = kb.len();
        let knowledge = Matrix::from_shape_fn((k, d), |(i, j)| {
            kb.units[i % n].sentence_feature.as_slice()[j]
        });
        tape.add_const(model.query_embeds, knowledge)
    } else {
        // Keep the embeddings a derived node so slicing stays uniform.
        tape.scale(model.query_embeds, 1.0)
    };
    let content = if k < tape.shape(content).0 {
        tape.slice_rows(content, 0, k)
    } else {
        content
    };
    let head = tape.add_row(tape.matmul(content, model.ref_w), model.ref_b);
    let refs = tape.sigmoid(head);
    let (queries, reference_points) = snapshot(tape, content, refs);
    let unit_indices = (0..k)
        .map(|i| kb.map(|b| i % b.len()))
        .collect();
    QueryVars {
        content,
        refs,
        batch: QueryBatch {
            queries,
            reference_points,
            source_indices: vec![None; k],
            unit_indices,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::knowledge::{Embedding, KnowledgeUnit};
    use crate::mlcot::{KnowledgeUnitDraft, TaskSpec};

    fn unit(values: Vec<f64>) -> KnowledgeUnit {
        KnowledgeUnit {
            text: "u".to_string(),
            sentence_feature: Embedding(values.clone()),
            word_features: vec![Embedding(values)],
            provenance: KnowledgeUnitDraft {
                attribute_phrases: vec!["u".to_string()],
                source_object: "o".to_string(),
                source_rationales: vec![],
            },
        }
    }

    fn setup(d: usize) -> (ModelParams, SceneTokens, TaskFeature, KnowledgeBase) {
        let config = ModelConfig {
            d_model: d,
            heads: 1,
            ffn_dim: d,
            decoder_layers: 1,
            num_queries: 4,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config, 0);
        let mut rng = crate::rng::rng_from(3);
        let features = Matrix::from_shape_fn((4, d), |_| crate::rng::standard_normal(&mut rng));
        let tokens = SceneTokens::new(features, (2, 2)).unwrap();
        let task = TaskFeature {
            vector: Embedding(vec![0.0; d]),
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
        (params, tokens, task, kb)
    }

    #[test]
    fn k_equals_one_selects_argmax_token() {
        let (params, tokens, task, kb) = setup(4);
        let relevance = relevance_scores(&tokens, &task, &kb, &params).unwrap();
        let best_token = (0..4)
            .max_by(|&a, &b| relevance.best[a].partial_cmp(&relevance.best[b]).unwrap())
            .unwrap();
        let tape = Tape::new();
        let model = params.to_tape(&tape);
        let tokens_var = tape.leaf(tokens.features.clone());
        let q = generate_queries(&tape, &tokens, tokens_var, &task, &kb, 1, &params, &model)
            .unwrap();
        assert_eq!(q.batch.source_indices, vec![Some(best_token)]);
    }

    #[test]
    fn k_equals_token_count_orders_by_descending_relevance() {
        let (params, tokens, task, kb) = setup(4);
        let relevance = relevance_scores(&tokens, &task, &kb, &params).unwrap();
        let tape = Tape::new();
        let model = params.to_tape(&tape);
        let tokens_var = tape.leaf(tokens.features.clone());
        let q = generate_queries(&tape, &tokens, tokens_var, &task, &kb, 4, &params, &model)
            .unwrap();
        let selected: Vec<usize> = q.batch.source_indices.iter().map(|s| s.unwrap()).collect();
        for w in selected.windows(2) {
            assert!(relevance.best[w[0]] >= relevance.best[w[1]]);
        }
        let mut sorted = selected.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3], "source indices distinct");
    }

    #[test]
    fn k_greater_than_tokens_is_error() {
        let (params, tokens, task, kb) = setup(4);
        let tape = Tape::new();
        let model = params.to_tape(&tape);
        let tokens_var = tape.leaf(tokens.features.clone());
        assert!(matches!(
            generate_queries(&tape, &tokens, tokens_var, &task, &kb, 5, &params, &model),
            Err(DetectorError::TooManyQueries { .. })
        ));
    }

    #[test]
    fn positive_scaling_of_relevance_keeps_selection() {
        // Top-k on r and on 3.7*r must pick the same tokens in the same
        // order; verified through the public api by scaling every unit
        // sentence feature, which scales no cosine at all — so instead scale
        // the comparison directly on the relevance values.
        let (params, tokens, task, kb) = setup(4);
        let relevance = relevance_scores(&tokens, &task, &kb, &params).unwrap();
        let top = |r: &[f64]| {
            let mut order: Vec<usize> = (0..r.len()).collect();
            order.sort_by(|&a, &b| r[b].partial_cmp(&r[a]).unwrap().then(a.cmp(&b)));
            order.truncate(2);
            order
        };
        let scaled: Vec<f64> = relevance.best.iter().map(|r| r * 3.7).collect();
        assert_eq!(top(&relevance.best), top(&scaled));
    }

    #[test]
    fn unit_permutation_leaves_queries_unchanged() {
        let (params, tokens, task, kb) = setup(4);
        let run = |base: &KnowledgeBase| {
            let tape = Tape::new();
            let model = params.to_tape(&tape);
            let tokens_var = tape.leaf(tokens.features.clone());
            generate_queries(&tape, &tokens, tokens_var, &task, base, 3, &params, &model)
                .unwrap()
                .batch
        };
        let forward = run(&kb);
        let mut permuted = kb.clone();
        permuted.units.reverse();
        let reversed = run(&permuted);
        assert_eq!(forward.queries, reversed.queries);
        assert_eq!(forward.reference_points, reversed.reference_points);
        assert_eq!(forward.source_indices, reversed.source_indices);
        // d_i permutes consistently: unit j becomes unit N-1-j.
        let n = kb.len();
        for (a, b) in forward.unit_indices.iter().zip(&reversed.unit_indices) {
            assert_eq!(a.unwrap(), n - 1 - b.unwrap());
        }
    }

    #[test]
    fn zero_ref_head_anchors_at_source_positions() {
        let (params, tokens, task, kb) = setup(4);
        let tape = Tape::new();
        let model = params.to_tape(&tape);
        let tokens_var = tape.leaf(tokens.features.clone());
        let q = generate_queries(&tape, &tokens, tokens_var, &task, &kb, 4, &params, &model)
            .unwrap();
        for (refpt, src) in q.batch.reference_points.iter().zip(&q.batch.source_indices) {
            let (x, y) = tokens.position(src.unwrap());
            assert!((refpt.0 - x).abs() < 1e-9, "{} vs {}", refpt.0, x);
            assert!((refpt.1 - y).abs() < 1e-9);
        }
    }

    #[test]
    fn learned_queries_cycle_knowledge_units() {
        let (params, _tokens, _task, kb) = setup(4);
        let tape = Tape::new();
        let model = params.to_tape(&tape);
        let q = learned_queries(&tape, Some(&kb), 4, &model);
        assert_eq!(
            q.batch.unit_indices,
            vec![Some(0), Some(1), Some(0), Some(1)]
        );
        let plain = learned_queries(&tape, None, 4, &model);
        assert_eq!(plain.batch.unit_indices, vec![None; 4]);
        assert_eq!(plain.batch.source_indices, vec![None; 4]);
    }
}
