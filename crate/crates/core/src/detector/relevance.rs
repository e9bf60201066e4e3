//! Per-token relevance against the knowledge base: each token feature is
//! fused with the task feature through the two learned projections, then
//! scored by cosine against every unit's sentence feature. A token's
//! relevance is its best score, and the argmax unit is what later enhances
//! the query built from it.

use crate::autodiff::{matmul, Matrix};
use crate::knowledge::KnowledgeBase;

use super::{DetectorError, ModelParams, SceneTokens, TaskFeature};

#[derive(Debug, Clone)]
pub struct Relevance {
    /// s[i][j]: similarity of token i to unit j.
    pub scores: Matrix,
    /// r[i] = max_j s[i][j]; -1 for tokens with a zero-norm fused feature.
    pub best: Vec<f64>,
    /// d[i] = argmax_j s[i][j], ties to the lowest unit index.
    pub unit_index: Vec<usize>,
}

/// Fused features for arbitrary rows (tokens or noised-box features).
fn fuse(features: &Matrix, task: &TaskFeature, params: &ModelParams) -> Matrix {
    let mut fused = matmul(features, &params.fc_v_w);
    let task_row = Matrix::from_shape_fn((1, task.dim()), |(_, j)| task.vector.0[j]);
    let task_proj = matmul(&task_row, &params.fc_t_w);
    for mut row in fused.rows_mut() {
        for (j, value) in row.iter_mut().enumerate() {
            *value += params.fc_v_b[[0, j]] + task_proj[[0, j]] + params.fc_t_b[[0, j]];
        }
    }
    fused
}

/// Relevance of arbitrary feature rows; shared by token scoring and the
/// denoising knowledge lookup.
pub(crate) fn relevance_of_features(
    features: &Matrix,
    task: &TaskFeature,
    kb: &KnowledgeBase,
    params: &ModelParams,
) -> Result<Relevance, DetectorError> {
    if kb.is_empty() {
        return Err(DetectorError::EmptyKnowledge);
    }
    let d = params.d_model;
    if features.ncols() != d {
        return Err(DetectorError::DimensionMismatch {
            what: "feature dimension vs model",
            expected: d,
            got: features.ncols(),
        });
    }
    if kb.dim() != d {
        return Err(DetectorError::DimensionMismatch {
            what: "knowledge base dimension vs model",
            expected: d,
            got: kb.dim(),
        });
    }
    if task.dim() != d {
        return Err(DetectorError::DimensionMismatch {
            what: "task feature dimension vs model",
            expected: d,
            got: task.dim(),
        });
    }

    let fused = fuse(features, task, params);
    let n = fused.nrows();
    let units = kb.len();
    // Unit sentence features, row-normalized.
    let mut unit_rows = Matrix::zeros((units, d));
    for (j, unit) in kb.units.iter().enumerate() {
        let norm = unit.sentence_feature.l2_norm();
        if norm == 0.0 {
            return Err(DetectorError::Knowledge(
                crate::knowledge::KnowledgeError::ZeroNorm,
            ));
        }
        for (c, v) in unit.sentence_feature.as_slice().iter().enumerate() {
            unit_rows[[j, c]] = v / norm;
        }
    }

    let mut scores = Matrix::zeros((n, units));
    let mut best = vec![-1.0; n];
    let mut unit_index = vec![0usize; n];
    for i in 0..n {
        let row = fused.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Undefined similarity: never selected instead of erroring.
            for j in 0..units {
                scores[[i, j]] = -1.0;
            }
            continue;
        }
        let mut best_score = f64::NEG_INFINITY;
        let mut best_unit = 0;
        for j in 0..units {
            let dot: f64 = row.iter().zip(unit_rows.row(j)).map(|(a, b)| a * b).sum();
            let s = (dot / norm).clamp(-1.0, 1.0);
            scores[[i, j]] = s;
            if s > best_score {
                best_score = s;
                best_unit = j;
            }
        }
        best[i] = best_score;
        unit_index[i] = best_unit;
    }
    Ok(Relevance {
        scores,
        best,
        unit_index,
    })
}

/// Relevance of every scene token.
pub fn relevance_scores(
    tokens: &SceneTokens,
    task: &TaskFeature,
    kb: &KnowledgeBase,
    params: &ModelParams,
) -> Result<Relevance, DetectorError> {
    relevance_of_features(&tokens.features, task, kb, params)
}
