//! Cosine similarity and outlier filtering over knowledge units.

use super::{Embedding, KnowledgeBase, KnowledgeError, KnowledgeUnit};
use crate::mlcot::TaskSpec;

/// Standard cosine similarity, clamped to [-1, 1] against rounding drift.
/// Zero-norm inputs are an error (the similarity is undefined).
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, KnowledgeError> {
    if a.dim() != b.dim() {
        return Err(KnowledgeError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let norm_a = a.l2_norm();
    let norm_b = b.l2_norm();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(KnowledgeError::ZeroNorm);
    }
    let dot: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum();
    Ok((dot / (norm_a * norm_b)).clamp(-1.0, 1.0))
}

/// Per-unit maximum similarity to any *other* unit, on sentence features.
fn max_similarities(units: &[KnowledgeUnit]) -> Result<Vec<f64>, KnowledgeError> {
    let n = units.len();
    let mut best = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let sim = cosine(&units[i].sentence_feature, &units[j].sentence_feature)?;
            if sim > best[i] {
                best[i] = sim;
            }
            if sim > best[j] {
                best[j] = sim;
            }
        }
    }
    Ok(best)
}

/// Keep a unit iff its maximum similarity to the other units reaches the
/// threshold. A lone unit is always kept, and if every unit falls below the
/// threshold the single best-connected one (lowest index on ties) survives so
/// the base is never empty. Output preserves input order.
pub fn filter_outliers(
    task: TaskSpec,
    units: Vec<KnowledgeUnit>,
    threshold: f64,
    embedder_id: String,
) -> Result<KnowledgeBase, KnowledgeError> {
    if units.is_empty() {
        return Err(KnowledgeError::EmptyUnits);
    }
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(KnowledgeError::ThresholdRange(threshold));
    }
    let kept = if units.len() == 1 {
        units
    } else {
        let best = max_similarities(&units)?;
        let keep: Vec<bool> = best.iter().map(|&b| b >= threshold).collect();
        if keep.iter().any(|&k| k) {
            units
                .into_iter()
                .zip(keep)
                .filter_map(|(u, k)| k.then_some(u))
                .collect()
        } else {
            let winner = best
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| {
                    a.partial_cmp(b)
                        .unwrap()
                        .then(ib.cmp(ia))
                })
                .map(|(i, _)| i)
                .expect("non-empty");
            vec![units.into_iter().nth(winner).expect("index in range")]
        }
    };
    let kb = KnowledgeBase {
        task,
        units: kept,
        embedder_id,
        threshold,
    };
    kb.validate()?;
    Ok(kb)
}
