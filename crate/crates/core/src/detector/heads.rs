//! Prediction heads: boxes regressed as logit-space offsets anchored at the
//! query's reference point, confidences from a linear head.

use crate::autodiff::{Matrix, Tape, Var};

use super::TapeModel;

/// Tape-level predictions for one query set.
#[derive(Debug, Clone, Copy)]
pub struct PredSet {
    /// n×4 boxes, (cx, cy, w, h), all in (0, 1) by sigmoid bounding.
    pub boxes: Var,
    /// n×1 confidence logits.
    pub logits: Var,
}

/// Apply the box and confidence heads to embeddings (n×D) with one reference
/// point (n×2) per embedding. A zero box head yields a box centered exactly
/// on the reference point with the prior size.
pub fn predict_heads(
    tape: &Tape,
    embeddings: Var,
    refs: Var,
    model: &TapeModel,
    size_prior: f64,
) -> PredSet {
    let n = tape.shape(embeddings).0;
    debug_assert_eq!(tape.shape(refs), (n, 2), "one reference point per embedding");

    let hidden = tape.relu(tape.add_row(tape.matmul(embeddings, model.box_w1), model.box_b1));
    let box_local = tape.add_row(tape.matmul(hidden, model.box_w2), model.box_b2);

    let ref_logit = tape.logit(refs);
    let prior = size_prior.clamp(1e-6, 1.0 - 1e-6);
    let wh_prior = tape.leaf(Matrix::from_elem((n, 2), (prior / (1.0 - prior)).ln()));
    let anchor = tape.concat_cols(&[ref_logit, wh_prior]);
    let boxes = tape.sigmoid(tape.add(box_local, anchor));

    let logits = tape.add_row(tape.matmul(embeddings, model.cls_w), model.cls_b);
    PredSet { boxes, logits }
}

/// Snapshot tape predictions into plain detections.
pub fn to_detections(tape: &Tape, preds: &PredSet) -> Vec<super::Detection> {
    let boxes = tape.value(preds.boxes);
    let logits = tape.value(preds.logits);
    (0..boxes.nrows())
        .map(|i| super::Detection {
            box_cxcywh: [boxes[[i, 0]], boxes[[i, 1]], boxes[[i, 2]], boxes[[i, 3]]],
            confidence: 1.0 / (1.0 + (-logits[[i, 0]]).exp()),
        })
        .collect()
}
