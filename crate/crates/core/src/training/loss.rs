//! Total loss: binary cross entropy on confidences plus L1 and GIoU box
//! terms for matched predictions, with auxiliary (selected-query) and
//! denoising branches scaled by their weights.

use crate::autodiff::{Matrix, Tape, Var};
use crate::detector::PredSet;

use super::giou::giou_var;
use super::{Assignment, GroundTruth, LossWeights};

/// Per-component loss values (weighted contributions; they sum to `total`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cl: f64,
    pub box_l1: f64,
    pub box_giou: f64,
    pub aux: f64,
    pub dn: f64,
}

/// Everything the loss needs besides the main predictions.
pub struct LossInputs<'a> {
    pub main_assignment: &'a Assignment,
    /// Auxiliary predictions (selected queries through the heads) with their
    /// own assignment.
    pub aux: Option<(&'a PredSet, &'a Assignment)>,
    /// Intermediate-layer predictions, each with its own assignment; summed
    /// into the aux component.
    pub per_layer: Vec<(&'a PredSet, Assignment)>,
    /// Denoising predictions with the known ground-truth index per query.
    pub dn: Option<(&'a PredSet, &'a [usize])>,
}

/// One matched branch: mean BCE over all predictions (matched → 1, rest →
/// 0), mean L1 and mean (1-GIoU) over matched pairs. Returns weighted
/// scalar vars (cl, l1, giou).
fn branch(
    tape: &Tape,
    preds: &PredSet,
    pairs: &[(usize, usize)],
    gt: &GroundTruth,
    weights: &LossWeights,
) -> (Var, Option<Var>, Option<Var>) {
    let n = tape.shape(preds.logits).0;
    let mut targets = Matrix::zeros((n, 1));
    for &(p, _) in pairs {
        targets[[p, 0]] = 1.0;
    }
    let bce = tape.bce_with_logits(preds.logits, targets);
    let cl = tape.scale(tape.mean_all(bce), weights.cl);
    if pairs.is_empty() {
        return (cl, None, None);
    }
    let pred_indices: Vec<usize> = pairs.iter().map(|&(p, _)| p).collect();
    let gt_boxes: Vec<[f64; 4]> = pairs.iter().map(|&(_, g)| gt.boxes[g]).collect();
    let matched = tape.gather_rows(preds.boxes, pred_indices);
    let gt_mat = Matrix::from_shape_fn((gt_boxes.len(), 4), |(i, j)| gt_boxes[i][j]);
    let gt_leaf = tape.leaf(gt_mat);
    // L1 per box is the sum over 4 coordinates; mean over matched boxes.
    let diff = tape.abs(tape.sub(matched, gt_leaf));
    let l1 = tape.scale(
        tape.sum_all(diff),
        weights.box_l1 / gt_boxes.len() as f64,
    );
    let g = giou_var(tape, matched, &gt_boxes);
    let ones = tape.leaf(Matrix::ones((gt_boxes.len(), 1)));
    let giou_term = tape.scale(tape.mean_all(tape.sub(ones, g)), weights.box_giou);
    (cl, Some(l1), Some(giou_term))
}

/// Denoising branch: every noised query reconstructs its own ground-truth
/// box (no matching, targets all positive).
fn dn_branch(
    tape: &Tape,
    preds: &PredSet,
    pairing: &[usize],
    gt: &GroundTruth,
    weights: &LossWeights,
) -> Var {
    let n = tape.shape(preds.logits).0;
    assert_eq!(n, pairing.len(), "one ground-truth index per dn query");
    let targets = Matrix::ones((n, 1));
    let bce = tape.bce_with_logits(preds.logits, targets);
    let cl = tape.scale(tape.mean_all(bce), weights.cl);
    let gt_boxes: Vec<[f64; 4]> = pairing.iter().map(|&g| gt.boxes[g]).collect();
    let gt_mat = Matrix::from_shape_fn((n, 4), |(i, j)| gt_boxes[i][j]);
    let gt_leaf = tape.leaf(gt_mat);
    let diff = tape.abs(tape.sub(preds.boxes, gt_leaf));
    let l1 = tape.scale(tape.sum_all(diff), weights.box_l1 / n as f64);
    let g = giou_var(tape, preds.boxes, &gt_boxes);
    let ones = tape.leaf(Matrix::ones((n, 1)));
    let giou_term = tape.scale(tape.mean_all(tape.sub(ones, g)), weights.box_giou);
    tape.add(tape.add(cl, l1), giou_term)
}

/// Assemble the total loss on the tape. With no ground truth the loss is
/// classification-only.
pub fn loss_total(
    tape: &Tape,
    main: &PredSet,
    inputs: &LossInputs<'_>,
    gt: &GroundTruth,
    weights: &LossWeights,
) -> (Var, LossBreakdown) {
    let (cl, l1, gterm) = branch(tape, main, &inputs.main_assignment.pairs, gt, weights);
    let mut total = cl;
    if let Some(l1) = l1 {
        total = tape.add(total, l1);
    }
    if let Some(g) = gterm {
        total = tape.add(total, g);
    }

    let mut aux_value = 0.0;
    let mut aux_terms: Vec<Var> = Vec::new();
    if let Some((aux_preds, aux_assignment)) = inputs.aux {
        let (a_cl, a_l1, a_g) = branch(tape, aux_preds, &aux_assignment.pairs, gt, weights);
        let mut a_total = a_cl;
        if let Some(v) = a_l1 {
            a_total = tape.add(a_total, v);
        }
        if let Some(v) = a_g {
            a_total = tape.add(a_total, v);
        }
        aux_terms.push(a_total);
    }
    for (preds, assignment) in &inputs.per_layer {
        let (a_cl, a_l1, a_g) = branch(tape, preds, &assignment.pairs, gt, weights);
        let mut a_total = a_cl;
        if let Some(v) = a_l1 {
            a_total = tape.add(a_total, v);
        }
        if let Some(v) = a_g {
            a_total = tape.add(a_total, v);
        }
        aux_terms.push(a_total);
    }
    if !aux_terms.is_empty() {
        let mut aux_sum = aux_terms[0];
        for term in &aux_terms[1..] {
            aux_sum = tape.add(aux_sum, *term);
        }
        let weighted = tape.scale(aux_sum, weights.aux);
        aux_value = tape.scalar_value(weighted);
        total = tape.add(total, weighted);
    }

    let mut dn_value = 0.0;
    if let Some((dn_preds, pairing)) = inputs.dn {
        if !pairing.is_empty() {
            let branch_total = dn_branch(tape, dn_preds, pairing, gt, weights);
            let weighted = tape.scale(branch_total, weights.dn);
            dn_value = tape.scalar_value(weighted);
            total = tape.add(total, weighted);
        }
    }

    let breakdown = LossBreakdown {
        total: tape.scalar_value(total),
        cl: tape.scalar_value(cl),
        box_l1: l1.map(|v| tape.scalar_value(v)).unwrap_or(0.0),
        box_giou: gterm.map(|v| tape.scalar_value(v)).unwrap_or(0.0),
        aux: aux_value,
        dn: dn_value,
    };
    (total, breakdown)
}
