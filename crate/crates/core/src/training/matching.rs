//! DETR-style matching cost and globally optimal bipartite assignment.

use super::giou::giou;
use super::{Assignment, LossWeights};
use crate::detector::Detection;

/// Matching cost between one prediction and one ground-truth box:
/// `cl·(−confidence) + box_l1·‖Δbox‖₁ + box_giou·(1 − GIoU)`.
pub fn matching_cost(pred: &Detection, gt: &[f64; 4], weights: &LossWeights) -> f64 {
    let l1: f64 = pred
        .box_cxcywh
        .iter()
        .zip(gt.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let g = giou(&pred.box_cxcywh, gt).expect("valid boxes by construction");
    weights.cl * (-pred.confidence) + weights.box_l1 * l1 + weights.box_giou * (1.0 - g)
}

/// Shortest-augmenting-path Hungarian for `rows <= cols`, returning the
/// matched column per row.
fn hungarian_core(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if matched_row[j] != 0 {
            row_to_col[matched_row[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Minimum total cost of a complete assignment (min(rows, cols) pairs).
fn optimal_total(cost: &[Vec<f64>]) -> f64 {
    if cost.is_empty() || cost[0].is_empty() {
        return 0.0;
    }
    let rows = cost.len();
    let cols = cost[0].len();
    if rows <= cols {
        hungarian_core(cost)
            .iter()
            .enumerate()
            .map(|(r, &c)| cost[r][c])
            .sum()
    } else {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| cost[r][c]).collect())
            .collect();
        hungarian_core(&transposed)
            .iter()
            .enumerate()
            .map(|(c, &r)| cost[r][c])
            .sum()
    }
}

fn cost_tolerance(reference: f64) -> f64 {
    1e-9 * reference.abs().max(1.0)
}

/// Globally cost-minimal one-to-one assignment over a `preds × gts` cost
/// matrix. Among all minimum-cost assignments the lexicographically smallest
/// pair list (sorted by prediction index) is returned, so ties break
/// deterministically.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Assignment {
    let preds = cost.len();
    let gts = if preds == 0 { 0 } else { cost[0].len() };
    if preds == 0 || gts == 0 {
        return Assignment::empty();
    }
    for row in cost {
        assert_eq!(row.len(), gts, "ragged cost matrix");
        assert!(row.iter().all(|c| c.is_finite()), "non-finite cost");
    }

    let target_total = optimal_total(cost);
    let pairs_needed = preds.min(gts);

    // Fix pairs greedily in prediction order; each candidate is validated by
    // solving the remaining subproblem and checking the total is preserved.
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(pairs_needed);
    let mut used_gts = vec![false; gts];
    let mut fixed_cost = 0.0;
    for pred in 0..preds {
        if pairs.len() == pairs_needed {
            break;
        }
        let remaining_preds: Vec<usize> = (pred + 1..preds).collect();
        let remaining_after = |skip_gt: Option<usize>| -> Vec<Vec<f64>> {
            let gt_indices: Vec<usize> = (0..gts)
                .filter(|&g| !used_gts[g] && Some(g) != skip_gt)
                .collect();
            remaining_preds
                .iter()
                .map(|&p| gt_indices.iter().map(|&g| cost[p][g]).collect())
                .collect()
        };
        let mut matched = false;
        for gt in 0..gts {
            if used_gts[gt] {
                continue;
            }
            let sub = remaining_after(Some(gt));
            let sub_pairs = remaining_preds.len().min(gts - (pairs.len() + 1));
            // The completion must still produce a full-size assignment.
            if pairs.len() + 1 + sub_pairs < pairs_needed {
                continue;
            }
            let total = fixed_cost + cost[pred][gt] + optimal_total(&sub);
            if (total - target_total).abs() <= cost_tolerance(target_total) {
                pairs.push((pred, gt));
                used_gts[gt] = true;
                fixed_cost += cost[pred][gt];
                matched = true;
                break;
            }
        }
        if !matched {
            // Leaving this prediction unmatched must itself be optimal.
            debug_assert!(
                {
                    let sub = remaining_after(None);
                    let total = fixed_cost + optimal_total(&sub);
                    (total - target_total).abs() <= cost_tolerance(target_total)
                },
                "no consistent completion found"
            );
        }
    }
    debug_assert_eq!(pairs.len(), pairs_needed);
    Assignment { pairs }
}
