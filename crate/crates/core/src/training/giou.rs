//! IoU and generalized IoU on (cx, cy, w, h) boxes, plus the tape-composed
//! differentiable GIoU used by the box losses.

use crate::autodiff::{Matrix, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum BoxError {
    #[error("degenerate box with non-positive size: w={w}, h={h}")]
    Degenerate { w: f64, h: f64 },
}

fn corners(b: &[f64; 4]) -> (f64, f64, f64, f64) {
    let [cx, cy, w, h] = *b;
    (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

pub fn box_area(b: &[f64; 4]) -> f64 {
    b[2] * b[3]
}

/// Plain intersection-over-union.
pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let (ax0, ay0, ax1, ay1) = corners(a);
    let (bx0, by0, bx1, by1) = corners(b);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = box_area(a) + box_area(b) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Generalized IoU: IoU minus the empty fraction of the convex hull,
/// in (-1, 1].
pub fn giou(a: &[f64; 4], b: &[f64; 4]) -> Result<f64, BoxError> {
    for bx in [a, b] {
        if bx[2] <= 0.0 || bx[3] <= 0.0 {
            return Err(BoxError::Degenerate { w: bx[2], h: bx[3] });
        }
    }
    let (ax0, ay0, ax1, ay1) = corners(a);
    let (bx0, by0, bx1, by1) = corners(b);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = box_area(a) + box_area(b) - inter;
    let hull = (ax1.max(bx1) - ax0.min(bx0)) * (ay1.max(by1) - ay0.min(by0));
    Ok(inter / union - (hull - union) / hull)
}

/// Differentiable GIoU of predicted boxes (n×4 tape var, cxcywh) against
/// constant ground-truth boxes, returning an n×1 var of per-pair GIoU.
/// Composed from tape primitives so gradients come for free.
pub fn giou_var(tape: &Tape, pred: Var, gt: &[[f64; 4]]) -> Var {
    let n = gt.len();
    assert_eq!(tape.shape(pred), (n, 4), "pred/gt count mismatch");
    let gt_mat = Matrix::from_shape_fn((n, 4), |(i, j)| gt[i][j]);
    let gt_var = tape.leaf(gt_mat);

    let half = |v: Var| tape.scale(v, 0.5);
    let split = |v: Var| {
        (
            tape.slice_cols(v, 0, 1),
            tape.slice_cols(v, 1, 1),
            tape.slice_cols(v, 2, 1),
            tape.slice_cols(v, 3, 1),
        )
    };
    let (pcx, pcy, pw, ph) = split(pred);
    let (gcx, gcy, gw, gh) = split(gt_var);

    let px0 = tape.sub(pcx, half(pw));
    let py0 = tape.sub(pcy, half(ph));
    let px1 = tape.add(pcx, half(pw));
    let py1 = tape.add(pcy, half(ph));
    let gx0 = tape.sub(gcx, half(gw));
    let gy0 = tape.sub(gcy, half(gh));
    let gx1 = tape.add(gcx, half(gw));
    let gy1 = tape.add(gcy, half(gh));

    let zero = tape.leaf(Matrix::zeros((n, 1)));
    let iw = {
        let lo = tape.max_el(px0, gx0);
        let hi = tape.min_el(px1, gx1);
        tape.max_el(tape.sub(hi, lo), zero)
    };
    let ih = {
        let lo = tape.max_el(py0, gy0);
        let hi = tape.min_el(py1, gy1);
        tape.max_el(tape.sub(hi, lo), zero)
    };
    let inter = tape.mul(iw, ih);
    let area_p = tape.mul(pw, ph);
    let area_g = tape.mul(gw, gh);
    let union = tape.sub(tape.add(area_p, area_g), inter);
    let hull_w = tape.sub(tape.max_el(px1, gx1), tape.min_el(px0, gx0));
    let hull_h = tape.sub(tape.max_el(py1, gy1), tape.min_el(py0, gy0));
    let hull = tape.mul(hull_w, hull_h);

    let iou_term = tape.div(inter, union);
    let hull_gap = tape.div(tape.sub(hull, union), hull);
    tape.sub(iou_term, hull_gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_boxes_give_one() {
        let b = [0.4, 0.6, 0.2, 0.3];
        assert_eq!(giou(&b, &b).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_fixture() {
        // Hulls: 3x3 = 9, union 2, intersection 0 → 0 - 7/9.
        let a = [0.0, 0.0, 1.0, 1.0];
        let b = [2.0, 2.0, 1.0, 1.0];
        assert!((giou(&a, &b).unwrap() - (-7.0 / 9.0)).abs() < 1e-9);
    }

    #[test]
    fn contained_box_equals_iou() {
        let outer = [0.5, 0.5, 0.6, 0.6];
        let inner = [0.5, 0.5, 0.2, 0.2];
        let g = giou(&outer, &inner).unwrap();
        let i = iou(&outer, &inner);
        assert!((g - i).abs() < 1e-12, "hull equals union when contained");
        assert!((i - (0.04 / 0.36)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_is_error() {
        let a = [0.5, 0.5, 0.0, 0.1];
        let b = [0.5, 0.5, 0.1, 0.1];
        assert!(matches!(giou(&a, &b), Err(BoxError::Degenerate { .. })));
    }

    #[test]
    fn tape_giou_matches_plain() {
        let preds = [
            [0.3, 0.4, 0.25, 0.3],
            [0.7, 0.7, 0.1, 0.2],
            [0.2, 0.8, 0.3, 0.15],
        ];
        let gts = [
            [0.35, 0.38, 0.2, 0.33],
            [0.2, 0.2, 0.15, 0.2],
            [0.2, 0.8, 0.3, 0.15],
        ];
        let tape = Tape::new();
        let pred_var = tape.leaf(Matrix::from_shape_fn((3, 4), |(i, j)| preds[i][j]));
        let g = giou_var(&tape, pred_var, &gts);
        let values = tape.value(g);
        for i in 0..3 {
            let expected = giou(&preds[i], &gts[i]).unwrap();
            assert!(
                (values[[i, 0]] - expected).abs() < 1e-12,
                "row {i}: {} vs {expected}",
                values[[i, 0]]
            );
        }
    }

    fn arb_box() -> impl Strategy<Value = [f64; 4]> {
        (0.1f64..0.9, 0.1f64..0.9, 0.05f64..0.5, 0.05f64..0.5)
            .prop_map(|(cx, cy, w, h)| [cx, cy, w, h])
    }

    proptest! {
        #[test]
        fn giou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let g1 = giou(&a, &b).unwrap();
            let g2 = giou(&b, &a).unwrap();
            prop_assert!((g1 - g2).abs() < 1e-12);
            prop_assert!(g1 > -1.0 && g1 <= 1.0);
        }

        /// GIoU never exceeds IoU; equality iff hull == union.
        #[test]
        fn giou_below_iou(a in arb_box(), b in arb_box()) {
            let g = giou(&a, &b).unwrap();
            let i = iou(&a, &b);
            prop_assert!(g <= i + 1e-12);
        }
    }
}
