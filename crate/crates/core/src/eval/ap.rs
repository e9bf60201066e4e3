//! Average precision at IoU 0.5 over a task's pooled detections.
//!
//! Detections are ranked by descending confidence across all of the task's
//! scenes; each is a true positive iff it overlaps a not-yet-matched ground
//! truth in its own scene at IoU >= 0.5. AP is the area under the all-points
//! interpolated precision-recall curve (precision envelope), the convention
//! modern COCO tooling uses.

use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::training::{iou, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub detections: usize,
    pub ground_truths: usize,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub counts: CountSummary,
    pub pr: Vec<PrPoint>,
}

/// Flattened detection with a stable content-based sort key so equal
/// confidences rank deterministically regardless of input order.
struct Ranked {
    scene: usize,
    confidence: f64,
    box_cxcywh: [f64; 4],
}

/// AP@0.5 for one task: `detections_per_scene` aligned with `gt_per_scene`.
/// With zero ground truth in total, AP is 1 when there are no detections and
/// 0 otherwise.
pub fn ap50(detections_per_scene: &[Vec<Detection>], gt_per_scene: &[GroundTruth]) -> ApResult {
    assert_eq!(
        detections_per_scene.len(),
        gt_per_scene.len(),
        "detections and ground truth must align per scene"
    );
    let total_gt: usize = gt_per_scene.iter().map(|g| g.len()).sum();
    let total_dets: usize = detections_per_scene.iter().map(|d| d.len()).sum();

    if total_gt == 0 {
        let ap = if total_dets == 0 { 1.0 } else { 0.0 };
        return ApResult {
            ap,
            counts: CountSummary {
                detections: total_dets,
                ground_truths: 0,
                true_positives: 0,
                false_positives: total_dets,
            },
            pr: Vec::new(),
        };
    }

    let mut ranked: Vec<Ranked> = Vec::with_capacity(total_dets);
    for (scene, detections) in detections_per_scene.iter().enumerate() {
        for d in detections {
            ranked.push(Ranked {
                scene,
                confidence: d.confidence,
                box_cxcywh: d.box_cxcywh,
            });
        }
    }
    ranked.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.scene.cmp(&b.scene))
            .then_with(|| {
                a.box_cxcywh
                    .partial_cmp(&b.box_cxcywh)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });

    let mut matched: Vec<Vec<bool>> = gt_per_scene.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut pr = Vec::with_capacity(ranked.len());
    for det in &ranked {
        let gts = &gt_per_scene[det.scene];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt_box) in gts.boxes.iter().enumerate() {
            if matched[det.scene][gi] {
                continue;
            }
            let overlap = iou(&det.box_cxcywh, gt_box);
            if overlap >= 0.5 && best.map_or(true, |(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[det.scene][gi] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        pr.push(PrPoint {
            recall: tp as f64 / total_gt as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }

    // Area under the precision envelope: walk right to left keeping the
    // running max precision. The segment ending at a recall level uses only
    // precisions observed at or beyond it, so each point's precision joins
    // the running max after its drop is accounted for.
    let mut ap = 0.0;
    let mut max_precision = 0.0;
    let mut prev_recall = pr.last().map(|p| p.recall).unwrap_or(0.0);
    for point in pr.iter().rev() {
        if point.recall < prev_recall {
            ap += (prev_recall - point.recall) * max_precision;
            prev_recall = point.recall;
        }
        if point.precision > max_precision {
            max_precision = point.precision;
        }
    }
    ap += prev_recall * max_precision;

    ApResult {
        ap,
        counts: CountSummary {
            detections: total_dets,
            ground_truths: total_gt,
            true_positives: tp,
            false_positives: fp,
        },
        pr,
    }
}
