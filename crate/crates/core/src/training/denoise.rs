//! Knowledge-conditional denoising: noised copies of the ground-truth boxes
//! become extra queries whose features are sampled off the token grid and
//! enhanced with their own knowledge units. Only boxes are noised, never
//! labels, and the branch exists only during training.

use rand::Rng;

use crate::autodiff::Matrix;
use crate::config::ModelConfig;
use crate::detector::{forward, Detection, DnInput, ModelParams, SceneTokens, TaskFeature};
use crate::knowledge::KnowledgeBase;

use super::{FeatureSampling, GroundTruth, NoiseConfig, TrainError};

/// Noised queries plus their ground-truth pairing.
#[derive(Debug, Clone)]
pub struct NoisedQueries {
    /// (groups·M)×D features sampled at the noised centers.
    pub features: Matrix,
    /// (groups·M)×2 noised centers.
    pub centers: Matrix,
    /// Full noised boxes, for the box-average sampling mode and diagnostics.
    pub boxes: Vec<[f64; 4]>,
    /// Source ground-truth index per noised query.
    pub gt_index: Vec<usize>,
    pub group_sizes: Vec<usize>,
}

impl NoisedQueries {
    pub fn len(&self) -> usize {
        self.gt_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt_index.is_empty()
    }

    pub fn dn_input(&self) -> DnInput {
        DnInput {
            features: self.features.clone(),
            centers: self.centers.clone(),
            group_sizes: self.group_sizes.clone(),
        }
    }
}

fn sample_feature(
    tokens: &SceneTokens,
    noised: &[f64; 4],
    mode: FeatureSampling,
) -> Vec<f64> {
    match mode {
        FeatureSampling::Bilinear => tokens.sample_bilinear(noised[0], noised[1]),
        FeatureSampling::BoxAverage => {
            let (x0, y0, x1, y1) = (
                noised[0] - noised[2] / 2.0,
                noised[1] - noised[3] / 2.0,
                noised[0] + noised[2] / 2.0,
                noised[1] + noised[3] / 2.0,
            );
            let mut acc = vec![0.0; tokens.dim()];
            let mut count = 0usize;
            for i in 0..tokens.len() {
                let (px, py) = tokens.position(i);
                if px >= x0 && px <= x1 && py >= y0 && py <= y1 {
                    for (a, v) in acc.iter_mut().zip(tokens.features.row(i)) {
                        *a += v;
                    }
                    count += 1;
                }
            }
            if count == 0 {
                return tokens.sample_bilinear(noised[0], noised[1]);
            }
            for a in &mut acc {
                *a /= count as f64;
            }
            acc
        }
    }
}

/// Jitter every ground-truth box once per group: the center moves by up to
/// `center_jitter` of the box size per axis, the size scales per axis by
/// `1 ± scale_jitter`, and the result is clipped to the unit square.
/// Returns `None` when there is nothing to denoise.
pub fn make_noised_queries(
    gt: &GroundTruth,
    tokens: &SceneTokens,
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Option<NoisedQueries> {
    if gt.is_empty() || noise.groups == 0 {
        return None;
    }
    let m = gt.len();
    let total = m * noise.groups;
    let d = tokens.dim();
    let mut features = Matrix::zeros((total, d));
    let mut centers = Matrix::zeros((total, 2));
    let mut boxes = Vec::with_capacity(total);
    let mut gt_index = Vec::with_capacity(total);
    for group in 0..noise.groups {
        for (gi, gt_box) in gt.boxes.iter().enumerate() {
            let [cx, cy, w, h] = *gt_box;
            let jitter = |rng: &mut dyn rand::RngCore| rng.gen_range(-1.0f64..1.0);
            let ncx = cx + jitter(rng) * noise.center_jitter * w;
            let ncy = cy + jitter(rng) * noise.center_jitter * h;
            let nw = w * (1.0 + jitter(rng) * noise.scale_jitter);
            let nh = h * (1.0 + jitter(rng) * noise.scale_jitter);
            // Clip the noised box to the unit square.
            let x0 = (ncx - nw / 2.0).clamp(0.0, 1.0);
            let y0 = (ncy - nh / 2.0).clamp(0.0, 1.0);
            let x1 = (ncx + nw / 2.0).clamp(0.0, 1.0);
            let y1 = (ncy + nh / 2.0).clamp(0.0, 1.0);
            let noised = [
                (x0 + x1) / 2.0,
                (y0 + y1) / 2.0,
                (x1 - x0).max(1e-3),
                (y1 - y0).max(1e-3),
            ];
            let row = group * m + gi;
            let feature = sample_feature(tokens, &noised, noise.feature_sampling);
            for (c, v) in feature.iter().enumerate() {
                features[[row, c]] = *v;
            }
            centers[[row, 0]] = noised[0];
            centers[[row, 1]] = noised[1];
            boxes.push(noised);
            gt_index.push(gi);
        }
    }
    Some(NoisedQueries {
        features,
        centers,
        boxes,
        gt_index,
        group_sizes: vec![m; noise.groups],
    })
}

/// Standalone denoising decode: the noised queries run through the same
/// decoder parameters as the main branch. The attention mask keeps the
/// denoising outputs independent of the main queries, so reading them off
/// the combined forward is exactly equivalent to decoding them alone (the
/// isolation tests pin this down bitwise).
pub fn denoise_forward(
    noised: &NoisedQueries,
    tokens: &SceneTokens,
    task: &TaskFeature,
    kb: &KnowledgeBase,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<Detection>, TrainError> {
    let output = forward(tokens, task, kb, params, config, Some(&noised.dn_input()))?;
    Ok(output.dn.expect("dn branch requested").detections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn tokens() -> SceneTokens {
        let mut rng = rng_from(5);
        let features = Matrix::from_shape_fn((16, 8), |_| crate::rng::standard_normal(&mut rng));
        SceneTokens::new(features, (4, 4)).unwrap()
    }

    #[test]
    fn zero_jitter_reproduces_gt_boxes() {
        let gt = GroundTruth {
            boxes: vec![[0.4, 0.5, 0.2, 0.2], [0.7, 0.3, 0.15, 0.2]],
        };
        let noise = NoiseConfig {
            center_jitter: 0.0,
            scale_jitter: 0.0,
            ..NoiseConfig::default()
        };
        let mut rng = rng_from(1);
        let noised = make_noised_queries(&gt, &tokens(), &noise, &mut rng).unwrap();
        for (n, g) in noised.boxes.iter().zip(&gt.boxes) {
            for c in 0..4 {
                assert!((n[c] - g[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let gt = GroundTruth {
            boxes: vec![[0.4, 0.5, 0.2, 0.2]],
        };
        let noise = NoiseConfig {
            groups: 3,
            ..NoiseConfig::default()
        };
        let a = make_noised_queries(&gt, &tokens(), &noise, &mut rng_from(7)).unwrap();
        let b = make_noised_queries(&gt, &tokens(), &noise, &mut rng_from(7)).unwrap();
        assert_eq!(a.boxes, b.boxes);
        assert_eq!(a.features, b.features);
        assert_eq!(a.group_sizes, vec![1, 1, 1]);
    }

    #[test]
    fn noised_center_at_grid_node_samples_that_token() {
        let t = tokens();
        // Cell centers of a 4x4 grid sit at odd multiples of 1/8; a GT box
        // centered exactly there with zero jitter must sample that token.
        let gt = GroundTruth {
            boxes: vec![[0.375, 0.625, 0.2, 0.2]],
        };
        let noise = NoiseConfig {
            center_jitter: 0.0,
            scale_jitter: 0.0,
            ..NoiseConfig::default()
        };
        let noised = make_noised_queries(&gt, &t, &noise, &mut rng_from(3)).unwrap();
        // (0.375, 0.625) is column 1, row 2 → token 9.
        let expected: Vec<f64> = t.features.row(9).to_vec();
        let got: Vec<f64> = noised.features.row(0).to_vec();
        assert_eq!(got, expected);
    }

    #[test]
    fn empty_gt_skips_denoising() {
        let gt = GroundTruth::default();
        let noise = NoiseConfig::default();
        assert!(make_noised_queries(&gt, &tokens(), &noise, &mut rng_from(1)).is_none());
    }

    #[test]
    fn boxes_stay_in_unit_square() {
        let gt = GroundTruth {
            boxes: vec![[0.05, 0.95, 0.3, 0.3]],
        };
        let noise = NoiseConfig {
            center_jitter: 0.4,
            scale_jitter: 0.8,
            groups: 8,
            ..NoiseConfig::default()
        };
        let noised = make_noised_queries(&gt, &tokens(), &noise, &mut rng_from(11)).unwrap();
        for b in &noised.boxes {
            assert!(b[0] - b[2] / 2.0 >= -1e-12);
            assert!(b[1] - b[3] / 2.0 >= -1e-12);
            assert!(b[0] + b[2] / 2.0 <= 1.0 + 1e-12);
            assert!(b[1] + b[3] / 2.0 <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn box_average_sampling_averages_inside_cells() {
        let t = tokens();
        let gt = GroundTruth {
            // Covers the top-left 2x2 block of cell centers exactly.
            boxes: vec![[0.25, 0.25, 0.5, 0.5]],
        };
        let noise = NoiseConfig {
            center_jitter: 0.0,
            scale_jitter: 0.0,
            feature_sampling: FeatureSampling::BoxAverage,
            ..NoiseConfig::default()
        };
        let noised = make_noised_queries(&gt, &t, &noise, &mut rng_from(2)).unwrap();
        let mut expected = vec![0.0; t.dim()];
        for idx in [0usize, 1, 4, 5] {
            for (e, v) in expected.iter_mut().zip(t.features.row(idx)) {
                *e += v / 4.0;
            }
        }
        for (g, e) in noised.features.row(0).iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }
}
