//! Scene generation: non-overlapping boxes with attribute-typed objects,
//! and derivation of the token grid from a stored scene.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::config::SynthConfig;
use crate::detector::SceneTokens;
use crate::knowledge::ToyEmbedder;
use crate::rng;
use crate::training::GroundTruth;

use super::catalog::{Category, SynthTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub box_cxcywh: [f64; 4],
    pub category: String,
    pub attributes: Vec<String>,
    /// True for near-miss and irrelevant objects.
    pub distractor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub task_id: u32,
    pub split: Split,
    pub index: usize,
    /// Seed for regenerating token noise; derived from the suite seed.
    pub seed: u64,
    pub objects: Vec<SceneObject>,
    pub gt: GroundTruth,
}

impl SynthScene {
    /// Re-derive the ground truth from the stored objects; must reproduce
    /// the stored labels exactly.
    pub fn derive_gt(&self, task: &SynthTask) -> GroundTruth {
        GroundTruth {
            boxes: self
                .objects
                .iter()
                .filter(|o| task.satisfies(&o.attributes))
                .map(|o| o.box_cxcywh)
                .collect(),
        }
    }

    pub fn descriptor(&self) -> String {
        format!(
            "task{}/{}/{} (seed {})",
            self.task_id,
            self.split.name(),
            self.index,
            self.seed
        )
    }
}

/// The object feature direction: normalized mean of attribute word vectors
/// plus a down-weighted category-name vector.
fn object_direction(
    object: &SceneObject,
    embedder: &ToyEmbedder,
    category_weight: f64,
    dim: usize,
) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for attr in &object.attributes {
        for (a, v) in acc.iter_mut().zip(embedder.word_vector(attr).as_slice()) {
            *a += v;
        }
    }
    let count = object.attributes.len().max(1) as f64;
    for a in &mut acc {
        *a /= count;
    }
    for (a, v) in acc
        .iter_mut()
        .zip(embedder.word_vector(&object.category).as_slice())
    {
        *a += category_weight * v;
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for a in &mut acc {
            *a /= norm;
        }
    }
    acc
}

/// Derive the token grid for a stored scene: in-object cells carry the
/// object's feature direction plus seeded noise, background cells are pure
/// noise. Tokens are regenerated on load so dataset files stay small.
pub fn scene_tokens(
    scene: &SynthScene,
    config: &SynthConfig,
    embedder: &ToyEmbedder,
    dim: usize,
) -> SceneTokens {
    let g = config.grid;
    let directions: Vec<Vec<f64>> = scene
        .objects
        .iter()
        .map(|o| object_direction(o, embedder, config.category_weight, dim))
        .collect();
    let mut features = Matrix::zeros((g * g, dim));
    let mut noise_rng = rng::rng_from(rng::derive_seed(scene.seed, &[0x746f_6b65]));
    for row in 0..g {
        for col in 0..g {
            let x = (col as f64 + 0.5) / g as f64;
            let y = (row as f64 + 0.5) / g as f64;
            let owner = scene.objects.iter().position(|o| {
                let [cx, cy, w, h] = o.box_cxcywh;
                x >= cx - w / 2.0 && x <= cx + w / 2.0 && y >= cy - h / 2.0 && y <= cy + h / 2.0
            });
            let idx = row * g + col;
            for c in 0..dim {
                let noise = config.feature_noise * rng::standard_normal(&mut noise_rng);
                features[[idx, c]] = match owner {
                    Some(o) => directions[o][c] + noise,
                    None => noise,
                };
            }
        }
    }
    SceneTokens::new(features, (g, g)).expect("grid-consistent features")
}

const MIN_SIZE: f64 = 0.10;
const MAX_SIZE: f64 = 0.28;
const PLACEMENT_TRIES: usize = 40;

fn boxes_overlap(a: &[f64; 4], b: &[f64; 4], gap: f64) -> bool {
    (a[0] - b[0]).abs() < (a[2] + b[2]) / 2.0 + gap
        && (a[1] - b[1]).abs() < (a[3] + b[3]) / 2.0 + gap
}

fn place_box(existing: &[SceneObject], rng: &mut impl Rng) -> Option<[f64; 4]> {
    for _ in 0..PLACEMENT_TRIES {
        let w = rng.gen_range(MIN_SIZE..MAX_SIZE);
        let h = rng.gen_range(MIN_SIZE..MAX_SIZE);
        let cx = rng.gen_range(w / 2.0..1.0 - w / 2.0);
        let cy = rng.gen_range(h / 2.0..1.0 - h / 2.0);
        let candidate = [cx, cy, w, h];
        if existing
            .iter()
            .all(|o| !boxes_overlap(&o.box_cxcywh, &candidate, 0.01))
        {
            return Some(candidate);
        }
    }
    None
}

fn pick<'a>(pool: &'a [Category], rng: &mut impl Rng) -> &'a Category {
    &pool[rng.gen_range(0..pool.len())]
}

/// Generate one scene for a task. Around `empty_scene_frac` of scenes have
/// zero suitable objects (distractors only, possibly none at all); the rest
/// mix suitable objects with near-miss and irrelevant ones. Placement
/// retries until boxes are disjoint, dropping the object when space runs
/// out.
pub fn generate_scene(
    task: &SynthTask,
    config: &SynthConfig,
    split: Split,
    index: usize,
    suite_seed: u64,
) -> SynthScene {
    let seed = rng::derive_seed(
        suite_seed,
        &[0x7363_656e, task.spec.id as u64, split.tag(), index as u64],
    );
    let mut rng = rng::rng_from(rng::derive_seed(seed, &[0x6f62_6a]));
    let (mut suitable, near_miss, irrelevant) = task.roles();

    // Held-out evaluation: test-split suitable objects come only from
    // categories absent from the scripted object list; training uses only
    // the listed ones.
    if config.heldout_eval {
        let listed = task.listed(config.objects_per_subset);
        match split {
            Split::Train => suitable.retain(|c| listed.contains(&c.name)),
            Split::Test => suitable.retain(|c| !listed.contains(&c.name)),
        }
        assert!(
            !suitable.is_empty(),
            "held-out eval leaves no suitable categories for {}",
            task.spec.phrase
        );
    }

    let empty = rng.gen_bool(config.empty_scene_frac);
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut push_object = |pool: &[Category],
                           distractor: bool,
                           objects: &mut Vec<SceneObject>,
                           rng: &mut rand_chacha::ChaCha8Rng| {
        if objects.len() >= config.max_objects || pool.is_empty() {
            return;
        }
        let category = pick(pool, rng).clone();
        if let Some(box_cxcywh) = place_box(objects, rng) {
            objects.push(SceneObject {
                box_cxcywh,
                category: category.name,
                attributes: category.attributes,
                distractor,
            });
        }
    };

    if empty {
        let near_count = rng.gen_range(0..=3usize);
        for _ in 0..near_count {
            push_object(&near_miss, true, &mut objects, &mut rng);
        }
        let irr_count = rng.gen_range(0..=2usize);
        for _ in 0..irr_count {
            push_object(&irrelevant, true, &mut objects, &mut rng);
        }
    } else {
        let n_suitable = rng.gen_range(1..=2usize);
        for _ in 0..n_suitable {
            push_object(&suitable, false, &mut objects, &mut rng);
        }
        // Near-miss objects are mandatory in most scenes so conjunctive
        // knowledge is actually needed.
        if rng.gen_bool(config.near_miss_prob) {
            let n = rng.gen_range(1..=2usize);
            for _ in 0..n {
                push_object(&near_miss, true, &mut objects, &mut rng);
            }
        }
        let irr_count = rng.gen_range(0..=2usize);
        for _ in 0..irr_count {
            push_object(&irrelevant, true, &mut objects, &mut rng);
        }
    }

    let mut scene = SynthScene {
        task_id: task.spec.id,
        split,
        index,
        seed,
        objects,
        gt: GroundTruth::default(),
    };
    scene.gt = scene.derive_gt(task);
    if empty {
        debug_assert!(scene.gt.is_empty(), "empty-branch scene grew ground truth");
    }
    scene
}
