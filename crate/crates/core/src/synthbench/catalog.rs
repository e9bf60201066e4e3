//! The built-in attribute vocabulary, category pool and task suite.
//!
//! Category roles are derived per task from the predicate: a category is
//! suitable iff its attributes contain some predicate subset, a near miss if
//! it shares attributes with the predicate without satisfying it, and
//! irrelevant if it shares none. Listed categories (the ones the scripted
//! object-level transcript names) are a fixed hand-picked subset of the
//! suitable ones; the rest stay held out to exercise generalization beyond
//! the object list.

use serde::{Deserialize, Serialize};

use crate::mlcot::TaskSpec;

pub const ATTRIBUTES: [&str; 8] = [
    "sharp-edge",
    "handle",
    "flat-surface",
    "container",
    "long-thin",
    "absorbent",
    "pointed-tip",
    "rigid",
];

pub fn attribute_vocabulary() -> Vec<String> {
    ATTRIBUTES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub attributes: Vec<String>,
}

fn cat(name: &str, attributes: &[&str]) -> Category {
    Category {
        name: name.to_string(),
        attributes: attributes.iter().map(|s| s.to_string()).collect(),
    }
}

/// The global category pool. One name → one attribute set, across all
/// tasks; the same category can be suitable for one task and a distractor
/// for another.
pub fn category_pool() -> Vec<Category> {
    vec![
        cat("knife", &["sharp-edge", "handle"]),
        cat("cleaver", &["sharp-edge", "handle", "rigid"]),
        cat("shard", &["sharp-edge", "pointed-tip"]),
        cat("arrowhead", &["sharp-edge", "pointed-tip", "rigid"]),
        cat("bucket", &["container", "handle"]),
        cat("jar", &["container", "rigid"]),
        cat("kettle", &["container", "handle", "rigid"]),
        cat("pitcher", &["container", "handle", "rigid"]),
        cat("mug", &["handle", "container"]),
        cat("tray", &["container", "flat-surface"]),
        cat("plate", &["flat-surface", "container"]),
        cat("board", &["flat-surface", "rigid"]),
        cat("slab", &["flat-surface", "rigid"]),
        cat("rolling-pin", &["flat-surface", "long-thin"]),
        cat("dowel", &["flat-surface", "long-thin", "rigid"]),
        cat("stick", &["long-thin", "rigid"]),
        cat("rope", &["long-thin", "absorbent"]),
        cat("towel", &["absorbent", "flat-surface"]),
        cat("cloth", &["absorbent", "flat-surface"]),
        cat("rag", &["absorbent", "flat-surface"]),
        cat("sponge", &["absorbent", "container"]),
        cat("foam", &["absorbent", "container"]),
        cat("skewer", &["pointed-tip", "long-thin"]),
        cat("spike", &["pointed-tip", "long-thin", "rigid"]),
        cat("pencil", &["pointed-tip", "long-thin"]),
        cat("awl", &["pointed-tip", "handle", "rigid"]),
        cat("corkscrew", &["pointed-tip", "handle"]),
        cat("pin", &["pointed-tip", "rigid"]),
        cat("hammer", &["handle", "rigid"]),
        cat("ball", &["rigid"]),
    ]
}

pub fn category(name: &str) -> Category {
    category_pool()
        .into_iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("unknown category {name:?}"))
}

/// A task with its suitability predicate: an object is suitable iff its
/// attributes contain at least one of the subsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthTask {
    pub spec: TaskSpec,
    pub subsets: Vec<Vec<String>>,
    /// Suitable categories named by the scripted object-level transcript,
    /// ordered per subset (first `objects_per_subset` of each are listed).
    pub listed_per_subset: Vec<Vec<String>>,
}

impl SynthTask {
    pub fn satisfies(&self, attributes: &[String]) -> bool {
        self.subsets
            .iter()
            .any(|subset| subset.iter().all(|a| attributes.contains(a)))
    }

    /// Attributes mentioned anywhere in the predicate.
    pub fn predicate_attributes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for subset in &self.subsets {
            for a in subset {
                if !out.contains(a) {
                    out.push(a.clone());
                }
            }
        }
        out
    }

    /// Role split over the global pool: (suitable, near-miss, irrelevant).
    pub fn roles(&self) -> (Vec<Category>, Vec<Category>, Vec<Category>) {
        let predicate_attrs = self.predicate_attributes();
        let mut suitable = Vec::new();
        let mut near_miss = Vec::new();
        let mut irrelevant = Vec::new();
        for c in category_pool() {
            if self.satisfies(&c.attributes) {
                suitable.push(c);
            } else if c
                .attributes
                .iter()
                .any(|a| predicate_attrs.contains(a))
            {
                near_miss.push(c);
            } else {
                irrelevant.push(c);
            }
        }
        (suitable, near_miss, irrelevant)
    }

    /// Listed categories: the first `objects_per_subset` names per subset.
    pub fn listed(&self, objects_per_subset: usize) -> Vec<String> {
        let mut out = Vec::new();
        for names in &self.listed_per_subset {
            for name in names.iter().take(objects_per_subset) {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
        }
        out
    }

    /// Suitable categories never named in the transcript.
    pub fn held_out(&self, objects_per_subset: usize) -> Vec<Category> {
        let listed = self.listed(objects_per_subset);
        self.roles()
            .0
            .into_iter()
            .filter(|c| !listed.contains(&c.name))
            .collect()
    }
}

fn task(
    id: u32,
    phrase: &str,
    subsets: &[&[&str]],
    listed_per_subset: &[&[&str]],
) -> SynthTask {
    SynthTask {
        spec: TaskSpec::new(id, phrase),
        subsets: subsets
            .iter()
            .map(|s| s.iter().map(|a| a.to_string()).collect())
            .collect(),
        listed_per_subset: listed_per_subset
            .iter()
            .map(|s| s.iter().map(|n| n.to_string()).collect())
            .collect(),
    }
}

/// The five built-in tasks. Subsets within a task share an attribute so
/// their knowledge units stay mutually similar under the toy embedder while
/// decoy units drop out.
pub fn task_suite() -> Vec<SynthTask> {
    vec![
        task(
            1,
            "open parcel",
            &[
                &["sharp-edge", "handle"],
                &["sharp-edge", "pointed-tip"],
            ],
            &[&["knife", "cleaver"], &["shard", "arrowhead"]],
        ),
        task(
            2,
            "carry water",
            &[
                &["container", "handle"],
                &["container", "rigid"],
            ],
            &[&["bucket", "mug"], &["jar", "kettle"]],
        ),
        task(
            3,
            "flatten dough",
            &[
                &["flat-surface", "rigid"],
                &["flat-surface", "long-thin"],
            ],
            &[&["board", "slab"], &["rolling-pin", "dowel"]],
        ),
        task(
            4,
            "soak up spill",
            &[
                &["absorbent", "flat-surface"],
                &["absorbent", "container"],
            ],
            &[&["towel", "cloth"], &["sponge", "foam"]],
        ),
        task(
            5,
            "poke hole",
            &[
                &["pointed-tip", "long-thin"],
                &["pointed-tip", "handle"],
            ],
            &[&["skewer", "spike"], &["awl", "corkscrew"]],
        ),
    ]
}

pub fn suite_task_count() -> usize {
    5
}

/// Decoy objects for the scripted transcripts: plausible-sounding but
/// unsuitable, with affordance phrases outside the attribute vocabulary so
/// their units are outliers in embedding space.
pub fn decoy_objects() -> Vec<(String, String)> {
    [
        ("fire-axe", "a heavy wedged head"),
        ("candle", "a waxy melting body"),
        ("balloon", "a stretchy inflated skin"),
        ("magnet", "an attracting metal face"),
    ]
    .iter()
    .map(|(n, p)| (n.to_string(), p.to_string()))
    .collect()
}
