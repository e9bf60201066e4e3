//! Text-embedding interface and the deterministic toy embedder.
//!
//! The toy embedder maps each word to a fixed pseudo-orthogonal unit vector
//! (seeded hash → Gaussian → normalize); the sentence feature is the
//! L2-normalized mean of the word vectors. A small reserved vocabulary of
//! attribute words gets exact basis vectors so cosine margins between
//! attribute combinations are analytically predictable in tests. A real text
//! encoder can plug in behind the same trait for realistic runs.

use sha2::{Digest, Sha256};

use super::{Embedding, KnowledgeError};
use crate::rng;

/// Words pinned to exact basis vectors (coordinate = list position).
/// Everything else hashes to a random unit vector.
const RESERVED_BASIS_WORDS: [&str; 8] = [
    "sharp-edge",
    "handle",
    "flat-surface",
    "container",
    "long-thin",
    "absorbent",
    "pointed-tip",
    "rigid",
];

pub trait TextEmbedder: Send + Sync {
    /// Stable identifier recorded in knowledge bases, e.g. `toy-d32-s7`.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Sequence-level vector plus one vector per token.
    fn embed(&self, text: &str) -> Result<(Embedding, Vec<Embedding>), KnowledgeError>;
}

/// Lowercase, split on whitespace, strip edge punctuation (hyphens inside
/// words survive).
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !(c.is_alphanumeric() || c == '-'))
                .to_string()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    dim: usize,
    seed: u64,
    id: String,
}

impl ToyEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedder dimension must be positive");
        Self {
            dim,
            seed,
            id: format!("toy-d{dim}-s{seed}"),
        }
    }

    /// The fixed unit vector for one word.
    pub fn word_vector(&self, word: &str) -> Embedding {
        if let Some(index) = RESERVED_BASIS_WORDS.iter().position(|w| *w == word) {
            if index < self.dim {
                let mut values = vec![0.0; self.dim];
                values[index] = 1.0;
                return Embedding(values);
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(word.as_bytes());
        let digest = hasher.finalize();
        let word_seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = rng::rng_from(word_seed);
        let mut values: Vec<f64> = (0..self.dim).map(|_| rng::standard_normal(&mut rng)).collect();
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        } else {
            values[0] = 1.0;
        }
        Embedding(values)
    }
}

impl TextEmbedder for ToyEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<(Embedding, Vec<Embedding>), KnowledgeError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(KnowledgeError::EmptyText);
        }
        let word_features: Vec<Embedding> =
            tokens.iter().map(|w| self.word_vector(w)).collect();
        let mut mean = vec![0.0; self.dim];
        for word in &word_features {
            for (m, v) in mean.iter_mut().zip(word.as_slice()) {
                *m += v;
            }
        }
        let count = word_features.len() as f64;
        for m in &mut mean {
            *m /= count;
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for m in &mut mean {
                *m /= norm;
            }
        }
        Ok((Embedding(mean), word_features))
    }
}

/// Reconstruct an embedder from its recorded id.
pub fn embedder_from_id(id: &str) -> Result<Box<dyn TextEmbedder>, KnowledgeError> {
    let unknown = || KnowledgeError::UnknownEmbedder(id.to_string());
    let rest = id.strip_prefix("toy-d").ok_or_else(unknown)?;
    let (dim_str, seed_str) = rest.split_once("-s").ok_or_else(unknown)?;
    let dim: usize = dim_str.parse().map_err(|_| unknown())?;
    let seed: u64 = seed_str.parse().map_err(|_| unknown())?;
    if dim == 0 {
        return Err(unknown());
    }
    Ok(Box::new(ToyEmbedder::new(dim, seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_strips_edge_punctuation() {
        assert_eq!(
            tokenize("A sharp-edge, and (a handle)."),
            vec!["a", "sharp-edge", "and", "a", "handle"]
        );
    }

    #[test]
    fn word_vectors_are_unit_norm_and_stable() {
        let embedder = ToyEmbedder::new(32, 7);
        let v1 = embedder.word_vector("handle");
        let v2 = embedder.word_vector("handle");
        assert_eq!(v1, v2);
        assert!((v1.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reserved_attribute_words_are_exactly_orthogonal() {
        let embedder = ToyEmbedder::new(32, 7);
        for (i, a) in RESERVED_BASIS_WORDS.iter().enumerate() {
            for b in &RESERVED_BASIS_WORDS[i + 1..] {
                let va = embedder.word_vector(a);
                let vb = embedder.word_vector(b);
                let dot: f64 = va
                    .as_slice()
                    .iter()
                    .zip(vb.as_slice())
                    .map(|(x, y)| x * y)
                    .sum();
                assert_eq!(dot, 0.0, "cos({a}, {b})");
            }
        }
    }

    #[test]
    fn hashed_words_are_pseudo_orthogonal() {
        let embedder = ToyEmbedder::new(32, 7);
        let words = ["knife", "bucket", "towel", "skewer", "and", "a", "blade"];
        for (i, a) in words.iter().enumerate() {
            for b in &words[i + 1..] {
                let va = embedder.word_vector(a);
                let vb = embedder.word_vector(b);
                let dot: f64 = va
                    .as_slice()
                    .iter()
                    .zip(vb.as_slice())
                    .map(|(x, y)| x * y)
                    .sum();
                assert!(dot.abs() < 0.5, "cos({a}, {b}) = {dot}");
            }
        }
    }

    #[test]
    fn sentence_feature_is_normalized_mean() {
        let embedder = ToyEmbedder::new(16, 7);
        let (sentence, words) = embedder.embed("sharp-edge handle").unwrap();
        assert_eq!(words.len(), 2);
        assert!((sentence.l2_norm() - 1.0).abs() < 1e-12);
        // Direction must match the raw mean.
        let mean: Vec<f64> = (0..16)
            .map(|i| (words[0].as_slice()[i] + words[1].as_slice()[i]) / 2.0)
            .collect();
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (s, m) in sentence.as_slice().iter().zip(&mean) {
            assert!((s - m / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn embedder_round_trips_through_id() {
        let embedder = ToyEmbedder::new(24, 99);
        let restored = embedder_from_id(embedder.id()).unwrap();
        assert_eq!(restored.dim(), 24);
        let (a, _) = embedder.embed("handle").unwrap();
        let (b, _) = restored.embed("handle").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_id_rejected() {
        assert!(embedder_from_id("roberta-base").is_err());
        assert!(embedder_from_id("toy-dx-s1").is_err());
    }
}
