//! Dense text embeddings and cosine similarity.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding vector is empty")]
    Empty,
    #[error("embedding vector has zero norm")]
    ZeroNorm,
    #[error("embedding vector contains a non-finite value")]
    NonFinite,
    #[error("embedding dimension {actual} does not match the embedder dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Fixed-dimension vector with a strictly positive norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Multiplies every component by `factor`, which must be positive.
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0 && factor.is_finite(), "scale factor must be positive");
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Cosine similarity; vectors of different dimension compare as 0.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    if a.dimension() != b.dimension() {
        return 0.0;
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    dot / (a.norm() * b.norm())
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> EmbeddingVector;
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "on", "in", "at", "to", "is", "are", "and", "or", "for", "my", "me",
    "i", "it", "by", "with", "what", "which", "do", "does", "be",
];

/// Lowercased alphanumeric tokens with stopwords removed and a trailing
/// plural `s` stripped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .map(|t| {
            if t.len() > 3 && t.ends_with('s') && !t.ends_with("ss") {
                t[..t.len() - 1].to_string()
            } else {
                t
            }
        })
        .collect()
}

/// Deterministic bag-of-words embedder: each token is hashed into a signed
/// bucket of a fixed-dimension vector. Texts sharing tokens land close in
/// cosine distance; unrelated texts are near-orthogonal.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
    seed: u64,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(256, 0x5a6e)
    }
}

impl HashingEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0);
        Self { dimension, seed }
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let mut idx = [0u8; 8];
        idx.copy_from_slice(&digest[..8]);
        let bucket = (u64::from_le_bytes(idx) % self.dimension as u64) as usize;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }
}

impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push("<empty>".into());
        }
        let mut values = vec![0.0; self.dimension];
        for token in &tokens {
            let (bucket, sign) = self.bucket(token);
            values[bucket] += sign;
        }
        // Colliding opposite-sign tokens can cancel out completely.
        if values.iter().all(|v| *v == 0.0) {
            let (bucket, _) = self.bucket("<empty>");
            values[bucket] = 1.0;
        }
        EmbeddingVector(values)
    }
}
