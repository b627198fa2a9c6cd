//! Embedding vector primitives: normalization, similarity and distance
//! measures, and profile averaging.
//!
//! All arithmetic is in 64-bit floating point. Corpus files may store 32-bit
//! values; loaders promote and re-normalize before anything here runs.

use crate::error::{Error, Result};

/// A D-dimensional speaker embedding.
///
/// Vectors produced by [`l2_normalize`] and [`average_profile`] are unit-norm;
/// the wrapper itself only guarantees a positive dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Wraps raw coordinates without normalizing them.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding must have positive dimension"));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// An enrolled speaker's profile embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    pub embedding: EmbeddingVector,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &[f64]) -> Result<EmbeddingVector> {
    let n = norm(v);
    if n <= 0.0 || !n.is_finite() {
        return Err(Error::Normalization);
    }
    EmbeddingVector::from_values(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity, clamped to [-1, 1] to absorb rounding.
///
/// Inputs are expected to be unit-norm; the division by both norms is kept
/// as a safety net and zero-norm inputs are rejected.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::Normalization);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Euclidean distance between two equal-length vectors.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let sum_sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum_sq.sqrt())
}

/// Componentwise mean of the given embeddings, re-normalized to unit norm.
///
/// Re-normalization keeps profiles on the unit sphere, matching the scale of
/// the utterance embeddings they are scored against. Degenerate sets whose
/// mean is the zero vector are rejected.
pub fn average_profile(embeddings: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let mean = componentwise_mean_profile(embeddings)?;
    l2_normalize(mean.values())
}

/// Componentwise mean without re-normalization.
pub fn componentwise_mean_profile(embeddings: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = embeddings
        .first()
        .ok_or(Error::EmptyInput("cannot average an empty embedding list"))?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for e in embeddings {
        if e.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: e.dim(),
            });
        }
        for (a, x) in acc.iter_mut().zip(e.values()) {
            *a += x;
        }
    }
    let count = embeddings.len() as f64;
    for a in &mut acc {
        *a /= count;
    }
    EmbeddingVector::from_values(acc)
}
