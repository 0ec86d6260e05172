use serde::{Deserialize, Serialize};

use super::MergeError;

/// A unit vector, or the reserved zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn zero(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    /// L2-normalizes `values`.
    pub fn from_vector(values: Vec<f64>) -> Result<Self, MergeError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(MergeError::ZeroEmbedding);
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

impl std::ops::Neg for Embedding {
    type Output = Embedding;

    fn neg(self) -> Embedding {
        Embedding {
            values: self.values.into_iter().map(|v| -v).collect(),
        }
    }
}

/// Turns a node label into an embedding. Must be pure for a fixed configuration.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, label: &str) -> Result<Embedding, MergeError>;
}

/// Lowercased whitespace tokens, FNV-1a hashed into `dim` count buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedTokens {
    pub dim: usize,
}

impl HashedTokens {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

impl EmbeddingProvider for HashedTokens {
    fn embed(&self, label: &str) -> Result<Embedding, MergeError> {
        let lower = label.to_lowercase();
        let mut counts = vec![0.0; self.dim.max(1)];
        let mut any = false;
        for token in lower.split_whitespace() {
            let bucket = (fnv1a(token.as_bytes()) % counts.len() as u64) as usize;
            counts[bucket] += 1.0;
            any = true;
        }
        if !any {
            return Err(MergeError::EmptyLabel(label.to_string()));
        }
        Embedding::from_vector(counts)
    }
}

/// Cosine of two unit vectors, clamped to [-1, 1].
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f64, MergeError> {
    if a.is_zero() || b.is_zero() {
        return Err(MergeError::ZeroEmbedding);
    }
    if a.dim() != b.dim() {
        return Err(MergeError::DimensionMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}
