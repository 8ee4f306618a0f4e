//! Text embedding sources.
//!
//! Real encoders live outside this crate; texts reach us either as rows of a
//! precomputed matrix or through a deterministic synthetic embedder used for
//! toy runs and tests.

use std::collections::HashMap;

use thiserror::Error;

use crate::vector::{Embedding, EmbeddingMatrix};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no embedding available for text {0:?}")]
    MissingText(String),
    #[error("embedder produced an invalid vector for {text:?}: {source}")]
    Invalid {
        text: String,
        #[source]
        source: crate::vector::VectorError,
    },
}

pub trait TextEmbedder: Sync {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
}

/// Looks texts up in a fixed table; errors on anything unknown.
#[derive(Debug, Default, Clone)]
pub struct MapEmbedder {
    table: HashMap<String, Embedding>,
}

impl MapEmbedder {
    pub fn new(table: HashMap<String, Embedding>) -> Self {
        Self { table }
    }

    pub fn insert(&mut self, text: impl Into<String>, embedding: Embedding) {
        self.table.insert(text.into(), embedding);
    }
}

impl TextEmbedder for MapEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| EmbedError::MissingText(text.to_string()))
    }
}

/// Rows of a precomputed text-embedding matrix keyed by the exact text.
pub struct MatrixEmbedder {
    matrix: EmbeddingMatrix,
}

impl MatrixEmbedder {
    pub fn new(matrix: EmbeddingMatrix) -> Self {
        Self { matrix }
    }
}

impl TextEmbedder for MatrixEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        self.matrix
            .get(text)
            .cloned()
            .ok_or_else(|| EmbedError::MissingText(text.to_string()))
    }
}

/// Deterministic pseudo-random unit vectors derived from the text bytes.
///
/// Same (text, dim, seed) always yields the same vector, which makes toy
/// experiments and reports reproducible with no model in the loop.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dim must be at least 1");
        Self { dim, seed }
    }
}

impl TextEmbedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        // FNV-1a over the text, then an splitmix-style stream per component
        let mut h = 0xcbf29ce484222325u64 ^ self.seed;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let mut values = Vec::with_capacity(self.dim);
        let mut state = h;
        for _ in 0..self.dim {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^= z >> 31;
            values.push(((z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) as f32);
        }
        let norm = values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        let values = values.iter().map(|&v| (v as f64 / norm) as f32).collect();
        Embedding::new(values).map_err(|source| EmbedError::Invalid { text: text.to_string(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedder_is_deterministic_and_unit_norm() {
        let e = HashEmbedder::new(16, 7);
        let a = e.embed("A photo of a sparrow.").unwrap();
        let b = e.embed("A photo of a sparrow.").unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-3);
        assert_ne!(a, e.embed("A photo of a wren.").unwrap());
    }

    #[test]
    fn map_embedder_reports_missing_text() {
        let e = MapEmbedder::default();
        assert!(matches!(e.embed("nope"), Err(EmbedError::MissingText(_))));
    }
}
