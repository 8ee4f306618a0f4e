//! Embedding vectors, similarity math, and the on-disk matrix format.
//!
//! File layout (bit-exact): an 8-byte magic string, one text header line
//! `dim=<d> count=<n>`, then `n` newline-terminated UTF-8 id lines, then
//! `n * d` little-endian 32-bit floats.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MATRIX_MAGIC: &[u8; 8] = b"FUDDEMB\0";

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("embedding must have at least one component")]
    Empty,
    #[error("non-finite value at component {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("cannot aggregate an empty embedding list")]
    EmptyList,
    #[error("duplicate row id: {0}")]
    DuplicateId(String),
    #[error("row id contains a newline: {0:?}")]
    InvalidId(String),
    #[error("id/row count mismatch: {ids} ids vs {rows} rows")]
    RowCountMismatch { ids: usize, rows: usize },
    #[error("bad magic bytes, not an embedding matrix file")]
    BadMagic,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("truncated payload: expected {expected} floats, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A fixed-dimension vector produced by an image or text encoder.
///
/// All values are finite by construction; the dimension is the vector length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = VectorError;
    fn try_from(values: Vec<f32>) -> Result<Self, VectorError> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Vec<f32> {
        e.values
    }
}

/// Cosine similarity, accumulated in f64.
///
/// Zero-norm inputs are rejected rather than mapped to 0; a zero vector
/// signals a degenerate upstream encoder, not genuine orthogonality.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, VectorError> {
    if a.dim() != b.dim() {
        return Err(VectorError::DimMismatch(a.dim(), b.dim()));
    }
    let mut dot = 0.0f64;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        dot += (x as f64) * (y as f64);
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroNorm);
    }
    Ok(dot / (na * nb))
}

/// Elementwise arithmetic mean. Accumulates in f64, casts back to f32 at the
/// end. Callers that need exact reproducibility fix the item order first.
pub fn mean_embedding(items: &[Embedding]) -> Result<Embedding, VectorError> {
    let first = items.first().ok_or(VectorError::EmptyList)?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for item in items {
        if item.dim() != dim {
            return Err(VectorError::DimMismatch(dim, item.dim()));
        }
        for (slot, &v) in acc.iter_mut().zip(&item.values) {
            *slot += v as f64;
        }
    }
    let n = items.len() as f64;
    Embedding::new(acc.into_iter().map(|v| (v / n) as f32).collect())
}

/// An ordered set of embeddings with unique string row ids, all sharing dim.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    rows: Vec<Embedding>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, rows: Vec<Embedding>) -> Result<Self, VectorError> {
        if ids.len() != rows.len() {
            return Err(VectorError::RowCountMismatch { ids: ids.len(), rows: rows.len() });
        }
        if let Some(first) = rows.first() {
            let dim = first.dim();
            for row in &rows {
                if row.dim() != dim {
                    return Err(VectorError::DimMismatch(dim, row.dim()));
                }
            }
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.contains('\n') {
                return Err(VectorError::InvalidId(id.clone()));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(VectorError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { ids, rows, index })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Embedding::dim)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.index.get(id).map(|&i| &self.rows[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Embedding)> {
        self.ids.iter().map(String::as_str).zip(self.rows.iter())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), VectorError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MATRIX_MAGIC)?;
        writeln!(w, "dim={} count={}", self.dim(), self.len())?;
        for id in &self.ids {
            writeln!(w, "{id}")?;
        }
        for row in &self.rows {
            for &v in row.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, VectorError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| VectorError::BadMagic)?;
        if &magic != MATRIX_MAGIC {
            return Err(VectorError::BadMagic);
        }
        let header = read_line(&mut r)?;
        let (dim, count) = parse_header(&header)?;
        let mut ids = Vec::with_capacity(count);
        let mut seen = HashSet::with_capacity(count);
        for _ in 0..count {
            let id = read_line(&mut r)?;
            if !seen.insert(id.clone()) {
                return Err(VectorError::DuplicateId(id));
            }
            ids.push(id);
        }
        let expected = dim * count;
        let mut payload = vec![0u8; expected * 4];
        let mut filled = 0;
        while filled < payload.len() {
            match r.read(&mut payload[filled..])? {
                0 => return Err(VectorError::Truncated { expected, got: filled / 4 }),
                n => filled += n,
            }
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(VectorError::TrailingBytes);
        }
        let mut rows = Vec::with_capacity(count);
        for chunk in payload.chunks(dim.max(1) * 4).take(count) {
            let values: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            rows.push(Embedding::new(values)?);
        }
        Self::new(ids, rows)
    }
}

fn read_line(r: &mut impl BufRead) -> Result<String, VectorError> {
    let mut line = String::new();
    let n = r.read_line(&mut line)?;
    if n == 0 || !line.ends_with('\n') {
        return Err(VectorError::BadHeader("unterminated line".into()));
    }
    line.pop();
    Ok(line)
}

fn parse_header(line: &str) -> Result<(usize, usize), VectorError> {
    let bad = || VectorError::BadHeader(line.to_string());
    let mut parts = line.split(' ');
    let dim = parts
        .next()
        .and_then(|p| p.strip_prefix("dim="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad)?;
    let count = parts
        .next()
        .and_then(|p| p.strip_prefix("count="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((dim, count))
}
