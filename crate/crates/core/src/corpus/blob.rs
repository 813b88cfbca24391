//! Embedding blob format.
//!
//! Layout (little-endian): magic `GAPE`, version `u32 = 1`, count `u32`,
//! dim `u32`, then `count * dim` `f32` values, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::CorpusError;

pub const BLOB_MAGIC: [u8; 4] = *b"GAPE";
pub const BLOB_VERSION: u32 = 1;

/// Row-major embedding matrix with norms cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    count: usize,
    dim: usize,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Validates that every row is finite with nonzero norm.
    pub fn new(count: usize, dim: usize, data: Vec<f32>) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::EmbeddingShapeMismatch("dim must be positive".into()));
        }
        if data.len() != count * dim {
            return Err(CorpusError::EmbeddingShapeMismatch(format!(
                "{} values for {count}x{dim}",
                data.len()
            )));
        }
        let mut norms = Vec::with_capacity(count);
        for (row, chunk) in data.chunks_exact(dim).enumerate() {
            if chunk.iter().any(|v| !v.is_finite()) {
                return Err(CorpusError::NonFiniteEmbedding { row });
            }
            let norm = chunk.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(CorpusError::ZeroNormEmbedding { row });
            }
            norms.push(norm);
        }
        Ok(Self {
            count,
            dim,
            data,
            norms,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, CorpusError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(CorpusError::EmbeddingShapeMismatch(format!(
                "row {bad} has {} values, expected {dim}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

pub fn read_blob(path: &Path) -> Result<EmbeddingMatrix, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let file_len = file.metadata().map_err(|e| CorpusError::io(path, e))?.len();
    let mut reader = BufReader::new(file);
    let mut header = [0u8; 16];
    reader
        .read_exact(&mut header)
        .map_err(|_| CorpusError::MalformedBlob(format!("{file_len}-byte file is shorter than the header")))?;
    if header[..4] != BLOB_MAGIC {
        return Err(CorpusError::MalformedBlob("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != BLOB_VERSION {
        return Err(CorpusError::MalformedBlob(format!("unsupported version {version}")));
    }
    let count = word(8) as usize;
    let dim = word(12) as usize;
    let expected = 16 + 4 * (count as u64) * (dim as u64);
    if file_len != expected {
        return Err(CorpusError::EmbeddingShapeMismatch(format!(
            "header declares {count}x{dim} ({expected} bytes), file has {file_len} bytes"
        )));
    }
    let mut bytes = vec![0u8; 4 * count * dim];
    reader.read_exact(&mut bytes).map_err(|e| CorpusError::io(path, e))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::new(count, dim, data)
}

pub fn write_blob(path: &Path, matrix: &EmbeddingMatrix) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| CorpusError::io(path, e));
    put(&BLOB_MAGIC)?;
    put(&BLOB_VERSION.to_le_bytes())?;
    put(&(matrix.count as u32).to_le_bytes())?;
    put(&(matrix.dim as u32).to_le_bytes())?;
    for v in &matrix.data {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}
