//! Exact flat inner-product index.
//!
//! Rows are stored as 32-bit floats, as on disk. Scoring widens to `f64`
//! and divides by each stored row's own norm, so a reported score is the
//! cosine between the query and the stored row.
//!
//! On-disk layout of `index.bin` (all little-endian):
//!
//! ```text
//! "CIRX" | version u32 (=1) | dim u32 | n u64 | n*dim f32 row-major | crc32c u32
//! ```
//!
//! The checksum covers every preceding byte. Row metadata lives in the
//! `rows.jsonl` sidecar, one object per row in row order.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingVector;
use crate::io::{atomic_write, read_jsonl, to_jsonl, JsonlError};
use crate::model::Chunk;

pub const INDEX_FILE: &str = "index.bin";
pub const ROWS_FILE: &str = "rows.jsonl";
pub const MAGIC: &[u8; 4] = b"CIRX";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;
/// Allowed deviation of a stored row's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("chunk {doc_id}/{chunk_id} appears in more than one row")]
    DuplicateChunkRef { doc_id: String, chunk_id: String },
    #[error("row {row} has norm {norm}, not 1")]
    NotNormalized { row: usize, norm: f64 },
    #[error("{vectors} vectors but {meta} metadata rows")]
    LengthMismatch { vectors: usize, meta: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u32),
    #[error("index checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("index file is truncated")]
    TruncatedFile,
    #[error("index file has {0} unexpected trailing bytes")]
    TrailingData(usize),
    #[error("row sidecar is inconsistent: {0}")]
    BadRows(String),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowMeta {
    pub row_id: usize,
    pub chunk_id: String,
    pub doc_id: String,
    pub page_start: u32,
    pub page_end: u32,
}

impl RowMeta {
    pub fn for_chunk(row_id: usize, chunk: &Chunk) -> Self {
        Self {
            row_id,
            chunk_id: chunk.chunk_id.clone(),
            doc_id: chunk.doc_id.clone(),
            page_start: chunk.page_start,
            page_end: chunk.page_end,
        }
    }
}

/// One search result: a row and its cosine similarity to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub row_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    matrix: Vec<f32>,
    inv_norms: Vec<f64>,
    meta: Vec<RowMeta>,
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

impl VectorIndex {
    /// Builds an index; row ids follow input order. Metadata row ids are
    /// reassigned densely from 0.
    pub fn build(vectors: &[EmbeddingVector], meta: Vec<RowMeta>) -> Result<Self, IndexError> {
        if vectors.len() != meta.len() {
            return Err(IndexError::LengthMismatch {
                vectors: vectors.len(),
                meta: meta.len(),
            });
        }
        let dim = vectors.first().map_or(0, EmbeddingVector::dim);
        let mut matrix = Vec::with_capacity(vectors.len() * dim);
        for (row, v) in vectors.iter().enumerate() {
            if v.dim() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
            let norm = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(IndexError::NotNormalized { row, norm });
            }
            matrix.extend(v.values().iter().map(|&x| x as f32));
        }
        let meta = meta
            .into_iter()
            .enumerate()
            .map(|(row_id, m)| RowMeta { row_id, ..m })
            .collect();
        Self::from_parts(dim, matrix, meta)
    }

    fn from_parts(dim: usize, matrix: Vec<f32>, meta: Vec<RowMeta>) -> Result<Self, IndexError> {
        let mut seen = HashSet::new();
        for m in &meta {
            if !seen.insert((m.doc_id.as_str(), m.chunk_id.as_str())) {
                return Err(IndexError::DuplicateChunkRef {
                    doc_id: m.doc_id.clone(),
                    chunk_id: m.chunk_id.clone(),
                });
            }
        }
        let mut inv_norms = Vec::with_capacity(meta.len());
        if dim > 0 {
            for (row, values) in matrix.chunks_exact(dim).enumerate() {
                let norm = row_norm(values);
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(IndexError::NotNormalized { row, norm });
                }
                inv_norms.push(1.0 / norm);
            }
        }
        Ok(Self {
            dim,
            matrix,
            inv_norms,
            meta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn rows(&self) -> &[RowMeta] {
        &self.meta
    }

    /// Stored values of one row.
    pub fn row(&self, row_id: usize) -> &[f32] {
        &self.matrix[row_id * self.dim..(row_id + 1) * self.dim]
    }

    /// Top `k` rows by cosine similarity, highest first, ties broken by
    /// ascending row id. An empty index yields no hits.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Hit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let q = query.values();
        let mut hits: Vec<Hit> = self
            .matrix
            .chunks_exact(self.dim)
            .zip(&self.inv_norms)
            .enumerate()
            .map(|(row_id, (row, inv))| {
                let dot: f64 = row.iter().zip(q).map(|(&r, &x)| f64::from(r) * x).sum();
                Hit {
                    row_id,
                    score: (dot * inv).clamp(-1.0, 1.0),
                }
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.row_id.cmp(&b.row_id)));
        hits.truncate(k);
        Ok(hits)
    }

    /// Serialized `index.bin` contents.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.matrix.len() * 4 + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for x in &self.matrix {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let crc = crc32c::crc32c(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Decodes `index.bin` contents; returns `(dim, n, matrix)`.
    pub fn decode_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>), IndexError> {
        if bytes.len() < 4 {
            return Err(IndexError::TruncatedFile);
        }
        if &bytes[..4] != MAGIC {
            return Err(IndexError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(IndexError::TruncatedFile);
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(IndexError::UnsupportedVersion(version));
        }
        let dim = u32_at(8) as usize;
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let expected = n
            .checked_mul(dim)
            .and_then(|c| c.checked_mul(4))
            .and_then(|m| m.checked_add(HEADER_LEN + 4))
            .ok_or(IndexError::TruncatedFile)?;
        if bytes.len() < expected {
            return Err(IndexError::TruncatedFile);
        }
        if bytes.len() > expected {
            return Err(IndexError::TrailingData(bytes.len() - expected));
        }
        let body = &bytes[..expected - 4];
        let stored = u32_at(expected - 4);
        let computed = crc32c::crc32c(body);
        if stored != computed {
            return Err(IndexError::ChecksumMismatch { stored, computed });
        }
        let matrix = body[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok((dim, n, matrix))
    }

    /// Writes `index.bin` and `rows.jsonl` into `dir`, each atomically.
    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        let rows = to_jsonl(&self.meta).map_err(|e| IndexError::BadRows(e.to_string()))?;
        atomic_write(&dir.join(INDEX_FILE), &self.to_bytes())?;
        atomic_write(&dir.join(ROWS_FILE), rows.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(dir.join(INDEX_FILE))?;
        let (dim, n, matrix) = Self::decode_matrix(&bytes)?;
        let meta: Vec<RowMeta> = read_jsonl(&dir.join(ROWS_FILE))?;
        if meta.len() != n {
            return Err(IndexError::BadRows(format!(
                "{} rows in sidecar, {n} in index",
                meta.len()
            )));
        }
        if let Some((pos, m)) = meta.iter().enumerate().find(|(i, m)| m.row_id != *i) {
            return Err(IndexError::BadRows(format!(
                "line {} has row_id {}",
                pos + 1,
                m.row_id
            )));
        }
        Self::from_parts(dim, matrix, meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize;

    fn meta(i: usize) -> RowMeta {
        RowMeta {
            row_id: i,
            chunk_id: format!("c{i:04}"),
            doc_id: "d".into(),
            page_start: 1,
            page_end: 1,
        }
    }

    fn basis() -> VectorIndex {
        let vs: Vec<_> = (0..3)
            .map(|i| {
                let mut v = vec![0.0; 3];
                v[i] = 1.0;
                normalize(&v).unwrap()
            })
            .collect();
        VectorIndex::build(&vs, (0..3).map(meta).collect()).unwrap()
    }

    #[test]
    fn basis_index() {
        let ix = basis();
        assert_eq!((ix.len(), ix.dim()), (3, 3));
        let q = normalize(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(
            ix.search(&q, 1).unwrap(),
            vec![Hit {
                row_id: 1,
                score: 1.0
            }]
        );
        assert_eq!(ix.search(&q, 10).unwrap().len(), 3);
    }

    #[test]
    fn ties_break_by_row_id() {
        let ix = basis();
        let q = normalize(&[1.0, 1.0, 1.0]).unwrap();
        let rows: Vec<_> = ix.search(&q, 3).unwrap().iter().map(|h| h.row_id).collect();
        assert_eq!(rows, vec![0, 1, 2]);
    }

    #[test]
    fn build_rejects_bad_input() {
        let v = EmbeddingVector::new_unchecked(vec![0.9, 0.0]);
        assert!(matches!(
            VectorIndex::build(&[v], vec![meta(0)]),
            Err(IndexError::NotNormalized { row: 0, .. })
        ));
        let a = normalize(&[1.0, 0.0]).unwrap();
        let b = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            VectorIndex::build(&[a.clone(), b], vec![meta(0), meta(1)]),
            Err(IndexError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            VectorIndex::build(&[a.clone(), a], vec![meta(0), meta(0)]),
            Err(IndexError::DuplicateChunkRef { .. })
        ));
    }

    #[test]
    fn empty_index_and_bad_queries() {
        let ix = VectorIndex::build(&[], vec![]).unwrap();
        let q = normalize(&[1.0, 0.0]).unwrap();
        assert!(ix.search(&q, 5).unwrap().is_empty());
        let ix = basis();
        assert!(matches!(
            ix.search(&q, 1),
            Err(IndexError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            ix.search(&normalize(&[1.0, 0.0, 0.0]).unwrap(), 0),
            Err(IndexError::InvalidK)
        ));
    }

    #[test]
    fn persistence_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let ix = basis();
        ix.save(dir.path()).unwrap();
        let back = VectorIndex::load(dir.path()).unwrap();
        assert_eq!(back, ix);
        let bytes = fs::read(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(bytes.len(), 20 + 3 * 3 * 4 + 4);
        assert_eq!(&bytes[..4], b"CIRX");

        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 5] ^= 0x01;
        assert!(matches!(
            VectorIndex::decode_matrix(&flipped),
            Err(IndexError::ChecksumMismatch { .. })
        ));

        let mut v99 = bytes.clone();
        v99[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            VectorIndex::decode_matrix(&v99),
            Err(IndexError::UnsupportedVersion(99))
        ));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(
            VectorIndex::decode_matrix(&magic),
            Err(IndexError::BadMagic)
        ));

        assert!(matches!(
            VectorIndex::decode_matrix(&bytes[..bytes.len() - 1]),
            Err(IndexError::TruncatedFile)
        ));
        assert!(matches!(
            VectorIndex::decode_matrix(&bytes[..10]),
            Err(IndexError::TruncatedFile)
        ));
    }

    #[test]
    fn sidecar_must_match_index() {
        let dir = tempfile::tempdir().unwrap();
        basis().save(dir.path()).unwrap();
        let rows = fs::read_to_string(dir.path().join(ROWS_FILE)).unwrap();
        let first_two: String = rows.lines().take(2).map(|l| format!("{l}\n")).collect();
        fs::write(dir.path().join(ROWS_FILE), first_two).unwrap();
        assert!(matches!(
            VectorIndex::load(dir.path()),
            Err(IndexError::BadRows(_))
        ));
    }
}
