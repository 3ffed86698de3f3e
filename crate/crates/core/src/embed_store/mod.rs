//! Embedding interchange: in-memory types, the PLYE/PLYT file formats and a
//! deterministic synthetic generator.
//!
//! Values are stored as f32 (the file precision) and every reduction
//! accumulates in f64.

mod format;
mod synth;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use format::Reader;
pub use format::{
    decode_any, decode_matrix, decode_tokens, encode_matrix, encode_tokens, read_any, read_matrix, read_tokens,
    write_matrix, write_tokens, EmbeddingFile, FORMAT_VERSION, POOLED_MAGIC, TOKEN_MAGIC,
};
pub use synth::{
    plant_contributions, raw_plant_features, synth_embeddings, synth_token_embeddings, PlantFeature, PlantSpec,
};

pub const DEFAULT_TEXT_DIM: u32 = 4096;
pub const DEFAULT_STRUCTURE_DIM: u32 = 1536;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("format version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("non-finite value in record {record} at position {index}")]
    NonFinite { record: usize, index: usize },
    #[error("unknown modality code {0}")]
    BadModality(u8),
    #[error("invalid UTF-8 string at byte {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("duplicate polymer id {0:?}")]
    DuplicateId(String),
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("record {id:?} has no tokens")]
    EmptyTokens { id: String },
    #[error("record {id:?} has {actual} values, expected {expected}")]
    WrongLength { id: String, expected: usize, actual: usize },
    #[error("{what} of length {len} does not fit a u16 length prefix")]
    TooLong { what: &'static str, len: usize },
    #[error("unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize },
    #[error("planted features need {needed} dims, embedding has {dim}")]
    PlantTooWide { needed: usize, dim: usize },
    #[error("cannot tokenize {id:?}: {source}")]
    Tokenize { id: String, source: crate::psmiles::LexError },
    #[error("{count} ids but {psmiles} PSMILES strings")]
    Misaligned { count: usize, psmiles: usize },
    #[error("no embedding for polymer {0:?}")]
    MissingId(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl StoreError {
    /// Stable machine-readable code for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::BadMagic => "BadMagic",
            StoreError::VersionMismatch { .. } => "VersionMismatch",
            StoreError::Truncated { .. } => "Truncated",
            StoreError::NonFinite { .. } => "NonFinite",
            StoreError::BadModality(_) => "BadModality",
            StoreError::InvalidUtf8 { .. } => "InvalidUtf8",
            StoreError::DuplicateId(_) => "DuplicateId",
            StoreError::ZeroDim => "ZeroDim",
            StoreError::EmptyTokens { .. } => "EmptyTokens",
            StoreError::WrongLength { .. } => "WrongLength",
            StoreError::TooLong { .. } => "TooLong",
            StoreError::TrailingBytes { .. } => "TrailingBytes",
            StoreError::PlantTooWide { .. } => "PlantTooWide",
            StoreError::Tokenize { .. } => "Tokenize",
            StoreError::Misaligned { .. } => "Misaligned",
            StoreError::MissingId(_) => "MissingId",
            StoreError::Io { .. } => "Io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TextLlm,
    Structure3d,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::TextLlm => 0,
            Modality::Structure3d => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, StoreError> {
        match code {
            0 => Ok(Modality::TextLlm),
            1 => Ok(Modality::Structure3d),
            other => Err(StoreError::BadModality(other)),
        }
    }

    pub fn default_dim(self) -> u32 {
        match self {
            Modality::TextLlm => DEFAULT_TEXT_DIM,
            Modality::Structure3d => DEFAULT_STRUCTURE_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub modality: Modality,
    pub dim: u32,
    pub source_tag: String,
    pub version: u16,
}

impl EmbeddingMeta {
    pub fn new(modality: Modality, dim: u32, source_tag: impl Into<String>) -> Self {
        Self { modality, dim, source_tag: source_tag.into(), version: FORMAT_VERSION }
    }

    pub fn with_default_dim(modality: Modality, source_tag: impl Into<String>) -> Self {
        Self::new(modality, modality.default_dim(), source_tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f32>,
}

/// One pooled vector per polymer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub meta: EmbeddingMeta,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingMatrix {
    pub fn new(meta: EmbeddingMeta, records: Vec<EmbeddingRecord>) -> Result<Self, StoreError> {
        let m = Self { meta, records };
        m.check()?;
        Ok(m)
    }

    pub(crate) fn check(&self) -> Result<(), StoreError> {
        if self.meta.dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        let dim = self.meta.dim as usize;
        let mut seen = HashSet::new();
        for (record, rec) in self.records.iter().enumerate() {
            if !seen.insert(rec.id.as_str()) {
                return Err(StoreError::DuplicateId(rec.id.clone()));
            }
            if rec.vector.len() != dim {
                return Err(StoreError::WrongLength { id: rec.id.clone(), expected: dim, actual: rec.vector.len() });
            }
            if let Some(index) = rec.vector.iter().position(|x| !x.is_finite()) {
                return Err(StoreError::NonFinite { record, index });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.meta.dim as usize
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.records.iter().find(|r| r.id == id).map(|r| r.vector.as_slice())
    }

    /// Gathers rows for `ids` into a dense row-major f64 buffer.
    pub fn gather(&self, ids: &[&str]) -> Result<Vec<f64>, StoreError> {
        let index = self.index();
        let mut out = Vec::with_capacity(ids.len() * self.dim());
        for id in ids {
            let &i = index.get(id).ok_or_else(|| StoreError::MissingId(id.to_string()))?;
            out.extend(self.records[i].vector.iter().map(|&x| f64::from(x)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub id: String,
    pub tokens: Vec<String>,
    /// `tokens.len() x dim`, row-major.
    pub vectors: Vec<f32>,
}

impl TokenRecord {
    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn row(&self, k: usize, dim: usize) -> &[f32] {
        &self.vectors[k * dim..(k + 1) * dim]
    }
}

/// Per-token vectors for each polymer, as retained before pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSet {
    pub meta: EmbeddingMeta,
    pub records: Vec<TokenRecord>,
}

impl TokenEmbeddingSet {
    pub fn new(meta: EmbeddingMeta, records: Vec<TokenRecord>) -> Result<Self, StoreError> {
        let t = Self { meta, records };
        t.check()?;
        Ok(t)
    }

    pub(crate) fn check(&self) -> Result<(), StoreError> {
        if self.meta.dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        let dim = self.meta.dim as usize;
        let mut seen = HashSet::new();
        for (record, rec) in self.records.iter().enumerate() {
            if !seen.insert(rec.id.as_str()) {
                return Err(StoreError::DuplicateId(rec.id.clone()));
            }
            if rec.tokens.is_empty() {
                return Err(StoreError::EmptyTokens { id: rec.id.clone() });
            }
            let expected = rec.tokens.len() * dim;
            if rec.vectors.len() != expected {
                return Err(StoreError::WrongLength { id: rec.id.clone(), expected, actual: rec.vectors.len() });
            }
            if let Some(index) = rec.vectors.iter().position(|x| !x.is_finite()) {
                return Err(StoreError::NonFinite { record, index });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.meta.dim as usize
    }

    pub fn get(&self, id: &str) -> Option<&TokenRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Pools every record into a matrix with the same meta.
    pub fn pooled(&self) -> Result<EmbeddingMatrix, StoreError> {
        let dim = self.dim();
        let records = self
            .records
            .iter()
            .map(|r| {
                let v = mean_pool(r, dim)?;
                Ok(EmbeddingRecord { id: r.id.clone(), vector: v.iter().map(|&x| x as f32).collect() })
            })
            .collect::<Result<Vec<_>, StoreError>>()?;
        EmbeddingMatrix::new(self.meta.clone(), records)
    }
}

/// Column means of a token record, accumulated in f64.
pub fn mean_pool(record: &TokenRecord, dim: usize) -> Result<Vec<f64>, StoreError> {
    let n = record.n_tokens();
    if n == 0 {
        return Err(StoreError::EmptyTokens { id: record.id.clone() });
    }
    if record.vectors.len() != n * dim {
        return Err(StoreError::WrongLength { id: record.id.clone(), expected: n * dim, actual: record.vectors.len() });
    }
    let mut acc = vec![0.0f64; dim];
    for row in record.vectors.chunks_exact(dim) {
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += f64::from(x);
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}
