//! PLYE (pooled) and PLYT (token-level) binary layouts.
//!
//! Header, little-endian, shared by both files:
//!
//! ```text
//! magic      [u8; 4]   "PLYE" or "PLYT"
//! version    u16       1
//! modality   u8        0 = text LLM, 1 = 3D structure
//! reserved   u8        0
//! dim        u32
//! count      u64       number of records
//! tag_len    u16
//! tag        [u8; tag_len]  UTF-8 source tag
//! ```
//!
//! PLYE record: `id_len u16 | id | dim x f32`.
//! PLYT record: `id_len u16 | id | n_tokens u16 | (tok_len u16 | tok) x n_tokens | n_tokens x dim x f32`.

use std::collections::HashSet;
use std::path::Path;

use super::{EmbeddingMatrix, EmbeddingMeta, EmbeddingRecord, Modality, StoreError, TokenEmbeddingSet, TokenRecord};

pub const POOLED_MAGIC: [u8; 4] = *b"PLYE";
pub const TOKEN_MAGIC: [u8; 4] = *b"PLYT";
pub const FORMAT_VERSION: u16 = 1;

/// Either kind of embedding file, as detected from its magic.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingFile {
    Pooled(EmbeddingMatrix),
    Tokens(TokenEmbeddingSet),
}

impl EmbeddingFile {
    pub fn meta(&self) -> &EmbeddingMeta {
        match self {
            EmbeddingFile::Pooled(m) => &m.meta,
            EmbeddingFile::Tokens(t) => &t.meta,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EmbeddingFile::Pooled(m) => m.records.len(),
            EmbeddingFile::Tokens(t) => t.records.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str16(&mut self, s: &str, what: &'static str) -> Result<(), StoreError> {
        let len = u16::try_from(s.len()).map_err(|_| StoreError::TooLong { what, len: s.len() })?;
        self.u16(len);
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn f32s(&mut self, xs: &[f32]) {
        self.0.reserve(xs.len() * 4);
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn header(&mut self, magic: [u8; 4], meta: &EmbeddingMeta, count: usize) -> Result<(), StoreError> {
        self.0.extend_from_slice(&magic);
        self.u16(meta.version);
        self.u8(meta.modality.code());
        self.u8(0);
        self.u32(meta.dim);
        self.u64(count as u64);
        self.str16(&meta.source_tag, "source tag")
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(StoreError::Truncated { offset: self.buf.len() }),
        }
    }
    pub(crate) fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }
    pub(crate) fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub(crate) fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub(crate) fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub(crate) fn str16(&mut self) -> Result<String, StoreError> {
        let len = self.u16()? as usize;
        let offset = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| StoreError::InvalidUtf8 { offset })
    }
    fn f32s(&mut self, n: usize, record: usize) -> Result<Vec<f32>, StoreError> {
        let bytes = self.take(n.checked_mul(4).ok_or(StoreError::Truncated { offset: self.buf.len() })?)?;
        let out: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(index) = out.iter().position(|x| !x.is_finite()) {
            return Err(StoreError::NonFinite { record, index });
        }
        Ok(out)
    }
    pub(crate) fn finish(&self) -> Result<(), StoreError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(StoreError::TrailingBytes { offset: self.pos })
        }
    }
}

fn read_header(r: &mut Reader<'_>, expected: [u8; 4]) -> Result<(EmbeddingMeta, u64), StoreError> {
    let magic = r.take(4).map_err(|_| StoreError::BadMagic)?;
    if magic != expected {
        return Err(StoreError::BadMagic);
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let modality = Modality::from_code(r.u8()?)?;
    let _reserved = r.u8()?;
    let dim = r.u32()?;
    if dim == 0 {
        return Err(StoreError::ZeroDim);
    }
    let count = r.u64()?;
    let source_tag = r.str16()?;
    Ok((EmbeddingMeta { modality, dim, source_tag, version }, count))
}

pub fn encode_matrix(m: &EmbeddingMatrix) -> Result<Vec<u8>, StoreError> {
    m.check()?;
    let mut w = Writer(Vec::new());
    w.header(POOLED_MAGIC, &m.meta, m.records.len())?;
    for rec in &m.records {
        w.str16(&rec.id, "polymer id")?;
        w.f32s(&rec.vector);
    }
    Ok(w.0)
}

pub fn decode_matrix(buf: &[u8]) -> Result<EmbeddingMatrix, StoreError> {
    let mut r = Reader::new(buf);
    let (meta, count) = read_header(&mut r, POOLED_MAGIC)?;
    let dim = meta.dim as usize;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for record in 0..count as usize {
        let id = r.str16()?;
        let vector = r.f32s(dim, record)?;
        if !seen.insert(id.clone()) {
            return Err(StoreError::DuplicateId(id));
        }
        records.push(EmbeddingRecord { id, vector });
    }
    r.finish()?;
    Ok(EmbeddingMatrix { meta, records })
}

pub fn encode_tokens(t: &TokenEmbeddingSet) -> Result<Vec<u8>, StoreError> {
    t.check()?;
    let mut w = Writer(Vec::new());
    w.header(TOKEN_MAGIC, &t.meta, t.records.len())?;
    for rec in &t.records {
        w.str16(&rec.id, "polymer id")?;
        let n = u16::try_from(rec.tokens.len())
            .map_err(|_| StoreError::TooLong { what: "token list", len: rec.tokens.len() })?;
        w.u16(n);
        for tok in &rec.tokens {
            w.str16(tok, "token")?;
        }
        w.f32s(&rec.vectors);
    }
    Ok(w.0)
}

pub fn decode_tokens(buf: &[u8]) -> Result<TokenEmbeddingSet, StoreError> {
    let mut r = Reader::new(buf);
    let (meta, count) = read_header(&mut r, TOKEN_MAGIC)?;
    let dim = meta.dim as usize;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for record in 0..count as usize {
        let id = r.str16()?;
        let n = r.u16()? as usize;
        if n == 0 {
            return Err(StoreError::EmptyTokens { id });
        }
        let tokens = (0..n).map(|_| r.str16()).collect::<Result<Vec<_>, _>>()?;
        let vectors = r.f32s(n * dim, record)?;
        if !seen.insert(id.clone()) {
            return Err(StoreError::DuplicateId(id));
        }
        records.push(TokenRecord { id, tokens, vectors });
    }
    r.finish()?;
    Ok(TokenEmbeddingSet { meta, records })
}

pub fn decode_any(buf: &[u8]) -> Result<EmbeddingFile, StoreError> {
    match buf.get(..4) {
        Some(m) if m == POOLED_MAGIC => decode_matrix(buf).map(EmbeddingFile::Pooled),
        Some(m) if m == TOKEN_MAGIC => decode_tokens(buf).map(EmbeddingFile::Tokens),
        _ => Err(StoreError::BadMagic),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, StoreError> {
    std::fs::read(path).map_err(|source| StoreError::Io { path: path.display().to_string(), source })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    std::fs::write(path, bytes).map_err(|source| StoreError::Io { path: path.display().to_string(), source })
}

pub fn write_matrix(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<(), StoreError> {
    write_file(path.as_ref(), &encode_matrix(m)?)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, StoreError> {
    decode_matrix(&read_file(path.as_ref())?)
}

pub fn write_tokens(t: &TokenEmbeddingSet, path: impl AsRef<Path>) -> Result<(), StoreError> {
    write_file(path.as_ref(), &encode_tokens(t)?)
}

pub fn read_tokens(path: impl AsRef<Path>) -> Result<TokenEmbeddingSet, StoreError> {
    decode_tokens(&read_file(path.as_ref())?)
}

pub fn read_any(path: impl AsRef<Path>) -> Result<EmbeddingFile, StoreError> {
    decode_any(&read_file(path.as_ref())?)
}
