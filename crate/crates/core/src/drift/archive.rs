//! The `EMB1` embedding archive format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"EMB1"
//! u32 vocab_size
//! u32 dim
//! vocab_size × (u32 byte_len, UTF-8 token bytes)
//! vocab_size × dim × f32, row-major
//! ```

use std::collections::HashMap;
use std::path::Path;

use super::DriftError;

pub const MAGIC: &[u8; 4] = b"EMB1";

/// A vocab-indexed embedding matrix for one checkpoint. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArchive {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingArchive {
    /// Validates that tokens are unique, `data` holds `tokens.len() * dim`
    /// values, and every value is finite.
    pub fn new(dim: usize, tokens: Vec<String>, data: Vec<f32>) -> Result<Self, DriftError> {
        if dim == 0 {
            return Err(DriftError::Format("dim must be at least 1".into()));
        }
        if data.len() != tokens.len() * dim {
            return Err(DriftError::Format(format!(
                "{} values for {} tokens of dim {dim}",
                data.len(),
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), i).is_some() {
                return Err(DriftError::Format(format!("duplicate token {token:?}")));
            }
            if data[i * dim..(i + 1) * dim].iter().any(|v| !v.is_finite()) {
                return Err(DriftError::NonFinite(token.clone()));
            }
        }
        Ok(Self {
            dim,
            tokens,
            index,
            data,
        })
    }

    pub fn from_rows<I, S>(dim: usize, rows: I) -> Result<Self, DriftError>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut tokens = Vec::new();
        let mut data = Vec::new();
        for (token, row) in rows {
            let token = token.into();
            if row.len() != dim {
                return Err(DriftError::Format(format!(
                    "row for {token:?} has {} values, expected {dim}",
                    row.len()
                )));
            }
            tokens.push(token);
            data.extend(row);
        }
        Self::new(dim, tokens, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens in row order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn row_at(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row(&self, token: &str) -> Option<&[f32]> {
        self.index_of(token).map(|i| self.row_at(i))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let token_bytes: usize = self.tokens.iter().map(|t| 4 + t.len()).sum();
        let mut out = Vec::with_capacity(12 + token_bytes + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.tokens.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            out.extend_from_slice(t.as_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DriftError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(DriftError::Format("bad magic, expected EMB1".into()));
        }
        let vocab_size = r.u32("vocab_size")? as usize;
        let dim = r.u32("dim")? as usize;
        // Each token needs at least its 4-byte length prefix.
        if vocab_size > r.remaining() / 4 {
            return Err(DriftError::Format(format!(
                "vocab_size {vocab_size} exceeds file length"
            )));
        }
        let mut tokens = Vec::with_capacity(vocab_size);
        for i in 0..vocab_size {
            let len = r.u32("token length")? as usize;
            let raw = r.take(len, "token bytes")?;
            let token = std::str::from_utf8(raw)
                .map_err(|_| DriftError::Format(format!("token {i} is not valid UTF-8")))?;
            tokens.push(token.to_string());
        }
        let expected = vocab_size
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| DriftError::Format("matrix size overflows".into()))?;
        if r.remaining() != expected {
            return Err(DriftError::Format(format!(
                "matrix needs {expected} bytes, file has {}",
                r.remaining()
            )));
        }
        let data = r.bytes[r.pos..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(dim, tokens, data)
    }

    pub fn load(path: &Path) -> Result<Self, DriftError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), DriftError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DriftError> {
        if self.remaining() < n {
            return Err(DriftError::Format(format!(
                "truncated archive while reading {what} at byte {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DriftError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
