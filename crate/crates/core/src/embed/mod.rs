//! Text encoders and the row-per-node embedding matrix.
//!
//! Two encoders fill the frozen-encoder role: [`embed_hash`], a signed
//! feature-hashing bag of tokens that needs no model, and
//! [`remote::RemoteEncoder`], a client for an external embedding service.

pub mod remote;

use std::path::Path;

use ndarray::Array2;
use num_traits::Float;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;

const MAGIC: [u8; 4] = *b"TAGE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Orig,
    Verdict,
}

/// Dense `n × d` matrix of 32-bit floats, row `v` belonging to node `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
    empty: Vec<bool>,
    pub kind: EmbeddingKind,
}

impl EmbeddingMatrix {
    pub fn new(kind: EmbeddingKind, d: usize) -> Self {
        EmbeddingMatrix {
            n: 0,
            d,
            data: Vec::new(),
            empty: Vec::new(),
            kind,
        }
    }

    pub fn from_rows(kind: EmbeddingKind, d: usize, rows: Vec<(Vec<f32>, bool)>) -> Result<Self> {
        let mut m = EmbeddingMatrix::new(kind, d);
        for (row, empty) in rows {
            m.push(&row, empty)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: &[f32], empty: bool) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: row.len(),
            });
        }
        if let Some(bad) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::Response(format!(
                "non-finite entry at row {}, column {bad}",
                self.n
            )));
        }
        self.data.extend_from_slice(row);
        self.empty.push(empty);
        self.n += 1;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, v: usize) -> &[f32] {
        &self.data[v * self.d..(v + 1) * self.d]
    }

    pub fn is_empty_text(&self, v: usize) -> bool {
        self.empty[v]
    }

    pub fn to_array<F: Float>(&self) -> Array2<F> {
        Array2::from_shape_fn((self.n, self.d), |(r, c)| {
            F::from(self.data[r * self.d + c]).unwrap()
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 4 * self.data.len() + self.n);
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.extend_from_slice(&(self.d as u32).to_le_bytes());
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend(self.empty.iter().map(|&e| e as u8));
        io::atomic_write(path, &buf)
    }

    pub fn load(path: &Path, kind: EmbeddingKind) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::decode(&bytes, kind)
    }

    pub fn decode(bytes: &[u8], kind: EmbeddingKind) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Truncated {
                expected: 16,
                actual: bytes.len(),
            });
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found,
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let (n, d) = (word(8) as usize, word(12) as usize);
        let expected = 16 + 4 * n * d + n;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        let data = bytes[16..16 + 4 * n * d]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let empty = bytes[16 + 4 * n * d..].iter().map(|&b| b != 0).collect();
        Ok(EmbeddingMatrix {
            n,
            d,
            data,
            empty,
            kind,
        })
    }
}

/// Result of hashing one text.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedText {
    pub vector: Vec<f32>,
    /// True when the text contained no tokens.
    pub empty: bool,
}

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Signed feature hashing into `d` buckets followed by L2 normalization.
///
/// Bucket and sign come from disjoint halves of a SHA-256 digest of the
/// token, so they are independent and identical on every platform.
pub fn embed_hash(text: &str, d: usize) -> Result<HashedText> {
    if d < 8 || !d.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "hash embedding dimension must be a power of two >= 8, got {d}"
        )));
    }
    let mut acc = vec![0i64; d];
    let mut tokens = 0usize;
    for token in tokenize(text) {
        let digest = Sha256::digest(token.as_bytes());
        let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) as usize & (d - 1);
        let sign = if digest[8] & 1 == 0 { 1 } else { -1 };
        acc[bucket] += sign;
        tokens += 1;
    }
    let norm = acc.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
    let vector = if norm > 0.0 {
        acc.iter().map(|&c| (c as f64 / norm) as f32).collect()
    } else {
        vec![0.0; d]
    };
    Ok(HashedText {
        vector,
        empty: tokens == 0,
    })
}

pub fn embed_hash_all<S: AsRef<str>>(
    texts: &[S],
    d: usize,
    kind: EmbeddingKind,
) -> Result<EmbeddingMatrix> {
    let mut m = EmbeddingMatrix::new(kind, d);
    for t in texts {
        let h = embed_hash(t.as_ref(), d)?;
        m.push(&h.vector, h.empty)?;
    }
    Ok(m)
}

/// `a·b / (‖a‖‖b‖)`, or 0 when either vector is zero.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Encoder selection shared by the CLI and the injection step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderConfig {
    Hash {
        #[serde(default = "default_hash_dim")]
        dim: usize,
    },
    Remote(remote::RemoteConfig),
}

fn default_hash_dim() -> usize {
    64
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Hash {
            dim: default_hash_dim(),
        }
    }
}

impl EncoderConfig {
    pub fn encode<S: AsRef<str> + Sync>(
        &self,
        texts: &[S],
        kind: EmbeddingKind,
    ) -> Result<EmbeddingMatrix> {
        match self {
            EncoderConfig::Hash { dim } => embed_hash_all(texts, *dim, kind),
            EncoderConfig::Remote(cfg) => {
                let (m, stats) = remote::RemoteEncoder::new(cfg.clone())?.encode(texts, kind)?;
                log::info!(
                    "remote embedding: {} requests, {} retries",
                    stats.requests,
                    stats.retries
                );
                Ok(m)
            }
        }
    }
}
