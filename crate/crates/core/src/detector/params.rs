use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use super::Real;
use crate::error::{Error, Result};
use crate::io;
use crate::seed;

pub const TENSOR_NAMES: [&str; 12] = [
    "W_f", "U_f", "W_i", "U_i", "W_o", "U_o", "b_f", "b_i", "b_o", "W1", "W2", "W",
];

const MAGIC: [u8; 4] = *b"CLLP";
const VERSION: u32 = 1;

/// Every trainable tensor. Biases are stored as `1 × D` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<F> {
    pub w_f: Array2<F>,
    pub u_f: Array2<F>,
    pub w_i: Array2<F>,
    pub u_i: Array2<F>,
    pub w_o: Array2<F>,
    pub u_o: Array2<F>,
    pub b_f: Array2<F>,
    pub b_i: Array2<F>,
    pub b_o: Array2<F>,
    pub w1: Array2<F>,
    pub w2: Array2<F>,
    pub w: Array2<F>,
}

fn shapes(big_d: usize, d: usize) -> [(usize, usize); 12] {
    let g = (big_d, big_d);
    let b = (1, big_d);
    [g, g, g, g, g, g, b, b, b, (big_d, d), (d, d), (d, big_d)]
}

impl<F: Real> FusionParams<F> {
    pub fn zeros(big_d: usize, d: usize) -> Self {
        let t = shapes(big_d, d).map(Array2::zeros);
        Self::from_tensors(t.into_iter().collect())
    }

    fn from_tensors(t: Vec<Array2<F>>) -> Self {
        let mut it = t.into_iter();
        let mut next = || it.next().unwrap();
        FusionParams {
            w_f: next(),
            u_f: next(),
            w_i: next(),
            u_i: next(),
            w_o: next(),
            u_o: next(),
            b_f: next(),
            b_i: next(),
            b_o: next(),
            w1: next(),
            w2: next(),
            w: next(),
        }
    }

    /// Embedding dimension D.
    pub fn input_dim(&self) -> usize {
        self.w_f.nrows()
    }

    /// Hidden dimension d.
    pub fn hidden_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn tensors(&self) -> [&Array2<F>; 12] {
        [
            &self.w_f, &self.u_f, &self.w_i, &self.u_i, &self.w_o, &self.u_o, &self.b_f,
            &self.b_i, &self.b_o, &self.w1, &self.w2, &self.w,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<F>; 12] {
        [
            &mut self.w_f,
            &mut self.u_f,
            &mut self.w_i,
            &mut self.u_i,
            &mut self.w_o,
            &mut self.u_o,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_o,
            &mut self.w1,
            &mut self.w2,
            &mut self.w,
        ]
    }

    pub fn sq_norm(&self) -> F {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|&x| x * x).sum::<F>())
            .sum()
    }

    pub fn cast<G: Real>(&self) -> FusionParams<G> {
        FusionParams::from_tensors(
            self.tensors()
                .iter()
                .map(|t| t.mapv(|x| G::c(x.to_f64().unwrap())))
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `params.bin`: magic, version, D, d, then every tensor in declaration
    /// order as little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.input_dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.hidden_dim() as u32).to_le_bytes());
        for t in self.tensors() {
            for &x in t.iter() {
                buf.extend_from_slice(&x.to_f32().unwrap().to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
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
        if word(4) != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: word(4),
            });
        }
        let (big_d, d) = (word(8) as usize, word(12) as usize);
        let sh = shapes(big_d, d);
        let floats: usize = sh.iter().map(|(r, c)| r * c).sum();
        let expected = 16 + 4 * floats;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        let mut off = 16;
        let mut tensors = Vec::with_capacity(12);
        for (r, c) in sh {
            let t = Array2::from_shape_fn((r, c), |(i, j)| {
                let at = off + 4 * (i * c + j);
                F::c(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64)
            });
            off += 4 * r * c;
            tensors.push(t);
        }
        Ok(Self::from_tensors(tensors))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Glorot-uniform weights from a seeded stream, zero biases.
pub fn init_params<F: Real>(big_d: usize, d: usize, seed: u64) -> Result<FusionParams<F>> {
    if big_d == 0 || d == 0 {
        return Err(Error::InvalidConfig(format!(
            "parameter dimensions must be >= 1, got D={big_d}, d={d}"
        )));
    }
    let mut rng = seed::rng(seed, "detector/init", &[]);
    let tensors = shapes(big_d, d)
        .iter()
        .enumerate()
        .map(|(k, &(r, c))| {
            if (6..9).contains(&k) {
                return Array2::zeros((r, c));
            }
            let bound = (6.0 / (r + c) as f64).sqrt();
            Array2::from_shape_simple_fn((r, c), || F::c(rng.gen_range(-bound..bound)))
        })
        .collect();
    Ok(FusionParams::from_tensors(tensors))
}
