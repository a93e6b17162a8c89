//! Dense utterance vectors.
//!
//! The reference [`HashingEmbedder`] is a signed feature-hashing bag of
//! words. Each lower-cased word piece `w` (see [`crate::text::split_words`])
//! adds `sign(w)` to component `bucket(w)`, and the sum is L2-normalized:
//!
//! ```text
//! fnv1a64(bytes)  = FNV-1a, offset 0xcbf29ce484222325, prime 0x100000001b3
//! fmix(z)         = z ^= z >> 30; z *= 0xbf58476d1ce4e5b9;
//!                   z ^= z >> 27; z *= 0x94d049bb133111eb; z ^ (z >> 31)
//! mix(seed, w)    = fmix(fnv1a64(utf8(w)) ^ seed)
//! bucket(w)       = mix(0x9e3779b97f4a7c15, w) mod dim
//! sign(w)         = +1 if mix(0xd1b54a32d192ed03, w) >> 63 == 0 else -1
//! ```
//!
//! Accumulation is exact (integer counts held in `f64`); the norm is
//! computed in `f64` and each component is rounded to `f32` after division.
//! If every contribution cancels, the vector is the one-hot at
//! `bucket(whole lower-cased text)`.
//!
//! Vector files (`CBVE`) are little-endian: magic `"CBVE"`, version `u16 = 1`,
//! dim `u32`, count `u64`, then `count × (utterance_id u64, dim × f32)`.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::corpus::UtteranceId;
use crate::text::split_words;

pub const DEFAULT_DIM: usize = 1024;
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
pub const BUCKET_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
pub const SIGN_SEED: u64 = 0xd1b5_4a32_d192_ed03;

const VECTOR_MAGIC: &[u8; 4] = b"CBVE";
const VECTOR_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("empty input text")]
    EmptyInput,
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("non-finite component at index {0}")]
    NonFinite(usize),
    #[error("vector file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    pub fn normalized(&self) -> Result<Self, EmbeddingError> {
        normalize(&self.0).map(Self)
    }
}

pub fn norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Scales to unit Euclidean norm. Zero vectors are rejected.
pub fn normalize(values: &[f32]) -> Result<Vec<f32>, EmbeddingError> {
    let n = norm(values);
    if n == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(values.iter().map(|&v| (f64::from(v) / n) as f32).collect())
}

/// Maps text to a fixed-dimension vector. Equal texts give equal vectors.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
    /// Identifies the embedding function; indexes record it so queries are
    /// embedded the same way as the stored keys.
    fn fingerprint(&self) -> String;
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn fmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn seeded_hash(seed: u64, token: &str) -> u64 {
    fmix64(fnv1a64(token.as_bytes()) ^ seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub const KIND: &'static str = "hashing-fnv1a-fmix64-v1";

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (seeded_hash(BUCKET_SEED, token) % self.dim as u64) as usize
    }

    pub fn sign(token: &str) -> f64 {
        if seeded_hash(SIGN_SEED, token) >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let lowered = text.trim().to_lowercase();
        if lowered.is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        let mut acc = vec![0f64; self.dim];
        for piece in split_words(&lowered) {
            acc[self.bucket(piece)] += Self::sign(piece);
        }
        let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = if n == 0.0 {
            let mut one_hot = vec![0f32; self.dim];
            one_hot[self.bucket(&lowered)] = 1.0;
            one_hot
        } else {
            acc.iter().map(|v| (v / n) as f32).collect()
        };
        Ok(EmbeddingVector(values))
    }

    fn fingerprint(&self) -> String {
        format!("{}/dim={}", Self::KIND, self.dim)
    }
}

/// Writes vectors in the `CBVE` format, in ascending id order.
pub fn save_vectors<W: Write>(
    vectors: &BTreeMap<UtteranceId, EmbeddingVector>,
    dim: usize,
    mut out: W,
) -> Result<(), EmbeddingError> {
    out.write_all(VECTOR_MAGIC)?;
    out.write_all(&VECTOR_VERSION.to_le_bytes())?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    out.write_all(&(vectors.len() as u64).to_le_bytes())?;
    for (id, v) in vectors {
        if v.dim() != dim {
            return Err(EmbeddingError::Format(format!(
                "vector {id} has dim {} but header says {dim}",
                v.dim()
            )));
        }
        out.write_all(&id.to_le_bytes())?;
        for x in v.as_slice() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), EmbeddingError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => EmbeddingError::Format("truncated stream".into()),
        _ => EmbeddingError::Io(e),
    })
}

pub fn load_vectors<R: Read>(
    mut input: R,
) -> Result<BTreeMap<UtteranceId, EmbeddingVector>, EmbeddingError> {
    let mut header = [0u8; 18];
    read_exact_or_truncated(&mut input, &mut header)?;
    if &header[..4] != VECTOR_MAGIC {
        return Err(EmbeddingError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VECTOR_VERSION {
        return Err(EmbeddingError::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[10..18].try_into().unwrap());
    if dim == 0 {
        return Err(EmbeddingError::Format("zero dimension".into()));
    }

    let mut out = BTreeMap::new();
    let mut record = vec![0u8; 8 + 4 * dim];
    for _ in 0..count {
        read_exact_or_truncated(&mut input, &mut record)?;
        let id = u64::from_le_bytes(record[..8].try_into().unwrap());
        let values: Vec<f32> = record[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let v = EmbeddingVector::new(values)
            .map_err(|e| EmbeddingError::Format(format!("vector {id}: {e}")))?;
        if out.insert(id, v).is_some() {
            return Err(EmbeddingError::Format(format!("duplicate id {id}")));
        }
    }
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(EmbeddingError::Format("trailing bytes after last vector".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn embed_is_deterministic_and_unit() {
        let e = HashingEmbedder::new(64);
        let a = e.embed("hello there, friend").unwrap();
        assert_eq!(a, e.embed("hello there, friend").unwrap());
        assert!(a.is_unit());
        assert_eq!(a.dim(), 64);
    }

    #[test]
    fn empty_text_rejected() {
        let e = HashingEmbedder::new(16);
        assert!(matches!(e.embed("   "), Err(EmbeddingError::EmptyInput)));
    }

    #[test]
    fn case_and_order_insensitive() {
        let e = HashingEmbedder::new(128);
        assert_eq!(e.embed("Good Morning").unwrap(), e.embed("morning good").unwrap());
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(matches!(normalize(&[0.0, 0.0]), Err(EmbeddingError::ZeroVector)));
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(v, vec![0.6, 0.8]);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(EmbeddingVector::new(vec![1.0, f32::NAN]).is_err());
    }

    #[test]
    fn vector_file_examples() {
        let mut map = BTreeMap::new();
        map.insert(3, EmbeddingVector::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        map.insert(9, EmbeddingVector::new(vec![-0.5, 0.0, f32::MIN_POSITIVE, 1e30]).unwrap());
        let mut buf = Vec::new();
        save_vectors(&map, 4, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"CBVE");
        assert_eq!(buf.len(), 18 + 2 * (8 + 16));
        let back = load_vectors(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        for (id, v) in &map {
            let got = &back[id];
            let bits = |v: &EmbeddingVector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(got), bits(v));
        }

        // Header claims 3 vectors, body has 2.
        let mut short = buf.clone();
        short[10..18].copy_from_slice(&3u64.to_le_bytes());
        assert!(matches!(load_vectors(&short[..]), Err(EmbeddingError::Format(_))));

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(load_vectors(&bad[..]), Err(EmbeddingError::Format(_))));

        let mut nan = buf.clone();
        nan[18 + 8..18 + 12].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(load_vectors(&nan[..]), Err(EmbeddingError::Format(_))));

        let mut wrong_dim = BTreeMap::new();
        wrong_dim.insert(1, EmbeddingVector::new(vec![1.0; 3]).unwrap());
        assert!(save_vectors(&wrong_dim, 4, Vec::new()).is_err());
    }
}
