//! K-nearest-neighbor indexes over embedding vectors.
//!
//! An [`IndexBuilder`] collects records; [`IndexBuilder::build`] seals them
//! into an immutable [`SealedIndex`] that can be searched from any number of
//! threads. Distances are always "smaller is better": Euclidean distance for
//! [`Metric::L2`] and `1 - dot` for [`Metric::CosineViaDot`].
//!
//! Both metrics accumulate in `f64` over the `f32` components in index order
//! and round the final distance to `f32`. Hits are ordered by ascending
//! distance, ties by ascending record id.

mod flat;
mod hnsw;
mod persist;

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingVector, UNIT_NORM_TOLERANCE};

pub use flat::FlatIndex;
pub use hnsw::{HnswIndex, HnswParams};

pub type RecordId = u64;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate record id {0}")]
    DuplicateId(RecordId),
    #[error("record {id} has norm {norm}, cosine metric needs unit vectors")]
    NotUnitNorm { id: RecordId, norm: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("index file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    #[serde(rename = "cosine")]
    CosineViaDot,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::L2 => "l2",
            Metric::CosineViaDot => "cosine",
        }
    }

    #[inline]
    pub fn distance(self, a: &[f32], b: &[f32]) -> f32 {
        match self {
            Metric::L2 => {
                let mut sum = 0f64;
                for (&x, &y) in a.iter().zip(b) {
                    let d = f64::from(x) - f64::from(y);
                    sum += d * d;
                }
                sum.sqrt() as f32
            }
            Metric::CosineViaDot => {
                let mut dot = 0f64;
                for (&x, &y) in a.iter().zip(b) {
                    dot += f64::from(x) * f64::from(y);
                }
                (1.0 - dot) as f32
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = IndexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2" | "L2" => Ok(Metric::L2),
            "cosine" | "cos" | "dot" => Ok(Metric::CosineViaDot),
            other => Err(IndexError::InvalidParam(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub record_id: RecordId,
    pub distance: f32,
}

impl SearchHit {
    pub fn cmp_rank(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.record_id.cmp(&other.record_id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum IndexKind {
    Flat,
    Hnsw(HnswParams),
}

impl IndexKind {
    pub fn name(&self) -> &'static str {
        match self {
            IndexKind::Flat => "flat",
            IndexKind::Hnsw(_) => "hnsw",
        }
    }
}

/// Row-major record storage shared by both index kinds.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct VectorStore {
    pub(crate) dim: usize,
    pub(crate) ids: Vec<RecordId>,
    pub(crate) data: Vec<f32>,
}

impl VectorStore {
    #[inline]
    pub(crate) fn vector(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    pub(crate) fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Insert phase of an index.
#[derive(Debug, Clone)]
pub struct IndexBuilder {
    kind: IndexKind,
    metric: Metric,
    store: VectorStore,
    seen: HashSet<RecordId>,
}

impl IndexBuilder {
    pub fn new(kind: IndexKind, metric: Metric, dim: usize) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::InvalidParam("dimension must be positive".into()));
        }
        if let IndexKind::Hnsw(params) = &kind {
            params.validate()?;
        }
        Ok(Self {
            kind,
            metric,
            store: VectorStore {
                dim,
                ids: Vec::new(),
                data: Vec::new(),
            },
            seen: HashSet::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.store.dim
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.ids.is_empty()
    }

    pub fn add(&mut self, id: RecordId, v: &EmbeddingVector) -> Result<(), IndexError> {
        self.add_slice(id, v.as_slice())
    }

    pub fn add_slice(&mut self, id: RecordId, v: &[f32]) -> Result<(), IndexError> {
        if v.len() != self.store.dim {
            return Err(IndexError::DimMismatch {
                expected: self.store.dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(IndexError::InvalidParam(format!("record {id} has non-finite values")));
        }
        if self.metric == Metric::CosineViaDot {
            let norm = crate::embedding::norm(v);
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(IndexError::NotUnitNorm { id, norm });
            }
        }
        if !self.seen.insert(id) {
            return Err(IndexError::DuplicateId(id));
        }
        self.store.ids.push(id);
        self.store.data.extend_from_slice(v);
        Ok(())
    }

    /// Seals the records. For HNSW this builds the graph in insertion order.
    pub fn build(self) -> SealedIndex {
        match self.kind {
            IndexKind::Flat => SealedIndex::Flat(FlatIndex::new(self.store, self.metric)),
            IndexKind::Hnsw(params) => {
                SealedIndex::Hnsw(HnswIndex::build(self.store, self.metric, params))
            }
        }
    }
}

/// Query phase of an index.
#[derive(Debug, Clone, PartialEq)]
pub enum SealedIndex {
    Flat(FlatIndex),
    Hnsw(HnswIndex),
}

impl SealedIndex {
    fn store(&self) -> &VectorStore {
        match self {
            SealedIndex::Flat(f) => &f.store,
            SealedIndex::Hnsw(h) => &h.store,
        }
    }

    pub fn metric(&self) -> Metric {
        match self {
            SealedIndex::Flat(f) => f.metric,
            SealedIndex::Hnsw(h) => h.metric,
        }
    }

    pub fn kind(&self) -> IndexKind {
        match self {
            SealedIndex::Flat(_) => IndexKind::Flat,
            SealedIndex::Hnsw(h) => IndexKind::Hnsw(h.params),
        }
    }

    pub fn dim(&self) -> usize {
        self.store().dim
    }

    pub fn len(&self) -> usize {
        self.store().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record ids in insertion order.
    pub fn record_ids(&self) -> &[RecordId] {
        &self.store().ids
    }

    pub fn vector(&self, record_id: RecordId) -> Option<&[f32]> {
        let store = self.store();
        store
            .ids
            .iter()
            .position(|&id| id == record_id)
            .map(|i| store.vector(i))
    }

    /// Up to `k` hits in ascending distance. An empty index yields no hits.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidParam("k must be at least 1".into()));
        }
        if query.len() != self.dim() {
            return Err(IndexError::DimMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        Ok(match self {
            SealedIndex::Flat(f) => f.search(query, k),
            SealedIndex::Hnsw(h) => h.search(query, k, h.params.ef_search),
        })
    }

    pub fn write_to<W: io::Write>(&self, out: W) -> Result<(), IndexError> {
        persist::write_index(self, out)
    }

    pub fn read_from<R: io::Read>(input: R) -> Result<Self, IndexError> {
        persist::read_index(input)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let file = std::fs::File::create(path)?;
        self.write_to(io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(io::BufReader::new(file))
    }
}
