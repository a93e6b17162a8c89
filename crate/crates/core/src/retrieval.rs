//! Per-speaker response retrieval.
//!
//! For a target speaker, every utterance they said that has a predecessor in
//! its conversation becomes a [`PairRecord`]: the preceding context is the
//! key, the utterance itself is the stored answer. A query is embedded,
//! matched against the target's context keys, and answered with the
//! response paired with the nearest key. Each target gets its own index, so
//! an answer can only ever be something the target actually said.
//!
//! Index record ids are the response utterance ids.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Utterance, UtteranceId};
use crate::embedding::{Embedder, EmbeddingError};
use crate::index::{IndexBuilder, IndexError, IndexKind, Metric, RecordId, SealedIndex};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAIRS_FILE: &str = "pairs.jsonl";
const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("unknown speaker `{0}`")]
    UnknownSpeaker(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("embedder fingerprint mismatch: bundle has `{expected}`, got `{got}`")]
    FingerprintMismatch { expected: String, got: String },
    #[error("engine bundle error: {0}")]
    Bundle(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponsePair {
    /// The utterance immediately before the response.
    pub context_id: UtteranceId,
    pub response_id: UtteranceId,
    pub target_speaker: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    #[serde(flatten)]
    pub pair: ResponsePair,
    /// Every utterance folded into the context, oldest first.
    pub context_ids: Vec<UtteranceId>,
    pub context_text: String,
    pub response_text: String,
}

/// Newline-joins context utterances, oldest first.
pub fn context_text<'a, I>(history: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    history.into_iter().collect::<Vec<_>>().join("\n")
}

/// Pairs for every utterance by `target` that has a predecessor. The
/// context is the newline-joined text of up to `context_turns` preceding
/// utterances, oldest first, whoever said them.
pub fn build_pairs(
    corpus: &Corpus,
    target: &str,
    context_turns: usize,
) -> Result<Vec<PairRecord>, RetrievalError> {
    if context_turns == 0 {
        return Err(RetrievalError::InvalidParam("context_turns must be positive".into()));
    }
    if !corpus.speakers().contains(target) {
        return Err(RetrievalError::UnknownSpeaker(target.to_string()));
    }
    let mut pairs = Vec::new();
    for conv in corpus.conversations() {
        let utts = &conv.utterances;
        for i in 1..utts.len() {
            if utts[i].speaker_id != target {
                continue;
            }
            let window: &[Utterance] = &utts[i.saturating_sub(context_turns)..i];
            pairs.push(PairRecord {
                pair: ResponsePair {
                    context_id: utts[i - 1].id,
                    response_id: utts[i].id,
                    target_speaker: target.to_string(),
                },
                context_ids: window.iter().map(|u| u.id).collect(),
                context_text: context_text(window.iter().map(|u| u.text.as_str())),
                response_text: utts[i].text.clone(),
            });
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub metric: Metric,
    pub kind: IndexKind,
    pub context_turns: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            metric: Metric::CosineViaDot,
            kind: IndexKind::Flat,
            context_turns: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpeakerIndex {
    index: SealedIndex,
    pairs: BTreeMap<RecordId, PairRecord>,
}

impl SpeakerIndex {
    pub fn index(&self) -> &SealedIndex {
        &self.index
    }

    pub fn pairs(&self) -> &BTreeMap<RecordId, PairRecord> {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub record_id: RecordId,
    pub response_text: String,
    pub context_text: String,
    pub distance: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub response_text: String,
    pub matched_context_text: String,
    pub distance: f32,
    pub response_id: UtteranceId,
    /// Nearest first; ties by lower record id.
    pub candidates: Vec<Candidate>,
    pub target_speaker: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Retrieval {
    Answer(RetrievalResult),
    /// The target has no indexed responses.
    NoAnswer { target_speaker: String },
}

impl Retrieval {
    pub fn answer(&self) -> Option<&RetrievalResult> {
        match self {
            Retrieval::Answer(r) => Some(r),
            Retrieval::NoAnswer { .. } => None,
        }
    }
}

/// One sealed index and pair table per target speaker. Immutable once
/// built; share it behind an `Arc` for concurrent queries.
#[derive(Clone)]
pub struct SpeakerIndexSet {
    embedder: Arc<dyn Embedder>,
    fingerprint: String,
    metric: Metric,
    kind: IndexKind,
    context_turns: usize,
    speakers: BTreeMap<String, SpeakerIndex>,
}

impl std::fmt::Debug for SpeakerIndexSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpeakerIndexSet")
            .field("fingerprint", &self.fingerprint)
            .field("metric", &self.metric)
            .field("kind", &self.kind)
            .field("context_turns", &self.context_turns)
            .field("targets", &self.speakers.keys().collect::<Vec<_>>())
            .finish()
    }
}

pub fn build_speaker_indexes(
    corpus: &Corpus,
    targets: &BTreeSet<String>,
    embedder: Arc<dyn Embedder>,
    options: &BuildOptions,
) -> Result<SpeakerIndexSet, RetrievalError> {
    if let Some(missing) = targets.iter().find(|t| !corpus.speakers().contains(*t)) {
        return Err(RetrievalError::UnknownSpeaker(missing.clone()));
    }
    let mut speakers = BTreeMap::new();
    for target in targets {
        let pairs = build_pairs(corpus, target, options.context_turns)?;
        let mut builder = IndexBuilder::new(options.kind, options.metric, embedder.dim())?;
        let mut table = BTreeMap::new();
        for rec in pairs {
            let v = embedder.embed(&rec.context_text)?;
            builder.add(rec.pair.response_id, &v)?;
            table.insert(rec.pair.response_id, rec);
        }
        speakers.insert(
            target.clone(),
            SpeakerIndex {
                index: builder.build(),
                pairs: table,
            },
        );
    }
    Ok(SpeakerIndexSet {
        fingerprint: embedder.fingerprint(),
        embedder,
        metric: options.metric,
        kind: options.kind,
        context_turns: options.context_turns,
        speakers,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestTarget {
    speaker_id: String,
    index_file: String,
    pairs: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    embedder_fingerprint: String,
    dim: usize,
    metric: Metric,
    index: IndexKind,
    context_turns: usize,
    targets: Vec<ManifestTarget>,
}

/// Bundle manifest fields a caller may need before loading the indexes,
/// e.g. to construct the matching embedder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleInfo {
    pub embedder_fingerprint: String,
    pub dim: usize,
    pub metric: Metric,
    pub kind: IndexKind,
    pub context_turns: usize,
    pub targets: Vec<String>,
}

impl SpeakerIndexSet {
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn context_turns(&self) -> usize {
        self.context_turns
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.speakers.keys().map(String::as_str)
    }

    pub fn speaker(&self, target: &str) -> Option<&SpeakerIndex> {
        self.speakers.get(target)
    }

    /// Every utterance id that contributed a context or a response.
    pub fn indexed_utterance_ids(&self) -> BTreeSet<UtteranceId> {
        self.speakers
            .values()
            .flat_map(|s| s.pairs.values())
            .flat_map(|p| p.context_ids.iter().copied().chain([p.pair.response_id]))
            .collect()
    }

    /// Answers `query_text` with what `target` said after the nearest
    /// stored context. `k` bounds the candidate list.
    pub fn retrieve_response(
        &self,
        query_text: &str,
        target: &str,
        k: usize,
    ) -> Result<Retrieval, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidParam("k must be at least 1".into()));
        }
        let speaker = self
            .speakers
            .get(target)
            .ok_or_else(|| RetrievalError::UnknownSpeaker(target.to_string()))?;
        if speaker.is_empty() {
            return Ok(Retrieval::NoAnswer {
                target_speaker: target.to_string(),
            });
        }
        let query = self.embedder.embed(query_text)?;
        let hits = speaker.index.search(query.as_slice(), k)?;
        let candidates: Vec<Candidate> = hits
            .iter()
            .map(|h| {
                let rec = &speaker.pairs[&h.record_id];
                Candidate {
                    record_id: h.record_id,
                    response_text: rec.response_text.clone(),
                    context_text: rec.context_text.clone(),
                    distance: h.distance,
                }
            })
            .collect();
        let Some(best) = candidates.first() else {
            return Ok(Retrieval::NoAnswer {
                target_speaker: target.to_string(),
            });
        };
        Ok(Retrieval::Answer(RetrievalResult {
            response_text: best.response_text.clone(),
            matched_context_text: best.context_text.clone(),
            distance: best.distance,
            response_id: best.record_id,
            candidates,
            target_speaker: target.to_string(),
        }))
    }

    /// Writes `manifest.json`, one `CBIX` file per target and `pairs.jsonl`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut targets = Vec::with_capacity(self.speakers.len());
        let mut pairs_out = BufWriter::new(File::create(dir.join(PAIRS_FILE))?);
        for (i, (speaker_id, sidx)) in self.speakers.iter().enumerate() {
            let index_file = format!("index-{i:04}.cbix");
            sidx.index.save(dir.join(&index_file))?;
            for rec in sidx.pairs.values() {
                serde_json::to_writer(&mut pairs_out, rec)?;
                pairs_out.write_all(b"\n")?;
            }
            targets.push(ManifestTarget {
                speaker_id: speaker_id.clone(),
                index_file,
                pairs: sidx.pairs.len(),
            });
        }
        pairs_out.flush()?;
        let manifest = Manifest {
            version: BUNDLE_VERSION,
            embedder_fingerprint: self.fingerprint.clone(),
            dim: self.embedder.dim(),
            metric: self.metric,
            index: self.kind,
            context_turns: self.context_turns,
            targets,
        };
        let file = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(file, &manifest)?;
        Ok(())
    }

    fn read_manifest(dir: &Path) -> Result<Manifest, RetrievalError> {
        let file = File::open(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest = serde_json::from_reader(BufReader::new(file))?;
        if manifest.version != BUNDLE_VERSION {
            return Err(RetrievalError::Bundle(format!(
                "unsupported bundle version {}",
                manifest.version
            )));
        }
        Ok(manifest)
    }

    pub fn inspect(dir: impl AsRef<Path>) -> Result<BundleInfo, RetrievalError> {
        let m = Self::read_manifest(dir.as_ref())?;
        Ok(BundleInfo {
            embedder_fingerprint: m.embedder_fingerprint,
            dim: m.dim,
            metric: m.metric,
            kind: m.index,
            context_turns: m.context_turns,
            targets: m.targets.into_iter().map(|t| t.speaker_id).collect(),
        })
    }

    /// Loads a bundle. `embedder` must have the fingerprint the bundle was
    /// built with.
    pub fn load(dir: impl AsRef<Path>, embedder: Arc<dyn Embedder>) -> Result<Self, RetrievalError> {
        let dir = dir.as_ref();
        let manifest = Self::read_manifest(dir)?;
        let got = embedder.fingerprint();
        if got != manifest.embedder_fingerprint {
            return Err(RetrievalError::FingerprintMismatch {
                expected: manifest.embedder_fingerprint,
                got,
            });
        }

        let mut tables: BTreeMap<String, BTreeMap<RecordId, PairRecord>> = BTreeMap::new();
        let reader = BufReader::new(File::open(dir.join(PAIRS_FILE))?);
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PairRecord = serde_json::from_str(&line)
                .map_err(|e| RetrievalError::Bundle(format!("pairs line {}: {e}", n + 1)))?;
            let table = tables.entry(rec.pair.target_speaker.clone()).or_default();
            if table.insert(rec.pair.response_id, rec).is_some() {
                return Err(RetrievalError::Bundle(format!(
                    "pairs line {}: duplicate record",
                    n + 1
                )));
            }
        }

        let mut speakers = BTreeMap::new();
        for target in &manifest.targets {
            let mut index = SealedIndex::load(dir.join(&target.index_file))?;
            if index.dim() != manifest.dim || index.metric() != manifest.metric {
                return Err(RetrievalError::Bundle(format!(
                    "index for `{}` disagrees with manifest dim/metric",
                    target.speaker_id
                )));
            }
            if let (SealedIndex::Hnsw(h), IndexKind::Hnsw(params)) = (&mut index, manifest.index) {
                h.set_ef_search(params.ef_search);
            }
            let pairs = tables.remove(&target.speaker_id).unwrap_or_default();
            let ids: BTreeSet<RecordId> = index.record_ids().iter().copied().collect();
            if ids.len() != pairs.len() || !pairs.keys().all(|id| ids.contains(id)) {
                return Err(RetrievalError::Bundle(format!(
                    "pair table for `{}` does not match its index",
                    target.speaker_id
                )));
            }
            speakers.insert(target.speaker_id.clone(), SpeakerIndex { index, pairs });
        }
        if let Some(extra) = tables.keys().next() {
            return Err(RetrievalError::Bundle(format!(
                "pairs for `{extra}` but no index in manifest"
            )));
        }
        if embedder.dim() != manifest.dim {
            return Err(RetrievalError::Bundle("embedder dim disagrees with manifest".into()));
        }

        Ok(Self {
            embedder,
            fingerprint: manifest.embedder_fingerprint,
            metric: manifest.metric,
            kind: manifest.index,
            context_turns: manifest.context_turns,
            speakers,
        })
    }
}
