//! A loaded engine bundle and the reply logic shared by `chat` and `serve`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use clonebot_core::context::{FormatSpec, WordTokenizer};
use clonebot_core::corpus::{Corpus, Utterance};
use clonebot_core::embedding::HashingEmbedder;
use clonebot_core::generation::{generate_response, BigramLm, SamplerConfig};
use clonebot_core::retrieval::{
    build_speaker_indexes, context_text, BuildOptions, Retrieval, SpeakerIndexSet,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const LM_FILE: &str = "lm.json";
pub const NO_DATA_REASON: &str = "no-data-for-speaker";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplyMode {
    #[default]
    Retrieval,
    Sampler,
}

impl std::str::FromStr for ReplyMode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "retrieval" => Ok(ReplyMode::Retrieval),
            "sampler" => Ok(ReplyMode::Sampler),
            other => Err(CliError::Usage(format!("unknown mode `{other}`"))),
        }
    }
}

pub struct Engine {
    pub set: SpeakerIndexSet,
    pub tokenizer: WordTokenizer,
    pub lm: BigramLm,
}

/// Builds the retrieval indexes, tokenizer and reference model from
/// `train` and writes them to `out`.
pub fn build_engine(
    train: &Corpus,
    targets: &BTreeSet<String>,
    dim: usize,
    options: &BuildOptions,
    out: &Path,
) -> Result<Engine, CliError> {
    if dim == 0 {
        return Err(CliError::Usage("--dim must be positive".into()));
    }
    let set = build_speaker_indexes(train, targets, Arc::new(HashingEmbedder::new(dim)), options)?;
    set.save(out)?;
    let tokenizer = WordTokenizer::from_corpus(train);
    tokenizer.write_vocab(BufWriter::new(File::create(out.join(VOCAB_FILE))?))?;
    let lm = BigramLm::train_on_texts(train.utterances().map(|u| u.text.as_str()), &tokenizer);
    lm.save(BufWriter::new(File::create(out.join(LM_FILE))?))?;
    Ok(Engine { set, tokenizer, lm })
}

impl Engine {
    /// Loads a bundle. With `dim` set, the embedder is built with that
    /// dimension and must match the bundle's fingerprint.
    pub fn load(dir: &Path, dim: Option<usize>) -> Result<Self, CliError> {
        if !dir.join(clonebot_core::retrieval::MANIFEST_FILE).is_file() {
            return Err(CliError::Data(format!("{}: not an engine bundle", dir.display())));
        }
        let info = SpeakerIndexSet::inspect(dir)?;
        let dim = dim.unwrap_or(info.dim);
        if dim == 0 {
            return Err(CliError::Usage("--dim must be positive".into()));
        }
        let set = SpeakerIndexSet::load(dir, Arc::new(HashingEmbedder::new(dim)))?;
        let vocab = File::open(dir.join(VOCAB_FILE))
            .map_err(|e| CliError::data(dir.join(VOCAB_FILE).display(), e))?;
        let tokenizer = WordTokenizer::read_vocab(BufReader::new(vocab))?;
        let lm_file = File::open(dir.join(LM_FILE))
            .map_err(|e| CliError::data(dir.join(LM_FILE).display(), e))?;
        let lm = BigramLm::load(BufReader::new(lm_file))?;
        Ok(Self { set, tokenizer, lm })
    }

    pub fn has_target(&self, target: &str) -> bool {
        self.set.speaker(target).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker_id: String,
    pub text: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub response_text: String,
    pub distance: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub response_text: Option<String>,
    pub matched_context: Option<String>,
    pub distance: Option<f32>,
    pub candidates: Vec<CandidateView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplySettings {
    pub mode: ReplyMode,
    pub k: usize,
    pub sampler: SamplerConfig,
    pub format: FormatSpec,
}

impl Engine {
    /// Answers the latest turn of `history` as `target`.
    pub fn reply(
        &self,
        history: &[Turn],
        target: &str,
        settings: &ReplySettings,
        seed_offset: u64,
    ) -> Result<Reply, CliError> {
        match settings.mode {
            ReplyMode::Retrieval => self.retrieve(history, target, settings.k),
            ReplyMode::Sampler => self.sample(history, target, settings, seed_offset),
        }
    }

    fn retrieve(&self, history: &[Turn], target: &str, k: usize) -> Result<Reply, CliError> {
        let turns = self.set.context_turns();
        let window = &history[history.len().saturating_sub(turns)..];
        let query = context_text(window.iter().map(|t| t.text.as_str()));
        Ok(match self.set.retrieve_response(&query, target, k)? {
            Retrieval::Answer(r) => Reply {
                response_text: Some(r.response_text),
                matched_context: Some(r.matched_context_text),
                distance: Some(r.distance),
                candidates: r
                    .candidates
                    .into_iter()
                    .map(|c| CandidateView {
                        response_text: c.response_text,
                        distance: c.distance,
                    })
                    .collect(),
                reason: None,
            },
            Retrieval::NoAnswer { .. } => Reply {
                response_text: None,
                matched_context: None,
                distance: None,
                candidates: Vec::new(),
                reason: Some(NO_DATA_REASON.into()),
            },
        })
    }

    fn sample(
        &self,
        history: &[Turn],
        target: &str,
        settings: &ReplySettings,
        seed_offset: u64,
    ) -> Result<Reply, CliError> {
        let utterances: Vec<Utterance> = history
            .iter()
            .enumerate()
            .map(|(i, t)| Utterance {
                id: i as u64,
                conversation_id: "session".into(),
                speaker_id: t.speaker_id.clone(),
                timestamp: t.timestamp,
                text: t.text.clone(),
            })
            .collect();
        let config = SamplerConfig {
            seed: settings.sampler.seed.wrapping_add(seed_offset),
            ..settings.sampler
        };
        let text = generate_response(&self.lm, &self.tokenizer, &utterances, target, &settings.format, &config)?;
        Ok(Reply {
            response_text: Some(text),
            matched_context: None,
            distance: None,
            candidates: Vec::new(),
            reason: None,
        })
    }
}
