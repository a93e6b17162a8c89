//! Corpus bundle written by `ingest`: the collapsed corpus as
//! `corpus.jsonl` plus `split.json` naming the test utterances.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use clonebot_core::corpus::{parse_jsonl, write_jsonl, Corpus, CorpusSplit, UtteranceId};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub test_fraction: f64,
    pub realized_fraction: f64,
    pub boundary_timestamp: i64,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub test_ids: Vec<UtteranceId>,
}

pub fn write_corpus_bundle(
    dir: &Path,
    corpus: &Corpus,
    split: &CorpusSplit,
    test_fraction: f64,
) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    write_jsonl(corpus, BufWriter::new(File::create(dir.join(CORPUS_FILE))?))?;
    let meta = SplitFile {
        test_fraction,
        realized_fraction: split.realized_fraction,
        boundary_timestamp: split.boundary_timestamp,
        train_utterances: split.train.len(),
        test_utterances: split.test.len(),
        test_ids: split.test_ids(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(SPLIT_FILE))?), &meta)?;
    Ok(())
}

pub struct CorpusBundle {
    pub corpus: Corpus,
    pub split: CorpusSplit,
    pub meta: SplitFile,
}

pub fn read_corpus_bundle(dir: &Path) -> Result<CorpusBundle, CliError> {
    let corpus_path = dir.join(CORPUS_FILE);
    let file = File::open(&corpus_path).map_err(|e| CliError::data(corpus_path.display(), e))?;
    let ingested = parse_jsonl(BufReader::new(file))?;
    if !ingested.report.malformed.is_empty() {
        return Err(CliError::Data(format!(
            "{}: {} malformed lines in a bundle corpus",
            corpus_path.display(),
            ingested.report.malformed.len()
        )));
    }
    let split_path = dir.join(SPLIT_FILE);
    let file = File::open(&split_path).map_err(|e| CliError::data(split_path.display(), e))?;
    let meta: SplitFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::data(split_path.display(), e))?;
    let known: BTreeSet<UtteranceId> = ingested.corpus.utterances().map(|u| u.id).collect();
    let test_ids: BTreeSet<UtteranceId> = meta.test_ids.iter().copied().collect();
    if let Some(id) = test_ids.iter().find(|id| !known.contains(id)) {
        return Err(CliError::Data(format!("split names unknown utterance {id}")));
    }
    let split = CorpusSplit::from_test_ids(&ingested.corpus, &test_ids);
    Ok(CorpusBundle {
        corpus: ingested.corpus,
        split,
        meta,
    })
}
