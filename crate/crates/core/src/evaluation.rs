//! Corpus BLEU, perplexity, and the retrieval evaluation harness.
//!
//! BLEU is corpus-level, single-reference, n = 1..4 with uniform weights and
//! no smoothing: clipped n-gram matches and n-gram totals are summed over the
//! whole corpus before any logarithm is taken. Text is tokenized with
//! [`whitespace_tokens`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::TokenId;
use crate::corpus::{CorpusSplit, Utterance, UtteranceId};
use crate::generation::{check_distribution, GenerationError, LanguageModel};
use crate::retrieval::{context_text, Retrieval, RetrievalError, SpeakerIndexSet};
use crate::text::whitespace_tokens;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("token {token} at position {position} of sequence {sequence} has zero probability")]
    ZeroProbability {
        sequence: usize,
        position: usize,
        token: TokenId,
    },
    #[error("no test pairs for any requested target")]
    NoEvaluablePairs,
    #[error("train/test leak: indexed utterance {0} is not in the training split")]
    Leak(UtteranceId),
    #[error(transparent)]
    Model(#[from] GenerationError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub score: f64,
    /// `p1..p4`.
    pub precisions: [f64; MAX_ORDER],
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_length: u64,
    pub reference_length: u64,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

pub fn bleu_corpus<S: AsRef<str>>(
    candidates: &[Vec<S>],
    references: &[Vec<S>],
) -> Result<BleuReport, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let mut c = 0u64;
    let mut r = 0u64;
    for (cand, refr) in candidates.iter().zip(references) {
        c += cand.len() as u64;
        r += refr.len() as u64;
        for n in 1..=MAX_ORDER {
            let cand_counts = ngram_counts(cand, n);
            let ref_counts = ngram_counts(refr, n);
            for (gram, count) in &cand_counts {
                let limit = ref_counts.get(gram).copied().unwrap_or(0);
                matches[n - 1] += (*count).min(limit);
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1) as u64;
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if c == 0 {
        if r == 0 { 1.0 } else { 0.0 }
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        score,
        precisions,
        matches,
        totals,
        brevity_penalty,
        candidate_length: c,
        reference_length: r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub ppl: f64,
    pub token_count: u64,
    /// Sum of `-ln p` over every predicted token.
    pub total_nll: f64,
    pub log_base: String,
}

/// Perplexity of `lm` on `test`. Each sequence is predicted token by token
/// from `[eos] + prefix`, and its closing EOS is predicted too.
pub fn perplexity(
    lm: &dyn LanguageModel,
    test: &[Vec<TokenId>],
    eos: TokenId,
) -> Result<PerplexityReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let vocab = lm.vocab_size();
    let mut total_nll = 0.0;
    let mut token_count = 0u64;
    for (s, seq) in test.iter().enumerate() {
        let mut context = Vec::with_capacity(seq.len() + 1);
        context.push(eos);
        for (position, &token) in seq.iter().chain(std::iter::once(&eos)).enumerate() {
            let dist = lm.next_distribution(&context);
            check_distribution(&dist, vocab)?;
            let p = dist.get(token as usize).copied().unwrap_or(0.0);
            if p <= 0.0 {
                return Err(EvalError::ZeroProbability { sequence: s, position, token });
            }
            total_nll -= p.ln();
            token_count += 1;
            context.push(token);
        }
    }
    Ok(PerplexityReport {
        ppl: (total_nll / token_count as f64).exp(),
        token_count,
        total_nll,
        log_base: "natural".into(),
    })
}

/// One line of the parallel dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub query: String,
    /// Empty when the target had nothing to answer with.
    pub hypothesis: String,
    pub gold: String,
    pub target_speaker: String,
    pub distance: Option<f32>,
    pub gold_id: UtteranceId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEvalReport {
    pub bleu: BleuReport,
    pub pairs: usize,
    pub no_answer: usize,
    pub pairs_per_target: BTreeMap<String, usize>,
    /// Requested targets with no test pairs; they do not contribute.
    pub skipped_targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalEval {
    pub report: RetrievalEvalReport,
    pub rows: Vec<EvalRow>,
}

/// Each test conversation with its training utterances put back, in id
/// (chronological) order.
fn merged_conversations(split: &CorpusSplit) -> Vec<(Vec<Utterance>, BTreeSet<UtteranceId>)> {
    split
        .test
        .conversations()
        .iter()
        .map(|test_conv| {
            let mut utts = test_conv.utterances.clone();
            if let Some(train_conv) = split.train.conversation(&test_conv.conversation_id) {
                utts.extend(train_conv.utterances.iter().cloned());
            }
            utts.sort_by_key(|u| u.id);
            let test_ids = test_conv.utterances.iter().map(|u| u.id).collect();
            (utts, test_ids)
        })
        .collect()
}

/// Scores retrieval on the test split. Every test utterance by a target
/// that has a predecessor in its conversation is a pair: the query is the
/// preceding context (the engine's `context_turns`), the gold is the
/// utterance, the hypothesis is the retrieved response.
///
/// Fails if the engine has indexed any utterance outside `split.train`.
pub fn run_retrieval_eval(
    split: &CorpusSplit,
    engine: &SpeakerIndexSet,
    targets: &BTreeSet<String>,
) -> Result<RetrievalEval, EvalError> {
    let train_ids: BTreeSet<UtteranceId> = split.train.utterances().map(|u| u.id).collect();
    if let Some(leak) = engine
        .indexed_utterance_ids()
        .into_iter()
        .find(|id| !train_ids.contains(id))
    {
        return Err(EvalError::Leak(leak));
    }
    if let Some(missing) = targets.iter().find(|t| engine.speaker(t).is_none()) {
        return Err(RetrievalError::UnknownSpeaker(missing.clone()).into());
    }

    let turns = engine.context_turns();
    let mut rows = Vec::new();
    for (utts, test_ids) in merged_conversations(split) {
        for i in 1..utts.len() {
            let u = &utts[i];
            if !test_ids.contains(&u.id) || !targets.contains(&u.speaker_id) {
                continue;
            }
            let window = &utts[i.saturating_sub(turns)..i];
            let query = context_text(window.iter().map(|w| w.text.as_str()));
            let (hypothesis, distance) = match engine.retrieve_response(&query, &u.speaker_id, 1)? {
                Retrieval::Answer(r) => (r.response_text, Some(r.distance)),
                Retrieval::NoAnswer { .. } => (String::new(), None),
            };
            rows.push(EvalRow {
                query,
                hypothesis,
                gold: u.text.clone(),
                target_speaker: u.speaker_id.clone(),
                distance,
                gold_id: u.id,
            });
        }
    }

    let mut pairs_per_target: BTreeMap<String, usize> = BTreeMap::new();
    for row in &rows {
        *pairs_per_target.entry(row.target_speaker.clone()).or_default() += 1;
    }
    let skipped_targets: Vec<String> = targets
        .iter()
        .filter(|t| !pairs_per_target.contains_key(*t))
        .cloned()
        .collect();
    if rows.is_empty() {
        return Err(EvalError::NoEvaluablePairs);
    }

    let candidates: Vec<Vec<String>> = rows.iter().map(|r| whitespace_tokens(&r.hypothesis)).collect();
    let references: Vec<Vec<String>> = rows.iter().map(|r| whitespace_tokens(&r.gold)).collect();
    let bleu = bleu_corpus(&candidates, &references)?;
    Ok(RetrievalEval {
        report: RetrievalEvalReport {
            bleu,
            pairs: rows.len(),
            no_answer: rows.iter().filter(|r| r.distance.is_none()).count(),
            pairs_per_target,
            skipped_targets,
        },
        rows,
    })
}

pub fn escape_tsv_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub const TSV_HEADER: &str = "query\thypothesis\tgold\ttarget_speaker\tdistance";

/// Header row, then one row per pair. Backslash, tab, CR and LF inside a
/// field are written as `\\`, `\t`, `\r`, `\n`. Distances use six decimals
/// and are empty for no-answer rows.
pub fn write_parallel_tsv<W: Write>(rows: &[EvalRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{TSV_HEADER}")?;
    for r in rows {
        let distance = r.distance.map(|d| format!("{d:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            escape_tsv_field(&r.query),
            escape_tsv_field(&r.hypothesis),
            escape_tsv_field(&r.gold),
            escape_tsv_field(&r.target_speaker),
            distance
        )?;
    }
    out.flush()
}
