//! Chat-history corpora: ingestion, collapsing of same-speaker runs and the
//! chronological train/test split.
//!
//! Utterances are grouped by conversation in order of first appearance and
//! stably ordered by timestamp inside each conversation. Ids are then handed
//! out densely in that iteration order, so writing a corpus back out with
//! [`write_jsonl`] and parsing it again reproduces the same ids.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::normalize_text;

pub type UtteranceId = u64;

pub const DEFAULT_JOINER: &str = " ";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("ingestion failed: {0}")]
    Io(#[from] io::Error),
    #[error("corpus rejected: {malformed} of {total} lines malformed")]
    Rejected { malformed: usize, total: usize },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("split error: {0}")]
    Split(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: UtteranceId,
    pub conversation_id: String,
    pub speaker_id: String,
    /// Milliseconds since the epoch.
    pub timestamp: i64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn new(conversation_id: impl Into<String>, utterances: Vec<Utterance>) -> Self {
        Self {
            conversation_id: conversation_id.into(),
            utterances,
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    conversations: Vec<Conversation>,
    speakers: BTreeSet<String>,
}

impl Corpus {
    /// Wraps conversations as given. Empty conversations are dropped.
    pub fn new(conversations: Vec<Conversation>) -> Self {
        let conversations: Vec<Conversation> =
            conversations.into_iter().filter(|c| !c.is_empty()).collect();
        let speakers = conversations
            .iter()
            .flat_map(|c| c.utterances.iter().map(|u| u.speaker_id.clone()))
            .collect();
        Self {
            conversations,
            speakers,
        }
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn speakers(&self) -> &BTreeSet<String> {
        &self.speakers
    }

    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.conversations.iter().flat_map(|c| c.utterances.iter())
    }

    pub fn conversation(&self, conversation_id: &str) -> Option<&Conversation> {
        self.conversations
            .iter()
            .find(|c| c.conversation_id == conversation_id)
    }

    /// Number of utterances.
    pub fn len(&self) -> usize {
        self.conversations.iter().map(Conversation::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    /// Collapses every conversation with [`collapse_consecutive`].
    /// Reassigns ids `0..len` in iteration order. Relative order is kept, so
    /// a renumbered corpus survives a JSONL round trip unchanged.
    pub fn renumbered(&self) -> Corpus {
        let mut next = 0;
        let conversations = self
            .conversations
            .iter()
            .map(|c| {
                let utterances = c
                    .utterances
                    .iter()
                    .map(|u| {
                        let mut u = u.clone();
                        u.id = next;
                        next += 1;
                        u
                    })
                    .collect();
                Conversation::new(c.conversation_id.clone(), utterances)
            })
            .collect();
        Corpus::new(conversations)
    }

    pub fn collapse(&self, joiner: &str) -> Corpus {
        Corpus::new(
            self.conversations
                .iter()
                .map(|c| collapse_consecutive(c, joiner))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedLine {
    /// 1-based line (or CSV record) number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Non-blank lines seen.
    pub total: usize,
    pub malformed: Vec<MalformedLine>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub report: ParseReport,
}

struct RawRecord {
    conversation_id: String,
    speaker_id: String,
    timestamp: Option<i64>,
    text: String,
}

/// Parses one JSON object per line. Blank lines are skipped; anything else
/// that fails validation is reported as malformed.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Ingested, CorpusError> {
    let mut report = ParseReport::default();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.total += 1;
        match parse_json_record(&line) {
            Ok(rec) => records.push(rec),
            Err(reason) => report.malformed.push(MalformedLine {
                line: idx + 1,
                reason,
            }),
        }
    }
    assemble(records, report)
}

fn parse_json_record(line: &str) -> Result<RawRecord, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid json: {e}"))?;
    let obj = value.as_object().ok_or("line is not a json object")?;
    let string_field = |key: &str| -> Result<String, String> {
        match obj.get(key) {
            Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
            Some(Value::String(_)) => Err(format!("empty `{key}`")),
            Some(_) => Err(format!("`{key}` is not a string")),
            None => Err(format!("missing `{key}`")),
        }
    };
    let conversation_id = string_field("conversation_id")?;
    let speaker_id = string_field("speaker_id")?;
    let timestamp = match obj.get("timestamp") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_i64().ok_or("`timestamp` is not an integer")?),
    };
    let raw_text = match obj.get("text") {
        Some(Value::String(s)) => s,
        Some(_) => return Err("`text` is not a string".into()),
        None => return Err("missing `text`".into()),
    };
    record(conversation_id, speaker_id, timestamp, raw_text)
}

fn record(
    conversation_id: String,
    speaker_id: String,
    timestamp: Option<i64>,
    raw_text: &str,
) -> Result<RawRecord, String> {
    let text = normalize_text(raw_text);
    if text.is_empty() {
        return Err("empty text".into());
    }
    Ok(RawRecord {
        conversation_id,
        speaker_id,
        timestamp,
        text,
    })
}

/// Header names for the CSV columns holding each utterance field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub conversation_id: String,
    pub speaker_id: String,
    /// Optional: rows get the previous row's timestamp when absent.
    pub timestamp: Option<String>,
    pub text: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            conversation_id: "conversation_id".into(),
            speaker_id: "speaker_id".into(),
            timestamp: Some("timestamp".into()),
            text: "text".into(),
        }
    }
}

struct ResolvedColumns {
    conversation_id: usize,
    speaker_id: usize,
    timestamp: Option<usize>,
    text: usize,
}

impl ColumnMap {
    fn resolve(&self, headers: &csv::StringRecord) -> Result<ResolvedColumns, CorpusError> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| CorpusError::Schema(format!("missing column `{name}`")))
        };
        Ok(ResolvedColumns {
            conversation_id: find(&self.conversation_id)?,
            speaker_id: find(&self.speaker_id)?,
            timestamp: self.timestamp.as_deref().map(find).transpose()?,
            text: find(&self.text)?,
        })
    }
}

/// Parses a CSV export with a header row. Quoted fields may span lines.
pub fn parse_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<Ingested, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let cols = columns.resolve(rdr.headers()?)?;
    let mut report = ParseReport::default();
    let mut records = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let row = match row {
            Ok(row) => row,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                report.total += 1;
                report.malformed.push(MalformedLine {
                    line: idx + 1,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        report.total += 1;
        match csv_record(&row, &cols) {
            Ok(rec) => records.push(rec),
            Err(reason) => report.malformed.push(MalformedLine {
                line: idx + 1,
                reason,
            }),
        }
    }
    assemble(records, report)
}

fn csv_record(row: &csv::StringRecord, cols: &ResolvedColumns) -> Result<RawRecord, String> {
    let field = |i: usize, name: &str| -> Result<&str, String> {
        row.get(i).ok_or_else(|| format!("row has no `{name}` field"))
    };
    let conversation_id = field(cols.conversation_id, "conversation_id")?;
    let speaker_id = field(cols.speaker_id, "speaker_id")?;
    if conversation_id.is_empty() || speaker_id.is_empty() {
        return Err("empty conversation or speaker id".into());
    }
    let timestamp = match cols.timestamp {
        Some(i) => match row.get(i).map(str::trim) {
            None | Some("") => None,
            Some(raw) => Some(
                raw.parse::<i64>()
                    .map_err(|_| format!("bad timestamp `{raw}`"))?,
            ),
        },
        None => None,
    };
    let text = field(cols.text, "text")?;
    record(conversation_id.into(), speaker_id.into(), timestamp, text)
}

fn assemble(records: Vec<RawRecord>, report: ParseReport) -> Result<Ingested, CorpusError> {
    let malformed = report.malformed.len();
    if malformed * 2 > report.total {
        return Err(CorpusError::Rejected {
            malformed,
            total: report.total,
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<RawRecord>> = HashMap::new();
    for rec in records {
        let group = groups.entry(rec.conversation_id.clone()).or_insert_with(|| {
            order.push(rec.conversation_id.clone());
            Vec::new()
        });
        group.push(rec);
    }

    let mut next_id: UtteranceId = 0;
    let mut conversations = Vec::with_capacity(order.len());
    for conversation_id in order {
        let group = groups.remove(&conversation_id).unwrap_or_default();
        let mut last_ts = 0i64;
        let mut stamped: Vec<(i64, RawRecord)> = group
            .into_iter()
            .map(|rec| {
                let ts = rec.timestamp.unwrap_or(last_ts);
                last_ts = ts;
                (ts, rec)
            })
            .collect();
        stamped.sort_by_key(|(ts, _)| *ts);
        let utterances = stamped
            .into_iter()
            .map(|(timestamp, rec)| {
                let id = next_id;
                next_id += 1;
                Utterance {
                    id,
                    conversation_id: rec.conversation_id,
                    speaker_id: rec.speaker_id,
                    timestamp,
                    text: rec.text,
                }
            })
            .collect();
        conversations.push(Conversation::new(conversation_id, utterances));
    }

    Ok(Ingested {
        corpus: Corpus::new(conversations),
        report,
    })
}

#[derive(Serialize)]
struct JsonlRow<'a> {
    conversation_id: &'a str,
    speaker_id: &'a str,
    timestamp: i64,
    text: &'a str,
}

/// Writes the corpus in the JSONL ingestion format, in iteration order.
pub fn write_jsonl<W: Write>(corpus: &Corpus, mut out: W) -> io::Result<()> {
    for u in corpus.utterances() {
        let row = JsonlRow {
            conversation_id: &u.conversation_id,
            speaker_id: &u.speaker_id,
            timestamp: u.timestamp,
            text: &u.text,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Merges maximal runs of same-speaker utterances. The merged utterance
/// keeps the first utterance's id and timestamp and joins the texts with
/// `joiner`. Runs are merged regardless of the time gap between them.
pub fn collapse_consecutive(conversation: &Conversation, joiner: &str) -> Conversation {
    let mut merged: Vec<Utterance> = Vec::with_capacity(conversation.len());
    for u in &conversation.utterances {
        match merged.last_mut() {
            Some(prev) if prev.speaker_id == u.speaker_id => {
                prev.text.push_str(joiner);
                prev.text.push_str(&u.text);
            }
            _ => merged.push(u.clone()),
        }
    }
    Conversation::new(conversation.conversation_id.clone(), merged)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Corpus,
    pub test: Corpus,
    /// Earliest test timestamp; `i64::MAX` when the test side is empty.
    pub boundary_timestamp: i64,
    /// Test share of all utterances after speaker-coverage repair.
    pub realized_fraction: f64,
}

impl CorpusSplit {
    pub fn test_ids(&self) -> Vec<UtteranceId> {
        self.test.utterances().map(|u| u.id).collect()
    }

    /// Rebuilds a split from a full corpus and the ids assigned to test.
    pub fn from_test_ids(corpus: &Corpus, test_ids: &BTreeSet<UtteranceId>) -> CorpusSplit {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for conv in corpus.conversations() {
            let (te, tr): (Vec<_>, Vec<_>) = conv
                .utterances
                .iter()
                .cloned()
                .partition(|u| test_ids.contains(&u.id));
            train.push(Conversation::new(conv.conversation_id.clone(), tr));
            test.push(Conversation::new(conv.conversation_id.clone(), te));
        }
        finish_split(Corpus::new(train), Corpus::new(test))
    }
}

fn finish_split(train: Corpus, test: Corpus) -> CorpusSplit {
    let boundary_timestamp = test.utterances().map(|u| u.timestamp).min().unwrap_or(i64::MAX);
    let total = train.len() + test.len();
    let realized_fraction = if total == 0 {
        0.0
    } else {
        test.len() as f64 / total as f64
    };
    CorpusSplit {
        train,
        test,
        boundary_timestamp,
        realized_fraction,
    }
}

/// Number of trailing utterances a conversation of `len` sends to test.
pub fn test_count(len: usize, test_fraction: f64) -> usize {
    ((len as f64) * test_fraction + 1e-9).floor() as usize
}

/// Sends the trailing `test_fraction` of each conversation to test, then
/// shrinks test suffixes until every test speaker also speaks in train.
///
/// The repair moves the earliest test utterances back to train (up to and
/// including the last one by an uncovered speaker), so test stays a
/// chronological suffix of each conversation.
pub fn chronological_split(corpus: &Corpus, test_fraction: f64) -> Result<CorpusSplit, CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::Split(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    if corpus.is_empty() {
        return Err(CorpusError::Split("corpus is empty".into()));
    }

    let convs = corpus.conversations();
    let mut cuts: Vec<usize> = convs
        .iter()
        .map(|c| c.len() - test_count(c.len(), test_fraction))
        .collect();

    let mut covered: BTreeSet<&str> = BTreeSet::new();
    for (conv, &cut) in convs.iter().zip(&cuts) {
        covered.extend(conv.utterances[..cut].iter().map(|u| u.speaker_id.as_str()));
    }
    for (conv, cut) in convs.iter().zip(cuts.iter_mut()) {
        let uncovered = conv.utterances[*cut..]
            .iter()
            .rposition(|u| !covered.contains(u.speaker_id.as_str()));
        if let Some(offset) = uncovered {
            let new_cut = *cut + offset + 1;
            covered.extend(
                conv.utterances[*cut..new_cut]
                    .iter()
                    .map(|u| u.speaker_id.as_str()),
            );
            *cut = new_cut;
        }
    }

    if cuts.iter().all(|&c| c == 0) {
        return Err(CorpusError::Split(format!(
            "test fraction {test_fraction} leaves no training utterances"
        )));
    }

    let mut train = Vec::with_capacity(convs.len());
    let mut test = Vec::with_capacity(convs.len());
    for (conv, &cut) in convs.iter().zip(&cuts) {
        let (head, tail) = conv.utterances.split_at(cut);
        train.push(Conversation::new(conv.conversation_id.clone(), head.to_vec()));
        test.push(Conversation::new(conv.conversation_id.clone(), tail.to_vec()));
    }
    Ok(finish_split(Corpus::new(train), Corpus::new(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(rows: &[(&str, &str)]) -> Conversation {
        let utterances = rows
            .iter()
            .enumerate()
            .map(|(i, (s, t))| Utterance {
                id: i as u64,
                conversation_id: "c".into(),
                speaker_id: (*s).into(),
                timestamp: i as i64 * 1000,
                text: (*t).into(),
            })
            .collect();
        Conversation::new("c", utterances)
    }

    fn texts(c: &Conversation) -> Vec<(&str, &str)> {
        c.utterances
            .iter()
            .map(|u| (u.speaker_id.as_str(), u.text.as_str()))
            .collect()
    }

    #[test]
    fn parses_three_lines() {
        let data = r#"{"conversation_id":"c1","speaker_id":"A","timestamp":1,"text":"hi"}
{"conversation_id":"c1","speaker_id":"B","timestamp":2,"text":"hello"}
{"conversation_id":"c1","speaker_id":"A","timestamp":3,"text":"bye"}
"#;
        let ing = parse_jsonl(data.as_bytes()).unwrap();
        assert_eq!(ing.corpus.conversations().len(), 1);
        assert_eq!(ing.corpus.len(), 3);
        assert_eq!(ing.corpus.speakers().len(), 2);
        assert!(ing.report.malformed.is_empty());
        let ids: Vec<_> = ing.corpus.utterances().map(|u| u.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn empty_stream_is_empty_corpus() {
        let ing = parse_jsonl(&b""[..]).unwrap();
        assert!(ing.corpus.is_empty());
        assert_eq!(ing.corpus.conversations().len(), 0);
    }

    #[test]
    fn empty_text_is_malformed() {
        let data = r#"{"conversation_id":"c1","speaker_id":"A","timestamp":1,"text":"hi"}
{"conversation_id":"c1","speaker_id":"B","timestamp":2,"text":"   "}
{"conversation_id":"c1","speaker_id":"A","timestamp":3,"text":"bye"}
{"conversation_id":"c1","speaker_id":"B","timestamp":4,"text":"ok"}
"#;
        let ing = parse_jsonl(data.as_bytes()).unwrap();
        assert_eq!(ing.corpus.len(), 3);
        assert_eq!(ing.report.malformed.len(), 1);
        assert_eq!(ing.report.malformed[0].line, 2);
    }

    #[test]
    fn mostly_malformed_is_rejected() {
        let data = "not json\n{\"conversation_id\":\"c\",\"speaker_id\":\"A\",\"text\":\"x\"}\n[1]\n";
        match parse_jsonl(data.as_bytes()) {
            Err(CorpusError::Rejected { malformed, total }) => {
                assert_eq!((malformed, total), (2, 3));
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn missing_timestamp_inherits_previous_row() {
        let data = r#"{"conversation_id":"c1","speaker_id":"A","text":"first"}
{"conversation_id":"c1","speaker_id":"B","timestamp":50,"text":"second"}
{"conversation_id":"c1","speaker_id":"A","timestamp":null,"text":"third"}
"#;
        let ing = parse_jsonl(data.as_bytes()).unwrap();
        let ts: Vec<_> = ing.corpus.utterances().map(|u| u.timestamp).collect();
        assert_eq!(ts, vec![0, 50, 50]);
    }

    #[test]
    fn interleaved_conversations_get_ids_in_iteration_order() {
        let data = r#"{"conversation_id":"x","speaker_id":"A","timestamp":1,"text":"a"}
{"conversation_id":"y","speaker_id":"B","timestamp":2,"text":"b"}
{"conversation_id":"x","speaker_id":"B","timestamp":3,"text":"c"}
"#;
        let ing = parse_jsonl(data.as_bytes()).unwrap();
        let got: Vec<_> = ing
            .corpus
            .utterances()
            .map(|u| (u.id, u.conversation_id.as_str(), u.text.as_str()))
            .collect();
        assert_eq!(got, vec![(0, "x", "a"), (1, "x", "c"), (2, "y", "b")]);
    }

    #[test]
    fn out_of_order_timestamps_are_sorted_stably() {
        let data = r#"{"conversation_id":"x","speaker_id":"A","timestamp":5,"text":"late"}
{"conversation_id":"x","speaker_id":"B","timestamp":1,"text":"early"}
{"conversation_id":"x","speaker_id":"A","timestamp":5,"text":"late2"}
"#;
        let ing = parse_jsonl(data.as_bytes()).unwrap();
        let got: Vec<_> = ing.corpus.utterances().map(|u| u.text.as_str()).collect();
        assert_eq!(got, vec!["early", "late", "late2"]);
    }

    #[test]
    fn collapse_examples() {
        let c = conv(&[("A", "Hey"), ("A", "How's it going?")]);
        assert_eq!(texts(&collapse_consecutive(&c, " ")), vec![("A", "Hey How's it going?")]);

        let c = conv(&[("A", "x"), ("B", "y"), ("A", "z")]);
        assert_eq!(collapse_consecutive(&c, " "), c);

        let c = conv(&[("A", "a"), ("A", "b"), ("A", "c"), ("B", "d")]);
        let out = collapse_consecutive(&c, " ");
        assert_eq!(texts(&out), vec![("A", "a b c"), ("B", "d")]);
        assert_eq!(out.utterances[0].id, 0);
        assert_eq!(out.utterances[0].timestamp, 0);
        assert_eq!(out.utterances[1].id, 3);
    }

    #[test]
    fn collapse_respects_joiner() {
        let c = conv(&[("A", "Hey"), ("A", "there")]);
        assert_eq!(texts(&collapse_consecutive(&c, "\n")), vec![("A", "Hey\nthere")]);
    }

    fn corpus_of(rows: &[(&str, i64)]) -> Corpus {
        let utterances = rows
            .iter()
            .enumerate()
            .map(|(i, (s, ts))| Utterance {
                id: i as u64,
                conversation_id: "c".into(),
                speaker_id: (*s).into(),
                timestamp: *ts,
                text: format!("u{i}"),
            })
            .collect();
        Corpus::new(vec![Conversation::new("c", utterances)])
    }

    #[test]
    fn split_takes_trailing_fraction() {
        let rows: Vec<(&str, i64)> = (0..10)
            .map(|i| (if i % 2 == 0 { "A" } else { "B" }, i as i64))
            .collect();
        let split = chronological_split(&corpus_of(&rows), 0.2).unwrap();
        assert_eq!(split.test_ids(), vec![8, 9]);
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.boundary_timestamp, 8);
        assert!((split.realized_fraction - 0.2).abs() < 1e-12);
    }

    #[test]
    fn split_repairs_uncovered_speaker() {
        // C speaks only in the last two slots. Both slots fall into test,
        // the last one is uncovered, so the whole test suffix returns.
        let mut rows: Vec<(&str, i64)> = (0..8)
            .map(|i| (if i % 2 == 0 { "A" } else { "B" }, i as i64))
            .collect();
        rows.push(("C", 8));
        rows.push(("C", 9));
        let split = chronological_split(&corpus_of(&rows), 0.2).unwrap();
        assert!(split.test.len() < 2);
        assert_eq!(split.test.len(), 0);
        assert!(split.train.speakers().contains("C"));
        assert_eq!(split.boundary_timestamp, i64::MAX);
    }

    #[test]
    fn split_repair_keeps_covered_tail() {
        // Test = [C, A, B]; C is uncovered so only C moves back.
        let rows = [("A", 0), ("B", 1), ("A", 2), ("B", 3), ("C", 4), ("A", 5), ("B", 6)];
        let split = chronological_split(&corpus_of(&rows), 3.0 / 7.0).unwrap();
        assert_eq!(split.test_ids(), vec![5, 6]);
    }

    #[test]
    fn split_boundary_fraction() {
        let rows = [("A", 0), ("A", 1)];
        let split = chronological_split(&corpus_of(&rows), 0.99).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (1, 1));
    }

    #[test]
    fn split_rejects_bad_fraction_and_empty_corpus() {
        assert!(chronological_split(&corpus_of(&[("A", 0)]), 0.0).is_err());
        assert!(chronological_split(&corpus_of(&[("A", 0)]), 1.0).is_err());
        assert!(chronological_split(&Corpus::default(), 0.5).is_err());
    }

    #[test]
    fn csv_default_columns() {
        let data = "conversation_id,speaker_id,timestamp,text\nc1,A,1,hi\nc1,B,2,hello\n";
        let ing = parse_csv(data.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(ing.corpus.len(), 2);
    }

    #[test]
    fn csv_missing_speaker_column() {
        let data = "conversation_id,timestamp,text\nc1,1,hi\n";
        assert!(matches!(
            parse_csv(data.as_bytes(), &ColumnMap::default()),
            Err(CorpusError::Schema(_))
        ));
    }

    #[test]
    fn csv_quoted_text_is_preserved() {
        let data = "conversation_id,speaker_id,timestamp,text\nc1,A,1,\"one, two\nthree \"\"four\"\"\"\n";
        let ing = parse_csv(data.as_bytes(), &ColumnMap::default()).unwrap();
        let u = ing.corpus.utterances().next().unwrap();
        assert_eq!(u.text, "one, two\nthree \"four\"");
    }

    #[test]
    fn csv_custom_column_map_without_timestamp() {
        let data = "chat,who,msg\nc1,A,hi\nc1,B,yo\n";
        let map = ColumnMap {
            conversation_id: "chat".into(),
            speaker_id: "who".into(),
            timestamp: None,
            text: "msg".into(),
        };
        let ing = parse_csv(data.as_bytes(), &map).unwrap();
        let got: Vec<_> = ing.corpus.utterances().map(|u| (u.timestamp, u.text.as_str())).collect();
        assert_eq!(got, vec![(0, "hi"), (0, "yo")]);
    }
}
