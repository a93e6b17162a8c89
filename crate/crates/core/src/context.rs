//! Model inputs: tokenized context windows, with or without speaker
//! conditioning.
//!
//! A window holds the most recent utterances oldest first, each terminated
//! by EOS. Four layouts are supported:
//!
//! | format                  | layout                                              |
//! |-------------------------|-----------------------------------------------------|
//! | `Plain`                 | `s_n EOS ... s_1 EOS`                               |
//! | `LeadingSpeaker`        | `responder s_n EOS ... s_1 EOS`                     |
//! | `PerUtteranceSpeaker`   | `speaker_n s_n EOS ... speaker_1 s_1 EOS`           |
//! | `SpeakerTokenTypes`     | `<spk_n> s_n EOS ... <spk_1> s_1 EOS` + type layer  |
//!
//! Speaker ids in the two string layouts are tokenized like ordinary text.
//! In `SpeakerTokenTypes` every position (speaker token and EOS included)
//! carries the id of the speaker token governing it in `token_type_ids`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Utterance};
use crate::text::split_words;

pub type TokenId = u32;

pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";
pub const DEFAULT_MAX_TOKENS: usize = 1024;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("empty context")]
    EmptyContext,
    #[error("speaker `{0}` has no registered speaker token")]
    UnknownSpeaker(String),
    #[error("invalid format spec: {0}")]
    InvalidSpec(String),
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Text ↔ token ids, plus the special ids the context layouts need.
pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<TokenId>;
    fn decode(&self, ids: &[TokenId]) -> String;
    fn eos_id(&self) -> TokenId;
    fn unk_id(&self) -> TokenId;
    fn speaker_token(&self, speaker_id: &str) -> Option<TokenId>;
    fn vocab_size(&self) -> usize;
}

pub fn speaker_token_string(speaker_id: &str) -> String {
    format!("<spk_{speaker_id}>")
}

/// Reference tokenizer: words and single punctuation characters over a
/// vocabulary built from a corpus. Ids are `<unk>`=0, `<eos>`=1, content
/// tokens in sorted order, then one `<spk_..>` token per speaker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordTokenizer {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    first_speaker_id: TokenId,
    speakers: HashMap<String, TokenId>,
}

impl WordTokenizer {
    pub fn new<C, S>(content: C, speakers: S) -> Self
    where
        C: IntoIterator<Item = String>,
        S: IntoIterator<Item = String>,
    {
        let content: BTreeSet<String> = content.into_iter().collect();
        let speakers: BTreeSet<String> = speakers.into_iter().collect();
        let mut tokens = vec![UNK_TOKEN.to_string(), EOS_TOKEN.to_string()];
        tokens.extend(content);
        let first_speaker_id = tokens.len() as TokenId;
        tokens.extend(speakers.iter().map(|s| speaker_token_string(s)));
        let speakers = speakers
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s, first_speaker_id + i as TokenId))
            .collect();
        Self::assemble(tokens, first_speaker_id, speakers)
    }

    fn assemble(
        tokens: Vec<String>,
        first_speaker_id: TokenId,
        speakers: HashMap<String, TokenId>,
    ) -> Self {
        let index = tokens[..first_speaker_id as usize]
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self {
            tokens,
            index,
            first_speaker_id,
            speakers,
        }
    }

    /// Vocabulary over every word piece of the corpus texts and speaker ids,
    /// with a speaker token for each corpus speaker.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut content = BTreeSet::new();
        for u in corpus.utterances() {
            content.extend(split_words(&u.text).into_iter().map(str::to_string));
        }
        for s in corpus.speakers() {
            content.extend(split_words(s).into_iter().map(str::to_string));
        }
        Self::new(content, corpus.speakers().iter().cloned())
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn content_vocab_size(&self) -> usize {
        self.first_speaker_id as usize
    }

    pub fn is_speaker_token(&self, id: TokenId) -> bool {
        id >= self.first_speaker_id && (id as usize) < self.tokens.len()
    }

    /// One token per line; the line number is the id.
    pub fn write_vocab<W: Write>(&self, mut out: W) -> Result<(), ContextError> {
        for t in &self.tokens {
            if t.contains('\n') || t.contains('\r') {
                return Err(ContextError::Vocabulary(format!(
                    "token {t:?} cannot be stored one per line"
                )));
            }
            writeln!(out, "{t}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_vocab<R: BufRead>(reader: R) -> Result<Self, ContextError> {
        let tokens: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
        if tokens.len() < 2 || tokens[0] != UNK_TOKEN || tokens[1] != EOS_TOKEN {
            return Err(ContextError::Vocabulary(
                "vocabulary must start with <unk> and <eos>".into(),
            ));
        }
        let is_speaker = |t: &str| t.starts_with("<spk_") && t.ends_with('>') && t.len() > 6;
        let first = tokens
            .iter()
            .position(|t| is_speaker(t))
            .unwrap_or(tokens.len());
        let mut speakers = HashMap::new();
        for (i, t) in tokens.iter().enumerate().skip(first) {
            if !is_speaker(t) {
                return Err(ContextError::Vocabulary(format!(
                    "content token {t:?} after speaker tokens"
                )));
            }
            speakers.insert(t[5..t.len() - 1].to_string(), i as TokenId);
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = tokens[..first].iter().find(|t| !seen.insert(t.as_str())) {
            return Err(ContextError::Vocabulary(format!("duplicate token {dup:?}")));
        }
        Ok(Self::assemble(tokens, first as TokenId, speakers))
    }
}

impl Tokenizer for WordTokenizer {
    fn encode(&self, text: &str) -> Vec<TokenId> {
        split_words(text)
            .into_iter()
            .map(|w| self.index.get(w).copied().unwrap_or(self.unk_id()))
            .collect()
    }

    /// Tokens joined by single spaces; `encode(decode(ids)) == ids` for
    /// content ids.
    fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn eos_id(&self) -> TokenId {
        1
    }

    fn unk_id(&self) -> TokenId {
        0
    }

    fn speaker_token(&self, speaker_id: &str) -> Option<TokenId> {
        self.speakers.get(speaker_id).copied()
    }

    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Plain,
    LeadingSpeaker,
    PerUtteranceSpeaker,
    SpeakerTokenTypes,
}

impl Format {
    pub const ALL: [Format; 4] = [
        Format::Plain,
        Format::LeadingSpeaker,
        Format::PerUtteranceSpeaker,
        Format::SpeakerTokenTypes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Format::Plain => "plain",
            Format::LeadingSpeaker => "leading-speaker",
            Format::PerUtteranceSpeaker => "per-utterance-speaker",
            Format::SpeakerTokenTypes => "speaker-token-types",
        }
    }

    pub fn is_speaker_aware(self) -> bool {
        self != Format::Plain
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Format {
    type Err = ContextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Format::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| ContextError::InvalidSpec(format!("unknown format `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatSpec {
    pub format: Format,
    /// Most recent utterances to include.
    pub max_turns: usize,
    pub max_tokens: usize,
    /// Lets `Plain` encode an empty history as an empty example.
    pub allow_empty: bool,
}

impl FormatSpec {
    pub fn new(format: Format, max_turns: usize) -> Self {
        Self {
            format,
            max_turns,
            max_tokens: DEFAULT_MAX_TOKENS,
            allow_empty: false,
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), ContextError> {
        if self.max_turns == 0 {
            return Err(ContextError::InvalidSpec("max_turns must be positive".into()));
        }
        if self.max_tokens < 2 {
            return Err(ContextError::InvalidSpec("max_tokens must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub token_ids: Vec<TokenId>,
    /// Same length as `token_ids` for `SpeakerTokenTypes`, empty otherwise.
    pub token_type_ids: Vec<TokenId>,
    /// Start position of each included utterance (speaker marker included).
    pub turn_boundaries: Vec<usize>,
    pub responder: String,
}

struct Segment {
    marker: Vec<TokenId>,
    content: Vec<TokenId>,
    type_id: Option<TokenId>,
}

impl Segment {
    fn len(&self) -> usize {
        self.marker.len() + self.content.len() + 1
    }
}

fn trim_head(tokens: &mut Vec<TokenId>, excess: &mut usize) {
    let cut = (*excess).min(tokens.len());
    tokens.drain(..cut);
    *excess -= cut;
}

/// Encodes the last `spec.max_turns` utterances of `history` (oldest first).
///
/// Over budget, whole oldest utterances are dropped until one remains, then
/// that utterance loses tokens from its head: content first, then its
/// speaker marker, then the leading responder prefix.
pub fn build_context(
    history: &[Utterance],
    responder: &str,
    spec: &FormatSpec,
    tok: &dyn Tokenizer,
) -> Result<EncodedExample, ContextError> {
    spec.validate()?;
    if history.is_empty() {
        if spec.format == Format::Plain && spec.allow_empty {
            return Ok(EncodedExample {
                token_ids: Vec::new(),
                token_type_ids: Vec::new(),
                turn_boundaries: Vec::new(),
                responder: responder.to_string(),
            });
        }
        return Err(ContextError::EmptyContext);
    }
    if spec.format.is_speaker_aware() && tok.speaker_token(responder).is_none() {
        return Err(ContextError::UnknownSpeaker(responder.to_string()));
    }

    let window = &history[history.len().saturating_sub(spec.max_turns)..];
    let mut prefix = match spec.format {
        Format::LeadingSpeaker => tok.encode(responder),
        _ => Vec::new(),
    };
    let mut segments = window
        .iter()
        .map(|u| {
            let content = tok.encode(&u.text);
            Ok(match spec.format {
                Format::Plain | Format::LeadingSpeaker => Segment {
                    marker: Vec::new(),
                    content,
                    type_id: None,
                },
                Format::PerUtteranceSpeaker => Segment {
                    marker: tok.encode(&u.speaker_id),
                    content,
                    type_id: None,
                },
                Format::SpeakerTokenTypes => {
                    let spk = tok
                        .speaker_token(&u.speaker_id)
                        .ok_or_else(|| ContextError::UnknownSpeaker(u.speaker_id.clone()))?;
                    Segment {
                        marker: vec![spk],
                        content,
                        type_id: Some(spk),
                    }
                }
            })
        })
        .collect::<Result<std::collections::VecDeque<Segment>, ContextError>>()?;

    let mut total = prefix.len() + segments.iter().map(Segment::len).sum::<usize>();
    while total > spec.max_tokens && segments.len() > 1 {
        if let Some(dropped) = segments.pop_front() {
            total -= dropped.len();
        }
    }
    if total > spec.max_tokens {
        let mut excess = total - spec.max_tokens;
        let oldest = segments.front_mut().expect("one segment remains");
        trim_head(&mut oldest.content, &mut excess);
        trim_head(&mut oldest.marker, &mut excess);
        trim_head(&mut prefix, &mut excess);
        debug_assert_eq!(excess, 0);
    }

    let eos = tok.eos_id();
    let mut token_ids = prefix;
    let mut token_type_ids = Vec::new();
    let mut turn_boundaries = Vec::with_capacity(segments.len());
    for seg in segments {
        turn_boundaries.push(token_ids.len());
        let start = token_ids.len();
        token_ids.extend_from_slice(&seg.marker);
        token_ids.extend_from_slice(&seg.content);
        token_ids.push(eos);
        if let Some(type_id) = seg.type_id {
            token_type_ids.resize(token_type_ids.len() + (token_ids.len() - start), type_id);
        }
    }

    Ok(EncodedExample {
        token_ids,
        token_type_ids,
        turn_boundaries,
        responder: responder.to_string(),
    })
}

/// Splits a `Plain` encoding at EOS and decodes each utterance.
pub fn decode_plain(ids: &[TokenId], tok: &dyn Tokenizer) -> Vec<String> {
    let eos = tok.eos_id();
    let mut out = Vec::new();
    let mut rest = ids;
    while let Some(pos) = rest.iter().position(|&t| t == eos) {
        out.push(tok.decode(&rest[..pos]));
        rest = &rest[pos + 1..];
    }
    if !rest.is_empty() {
        out.push(tok.decode(rest));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub input: EncodedExample,
    /// Token ids of the predicted utterance followed by EOS.
    pub target_ids: Vec<TokenId>,
}

/// One example per utterance that has at least one predecessor in its
/// conversation; the responder is the predicted utterance's speaker.
pub fn build_training_set(
    corpus: &Corpus,
    spec: &FormatSpec,
    tok: &dyn Tokenizer,
) -> Result<Vec<TrainingExample>, ContextError> {
    let mut out = Vec::new();
    for conv in corpus.conversations() {
        for i in 1..conv.utterances.len() {
            let target = &conv.utterances[i];
            let input = build_context(&conv.utterances[..i], &target.speaker_id, spec, tok)?;
            let mut target_ids = tok.encode(&target.text);
            target_ids.push(tok.eos_id());
            out.push(TrainingExample { input, target_ids });
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct TrainingRecord {
    pub token_ids: Vec<TokenId>,
    pub token_type_ids: Vec<TokenId>,
    pub target_ids: Vec<TokenId>,
    pub responder: String,
    pub format: Format,
}

pub fn write_training_jsonl<W: Write>(
    examples: &[TrainingExample],
    format: Format,
    mut out: W,
) -> io::Result<()> {
    for ex in examples {
        let rec = TrainingRecord {
            token_ids: ex.input.token_ids.clone(),
            token_type_ids: ex.input.token_type_ids.clone(),
            target_ids: ex.target_ids.clone(),
            responder: ex.input.responder.clone(),
            format,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Conversation;

    fn utt(id: u64, speaker: &str, text: &str) -> Utterance {
        Utterance {
            id,
            conversation_id: "c".into(),
            speaker_id: speaker.into(),
            timestamp: id as i64,
            text: text.into(),
        }
    }

    fn tokenizer() -> WordTokenizer {
        WordTokenizer::new(
            ["a", "b", "c", "A", "B"].map(String::from),
            ["A", "B"].map(String::from),
        )
    }

    fn ids(tok: &WordTokenizer, words: &[&str]) -> Vec<TokenId> {
        words
            .iter()
            .map(|w| match *w {
                "EOS" => tok.eos_id(),
                "<spk_A>" => tok.speaker_token("A").unwrap(),
                "<spk_B>" => tok.speaker_token("B").unwrap(),
                other => tok.encode(other)[0],
            })
            .collect()
    }

    #[test]
    fn vocabulary_layout() {
        let tok = tokenizer();
        assert_eq!(tok.token(0), Some("<unk>"));
        assert_eq!(tok.token(1), Some("<eos>"));
        assert_eq!(tok.content_vocab_size(), 7);
        assert_eq!(tok.speaker_token("A"), Some(7));
        assert_eq!(tok.speaker_token("B"), Some(8));
        assert_eq!(tok.encode("zzz"), vec![0]);
    }

    #[test]
    fn plain_window_keeps_recent_turns() {
        let tok = tokenizer();
        let history = [utt(1, "B", "a"), utt(2, "A", "b"), utt(3, "B", "c")];
        let ex = build_context(&history, "A", &FormatSpec::new(Format::Plain, 2), &tok).unwrap();
        assert_eq!(ex.token_ids, ids(&tok, &["b", "EOS", "c", "EOS"]));
        assert!(ex.token_type_ids.is_empty());
        assert_eq!(ex.turn_boundaries, vec![0, 2]);
    }

    #[test]
    fn speaker_token_types_layout() {
        let tok = tokenizer();
        let history = [utt(1, "B", "a"), utt(2, "A", "b"), utt(3, "B", "c")];
        let spec = FormatSpec::new(Format::SpeakerTokenTypes, 2);
        let ex = build_context(&history, "A", &spec, &tok).unwrap();
        assert_eq!(
            ex.token_ids,
            ids(&tok, &["<spk_A>", "b", "EOS", "<spk_B>", "c", "EOS"])
        );
        let (a, b) = (tok.speaker_token("A").unwrap(), tok.speaker_token("B").unwrap());
        assert_eq!(ex.token_type_ids, vec![a, a, a, b, b, b]);
    }

    #[test]
    fn oldest_utterance_is_dropped_over_budget() {
        let words: Vec<String> = (0..500).map(|i| format!("w{i}")).collect();
        let tok = WordTokenizer::new(words.clone(), Vec::<String>::new());
        let text = words.join(" ");
        let history = [utt(1, "A", &text), utt(2, "B", &text), utt(3, "A", &text)];
        let ex = build_context(&history, "B", &FormatSpec::new(Format::Plain, 10), &tok).unwrap();
        assert_eq!(ex.token_ids.len(), 1002);
        assert_eq!(ex.turn_boundaries, vec![0, 501]);
    }

    #[test]
    fn single_long_utterance_is_head_truncated() {
        let tok = tokenizer();
        let history = [utt(1, "A", "a b c a b c")];
        let spec = FormatSpec::new(Format::SpeakerTokenTypes, 3).with_max_tokens(4);
        let ex = build_context(&history, "B", &spec, &tok).unwrap();
        assert_eq!(ex.token_ids, ids(&tok, &["<spk_A>", "b", "c", "EOS"]));
        assert_eq!(ex.token_type_ids.len(), 4);

        let spec = FormatSpec::new(Format::LeadingSpeaker, 3).with_max_tokens(2);
        let ex = build_context(&history, "B", &spec, &tok).unwrap();
        assert_eq!(ex.token_ids, ids(&tok, &["B", "EOS"]));
    }

    #[test]
    fn errors() {
        let tok = tokenizer();
        let spec = FormatSpec::new(Format::SpeakerTokenTypes, 2);
        assert!(matches!(
            build_context(&[], "A", &spec, &tok),
            Err(ContextError::EmptyContext)
        ));
        assert!(matches!(
            build_context(&[utt(1, "Z", "a")], "A", &spec, &tok),
            Err(ContextError::UnknownSpeaker(s)) if s == "Z"
        ));
        assert!(matches!(
            build_context(&[utt(1, "A", "a")], "Q", &spec, &tok),
            Err(ContextError::UnknownSpeaker(s)) if s == "Q"
        ));
        let mut plain = FormatSpec::new(Format::Plain, 2);
        assert!(build_context(&[], "A", &plain, &tok).is_err());
        plain.allow_empty = true;
        assert!(build_context(&[], "A", &plain, &tok).unwrap().token_ids.is_empty());
        assert!(FormatSpec::new(Format::Plain, 1).with_max_tokens(1).validate().is_err());
    }

    #[test]
    fn training_set_counts() {
        let tok = tokenizer();
        let conv = Conversation::new("c", vec![utt(0, "A", "a"), utt(1, "B", "b"), utt(2, "A", "c")]);
        let corpus = Corpus::new(vec![conv]);
        let set = build_training_set(&corpus, &FormatSpec::new(Format::Plain, 5), &tok).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set[1].input.responder, "A");
        assert_eq!(set[1].target_ids, ids(&tok, &["c", "EOS"]));

        let lonely = Corpus::new(vec![
            Conversation::new("x", vec![utt(0, "A", "a")]),
            Conversation::new("y", vec![utt(1, "B", "b")]),
        ]);
        assert!(build_training_set(&lonely, &FormatSpec::new(Format::Plain, 5), &tok)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn vocab_file_round_trip() {
        let tok = tokenizer();
        let mut buf = Vec::new();
        tok.write_vocab(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("<unk>\n<eos>\n"));
        assert!(text.ends_with("<spk_A>\n<spk_B>\n"));
        let back = WordTokenizer::read_vocab(&buf[..]).unwrap();
        assert_eq!(back, tok);
        assert!(WordTokenizer::read_vocab(&b"<eos>\n<unk>\n"[..]).is_err());
    }

    #[test]
    fn format_names_round_trip() {
        for f in Format::ALL {
            assert_eq!(f.name().parse::<Format>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{}\"", f.name()));
        }
    }
}
