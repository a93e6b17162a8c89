//! Text helpers shared by the tokenizer, the hashing embedder and BLEU.

use unicode_normalization::UnicodeNormalization;

/// NFC-normalizes `raw` and trims outer whitespace.
pub fn normalize_text(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    nfc.trim().to_string()
}

/// Splits text into word pieces: maximal runs of alphanumeric characters,
/// plus every other non-whitespace character as a piece of its own.
///
/// `"How's it going?"` becomes `["How", "'", "s", "it", "going", "?"]`.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(i);
            }
            continue;
        }
        if let Some(start) = run_start.take() {
            pieces.push(&text[start..i]);
        }
        if !ch.is_whitespace() {
            pieces.push(&text[i..i + ch.len_utf8()]);
        }
    }
    if let Some(start) = run_start {
        pieces.push(&text[start..]);
    }
    pieces
}

/// Whitespace tokenization used for BLEU scoring.
pub fn whitespace_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
