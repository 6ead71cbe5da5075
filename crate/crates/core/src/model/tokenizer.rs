//! The `ws-v1` tokenizer: lowercase, whitespace split, punctuation as
//! standalone tokens, ids by FNV-1a 64 hash modulo the vocabulary size.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::types::Text;

/// Name recorded in tensor-bundle headers for this tokenizer.
pub const TOKENIZER_NAME: &str = "ws-v1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn token_id(token: &str, vocab_size: usize) -> usize {
    (fnv1a64(token.as_bytes()) % vocab_size as u64) as usize
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Tokenizes `raw`, returning each token's byte range in `raw` alongside.
pub fn tokenize_with_spans(raw: &str) -> Result<(Text, Vec<Range<usize>>)> {
    if raw.trim().is_empty() {
        return Err(Error::InvalidInput("text is empty after trimming".into()));
    }
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    let mut current: Option<(usize, String)> = None;

    let mut flush = |current: &mut Option<(usize, String)>, end: usize| {
        if let Some((start, tok)) = current.take() {
            tokens.push(tok);
            spans.push(start..end);
        }
    };

    for (i, c) in raw.char_indices() {
        if c.is_whitespace() {
            flush(&mut current, i);
        } else if is_punct(c) {
            flush(&mut current, i);
            current = Some((i, c.to_lowercase().collect()));
            flush(&mut current, i + c.len_utf8());
        } else {
            current
                .get_or_insert_with(|| (i, String::new()))
                .1
                .extend(c.to_lowercase());
        }
    }
    flush(&mut current, raw.len());

    Ok((Text::from_parts(raw.to_string(), tokens), spans))
}

pub fn tokenize(raw: &str) -> Result<Text> {
    tokenize_with_spans(raw).map(|(t, _)| t)
}

/// Token ids of `text` under a vocabulary of `vocab_size`.
pub fn token_ids(text: &Text, vocab_size: usize) -> Vec<usize> {
    text.tokens().iter().map(|t| token_id(t, vocab_size)).collect()
}
