//! Fixed character-level vocabulary shared by the language model and the
//! CTC head, plus the four reserved tag tokens.
//!
//! Token ids: 'a'..='z' are 0..=25, then space, apostrophe, period, comma,
//! colon (26..=30), then the four tags (31..=34). The CTC blank sits outside
//! the text vocabulary at id 35 and only ever appears as the last logit of
//! the adapter's output projection.

use crate::error::{Error, Result};

pub const CHARS: &[char] = &[
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r',
    's', 't', 'u', 'v', 'w', 'x', 'y', 'z', ' ', '\'', '.', ',', ':',
];

pub const CONTEXT_OPEN: usize = CHARS.len();
pub const CONTEXT_CLOSE: usize = CHARS.len() + 1;
pub const TRANSCRIPT_OPEN: usize = CHARS.len() + 2;
pub const TRANSCRIPT_CLOSE: usize = CHARS.len() + 3;

/// Size of the text vocabulary (characters + tags). This is also the CTC
/// non-blank vocabulary V: Eq.-7-style weighting of the embedding table
/// forces the two to coincide.
pub const VOCAB_SIZE: usize = CHARS.len() + 4;

/// CTC blank id, reserved outside the text vocabulary.
pub const BLANK: usize = VOCAB_SIZE;

pub fn token_for_char(c: char) -> Option<usize> {
    CHARS.iter().position(|&k| k == c)
}

pub fn char_for_token(token: usize) -> Option<char> {
    CHARS.get(token).copied()
}

pub fn is_tag(token: usize) -> bool {
    (CONTEXT_OPEN..=TRANSCRIPT_CLOSE).contains(&token)
}

pub fn tag_surface(token: usize) -> Option<&'static str> {
    match token {
        CONTEXT_OPEN => Some("<CONTEXT>"),
        CONTEXT_CLOSE => Some("</CONTEXT>"),
        TRANSCRIPT_OPEN => Some("<TRANSCRIPT>"),
        TRANSCRIPT_CLOSE => Some("</TRANSCRIPT>"),
        _ => None,
    }
}

/// Character-level tokenization. Tags are atomic vocabulary entries and are
/// never produced here; text containing their surface forms is rejected the
/// same way as any other out-of-vocabulary character.
pub fn encode_text(text: &str) -> Result<Vec<usize>> {
    let mut tokens = Vec::with_capacity(text.len());
    let mut offenders = Vec::new();
    for c in text.chars() {
        match token_for_char(c) {
            Some(t) => tokens.push(t),
            None => {
                if !offenders.contains(&c) {
                    offenders.push(c);
                }
            }
        }
    }
    if offenders.is_empty() {
        Ok(tokens)
    } else {
        Err(Error::Vocab { offenders })
    }
}

/// Inverse of `encode_text` for character tokens; tag tokens render as their
/// surface forms so diagnostics stay readable.
pub fn decode_text(tokens: &[usize]) -> String {
    let mut out = String::with_capacity(tokens.len());
    for &t in tokens {
        if let Some(c) = char_for_token(t) {
            out.push(c);
        } else if let Some(s) = tag_surface(t) {
            out.push_str(s);
        } else {
            out.push('\u{fffd}');
        }
    }
    out
}
