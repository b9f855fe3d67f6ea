//! Sentence splitting, tokenizing and fragment extraction.
//!
//! Offsets are byte offsets into the original post, so `&post[start..end]`
//! always reproduces the span. There is no abbreviation handling: `Dr. Smith`
//! splits after `Dr.`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported fragment window, in sentences.
pub const MAX_WINDOW: usize = 3;
pub const DEFAULT_WINDOW: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("fragment window must be in 1..={MAX_WINDOW}, got {0}")]
    WindowOutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// A contiguous run of sentences of a post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub text: String,
    pub tokens: Vec<String>,
    /// Inclusive sentence indices.
    pub sentence_span: (usize, usize),
    /// Byte offsets into the post.
    pub char_span: (usize, usize),
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Split at runs of `.`, `!` or `?` that are followed by whitespace or the end
/// of the text. Text without a terminator is a single sentence.
pub fn split_sentences(post: &str) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut chars = post.char_indices().peekable();

    while let Some((i, c)) = chars.next() {
        if start.is_none() {
            if c.is_whitespace() {
                continue;
            }
            start = Some(i);
        }
        if is_terminator(c) {
            let mut end = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                if !is_terminator(d) {
                    break;
                }
                end = j + d.len_utf8();
                chars.next();
            }
            let at_boundary = chars.peek().is_none_or(|&(_, d)| d.is_whitespace());
            if at_boundary {
                let s = start.take().expect("sentence started");
                out.push(Sentence {
                    text: post[s..end].to_string(),
                    start: s,
                    end,
                });
            }
        }
    }
    if let Some(s) = start {
        let end = s + post[s..].trim_end().len();
        out.push(Sentence {
            text: post[s..end].to_string(),
            start: s,
            end,
        });
    }
    out
}

/// Every contiguous run of `1..=window` sentences, ordered by first sentence
/// and then by length.
pub fn fragments(post: &str, sentences: &[Sentence], window: usize) -> Result<Vec<Fragment>, TextError> {
    if !(1..=MAX_WINDOW).contains(&window) {
        return Err(TextError::WindowOutOfRange(window));
    }
    let mut out = Vec::new();
    for first in 0..sentences.len() {
        for len in 1..=window {
            let last = first + len - 1;
            if last >= sentences.len() {
                break;
            }
            let (start, end) = (sentences[first].start, sentences[last].end);
            let text = post[start..end].to_string();
            out.push(Fragment {
                tokens: tokenize(&text),
                text,
                sentence_span: (first, last),
                char_span: (start, end),
            });
        }
    }
    Ok(out)
}

/// Split a post into sentences and fragments in one go.
pub fn post_fragments(post: &str, window: usize) -> Result<Vec<Fragment>, TextError> {
    fragments(post, &split_sentences(post), window)
}

fn strip(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

// Lowercasing can expose combining marks at the edges, so strip again.
fn normalize(word: &str) -> String {
    strip(&strip(word).to_lowercase()).to_string()
}

/// Lowercased whitespace tokens with surrounding punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize)
        .filter(|w| !w.is_empty())
        .collect()
}

/// Like [`tokenize`], with the byte span of each stripped token in `text`.
pub fn tokenize_with_spans(text: &str) -> Vec<(String, usize, usize)> {
    let base = text.as_ptr() as usize;
    text.split_whitespace()
        .filter_map(|word| {
            let stripped = strip(word);
            let token = normalize(stripped);
            if token.is_empty() {
                return None;
            }
            let start = stripped.as_ptr() as usize - base;
            Some((token, start, start + stripped.len()))
        })
        .collect()
}
