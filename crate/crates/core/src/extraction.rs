//! Recover the final query candidate from a raw completion.
//!
//! Everything up to and including the last `</think>` is discarded. In what
//! remains, the interior of the last complete fenced code block is the query;
//! without a complete fence the whole remainder is used. An opening fence with
//! no closing fence counts as no fence.

use serde::{Deserialize, Serialize};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
const FENCE: &str = "```";

/// One generated output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Completion tokens only, as counted by the active tokenizer.
    pub token_count: usize,
}

impl Completion {
    pub fn new(text: impl Into<String>, token_count: usize) -> Self {
        Self {
            text: text.into(),
            token_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub query_text: String,
    pub had_think_close: bool,
    pub used_fenced_block: bool,
}

/// Length of a language tag directly after an opening fence, including the
/// line break that ends it. Zero when the fence is not followed by a tag line.
fn tag_line_len(after_fence: &str) -> usize {
    let tag_len = after_fence
        .find(|c: char| !(c.is_ascii_alphanumeric() || "_+-.#".contains(c)))
        .unwrap_or(after_fence.len());
    let rest = &after_fence[tag_len..];
    let pad = rest.len() - rest.trim_start_matches([' ', '\t']).len();
    let rest = &rest[pad..];
    if rest.starts_with("\r\n") {
        tag_len + pad + 2
    } else if rest.starts_with('\n') {
        tag_len + pad + 1
    } else if rest.is_empty() {
        tag_len + pad
    } else {
        0
    }
}

/// Interior of the last complete fenced block, if any.
fn last_fenced_block(text: &str) -> Option<&str> {
    let mut last = None;
    let mut cursor = 0;
    while let Some(open_rel) = text[cursor..].find(FENCE) {
        let body_start = cursor + open_rel + FENCE.len();
        let body_start = body_start + tag_line_len(&text[body_start..]);
        let Some(close_rel) = text[body_start..].find(FENCE) else {
            break;
        };
        let close = body_start + close_rel;
        last = Some(&text[body_start..close]);
        cursor = close + FENCE.len();
    }
    last
}

pub fn extract_query(completion: &Completion) -> Extraction {
    extract_from_text(&completion.text)
}

pub fn extract_from_text(text: &str) -> Extraction {
    let (suffix, had_think_close) = match text.rfind(THINK_CLOSE) {
        Some(i) => (&text[i + THINK_CLOSE.len()..], true),
        None => (text, false),
    };
    match last_fenced_block(suffix) {
        Some(inner) => Extraction {
            query_text: inner.trim().to_string(),
            had_think_close,
            used_fenced_block: true,
        },
        None => Extraction {
            query_text: suffix.trim().to_string(),
            had_think_close,
            used_fenced_block: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn think_then_query() {
        let e = extract_from_text("<think>r</think> SELECT ?x WHERE { ?x <p> <b> }");
        assert_eq!(e.query_text, "SELECT ?x WHERE { ?x <p> <b> }");
        assert!(e.had_think_close);
        assert!(!e.used_fenced_block);
    }

    #[test]
    fn last_tag_last_block() {
        let e = extract_from_text("<think>a</think>x<think>b</think>```sparql\nASK { }\n```");
        assert_eq!(e.query_text, "ASK { }");
        assert!(e.used_fenced_block);
    }

    #[test]
    fn empty_input() {
        let e = extract_from_text("");
        assert_eq!(e.query_text, "");
        assert!(!e.had_think_close);
    }

    #[test]
    fn unclosed_fence_falls_back() {
        let e = extract_from_text("</think>```sparql\nASK { }");
        assert!(!e.used_fenced_block);
        assert_eq!(e.query_text, "```sparql\nASK { }");
    }

    #[test]
    fn inline_fence_without_tag() {
        let e = extract_from_text("```ASK { <a> <p> <b> }```");
        assert_eq!(e.query_text, "ASK { <a> <p> <b> }");
    }
}
