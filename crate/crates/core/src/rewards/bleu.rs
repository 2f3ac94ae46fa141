//! Sentence-level BLEU over a SPARQL-aware tokenization.

use std::collections::HashMap;

use crate::sparql::normalize;

/// Additive smoothing for n-gram orders with no matches.
pub const BLEU_SMOOTHING_EPS: f64 = 0.1;
pub const BLEU_MAX_ORDER: usize = 4;

const PUNCT: &[char] = &['{', '}', '(', ')', '.', ';'];

/// Whitespace tokens after [`normalize`], with `{ } ( ) . ;` split out as
/// standalone tokens. Text inside `<...>` IRIs is never split, so the dots in
/// a URI stay part of it. Case is preserved.
pub fn query_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in normalize(text).split(' ').filter(|c| !c.is_empty()) {
        let mut current = String::new();
        let mut iri_end = None;
        for (i, ch) in chunk.char_indices() {
            if let Some(end) = iri_end {
                current.push(ch);
                if i == end {
                    iri_end = None;
                }
            } else if PUNCT.contains(&ch) {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(ch.to_string());
            } else {
                if ch == '<' {
                    iri_end = iri_close(chunk, i);
                }
                current.push(ch);
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

// Offset of the `>` closing an IRI opened at `open`, or None when the `<` is
// the less-than operator (same rule as the query parser).
fn iri_close(chunk: &str, open: usize) -> Option<usize> {
    let rest = &chunk[open + 1..];
    let end = rest.find(|c: char| "<>\"{}|^`\\'".contains(c))?;
    (rest[end..].starts_with('>')).then_some(open + 1 + end)
}

pub fn count_query_tokens(text: &str) -> usize {
    query_tokens(text).len()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// BLEU of `candidate` against one `reference` token list.
///
/// Orders run up to `min(4, shorter length)` with uniform weights; an order
/// with zero clipped matches uses `eps / total` as its precision.
pub fn sentence_bleu(candidate: &[String], reference: &[String], eps: f64) -> f64 {
    let (c, r) = (candidate.len(), reference.len());
    if c == 0 || r == 0 {
        return 0.0;
    }
    let max_n = BLEU_MAX_ORDER.min(c).min(r);
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let matched: usize = cand
            .iter()
            .map(|(g, k)| (*k).min(refs.get(g).copied().unwrap_or(0)))
            .sum();
        let total = (c - n + 1) as f64;
        let p = if matched == 0 { eps / total } else { matched as f64 / total };
        log_sum += p.ln();
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / max_n as f64).exp()
}

/// Similarity reward: BLEU between the tokenized generated and gold queries.
pub fn r_sim(generated_query: &str, gold_query: &str) -> f64 {
    sentence_bleu(
        &query_tokens(generated_query),
        &query_tokens(gold_query),
        BLEU_SMOOTHING_EPS,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_punctuation_outside_iris() {
        let t = query_tokens("SELECT ?x WHERE{<https://a.b/c> <p> ?x.FILTER(?x<'3')}");
        assert_eq!(
            t,
            [
                "SELECT", "?x", "WHERE", "{", "<https://a.b/c>", "<p>", "?x", ".", "FILTER", "(",
                "?x<'3'", ")", "}"
            ]
        );
    }

    #[test]
    fn self_similarity_and_whitespace_invariance() {
        let q = "SELECT ?x WHERE { ?x <p> <b> }";
        assert!((r_sim(q, q) - 1.0).abs() < 1e-12);
        assert!((r_sim("SELECT ?x\nWHERE {  ?x <p> <b>}", q) - 1.0).abs() < 1e-12);
        assert_eq!(r_sim("", q), 0.0);
        assert!((r_sim("ASK", "ASK") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_applies_to_short_candidates() {
        let gold = "SELECT ?x WHERE { ?x <p> <b> }";
        let short = "SELECT ?x WHERE {";
        let s = r_sim(short, gold);
        assert!(s > 0.0 && s < 1.0);
        // precisions are all 1 so only the penalty remains
        assert!((s - (1.0f64 - 8.0 / 4.0).exp()).abs() < 1e-12);
    }
}
