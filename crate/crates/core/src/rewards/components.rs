//! The six reward components as pure functions.

use std::collections::BTreeSet;

use crate::corpus::{EntityHint, RelationHint};
use crate::endpoint::ExecutionOutcome;
use crate::extraction::{extract_from_text, Completion, THINK_CLOSE};
use crate::sparql::AnswerSet;

/// Set F1 between two answers.
///
/// Scalar answers (boolean, count) score 1 when equal and 0 otherwise. Binding
/// sets are compared as sets of whitespace-trimmed tuples; two empty sets are
/// a perfect match. Different kinds never match.
pub fn answer_f1(generated: &AnswerSet, gold: &AnswerSet) -> f64 {
    match (generated.normalized(), gold.normalized()) {
        (AnswerSet::Boolean(a), AnswerSet::Boolean(b)) => f64::from(u8::from(a == b)),
        (AnswerSet::Count(a), AnswerSet::Count(b)) => f64::from(u8::from(a == b)),
        (AnswerSet::Bindings(a), AnswerSet::Bindings(b)) => set_f1(&a, &b),
        _ => 0.0,
    }
}

fn set_f1(a: &BTreeSet<Vec<String>>, b: &BTreeSet<Vec<String>>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let common = a.intersection(b).count();
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / a.len() as f64;
    let r = common as f64 / b.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn r_exec(outcome: &ExecutionOutcome, gold: &AnswerSet, failure_penalty: f64) -> f64 {
    match (&outcome.answers, outcome.is_ok()) {
        (Some(answers), true) => answer_f1(answers, gold),
        _ => failure_penalty,
    }
}

pub fn r_struct(query_text: &str, entities: &[EntityHint], relations: &[RelationHint]) -> f64 {
    let all_relations = relations.iter().all(|r| query_text.contains(&r.uri));
    let all_entities = entities.iter().all(|e| query_text.contains(&e.uri));
    0.5 * f64::from(u8::from(all_relations)) + 0.5 * f64::from(u8::from(all_entities))
}

pub fn r_format(completion: &Completion) -> f64 {
    let ok = if completion.text.contains(THINK_CLOSE) {
        !extract_from_text(&completion.text).query_text.is_empty()
    } else {
        !completion.text.trim().is_empty()
    };
    f64::from(u8::from(ok))
}

/// Linear length penalty: 1 up to `n` tokens, 0 from `a` on.
pub fn r_len(x: usize, n: usize, a: usize) -> f64 {
    assert!(n < a, "len_target {n} must be below len_max {a}");
    let v = 1.0 - (x as f64 - n as f64) / (a as f64 - n as f64);
    v.clamp(0.0, 1.0)
}

/// `exp(-alpha * |ln(gen/gold)|)`; a zero-length generation scores 0.
pub fn r_len_ratio(gen_tokens: usize, gold_tokens: usize, alpha: f64) -> f64 {
    if gen_tokens == 0 || gold_tokens == 0 {
        return 0.0;
    }
    (-alpha * (gen_tokens as f64 / gold_tokens as f64).ln().abs()).exp()
}
