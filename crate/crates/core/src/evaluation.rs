//! Metric suite: EMAcc, ExAcc, F1, TempAcc, GenAcc and per-category scores.
//!
//! * EMAcc: the generated answer set equals the gold answer set.
//! * ExAcc: the generated query executes without error.
//! * F1: unweighted mean of per-instance answer F1 (per-category macro F1 is
//!   reported alongside).
//! * TempAcc / GenAcc: EMAcc over temporal / held-out-template instances.

use std::collections::BTreeMap;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QAInstance, QueryType};
use crate::endpoint::{Backend, ExecutionOutcome, QueryCache};
use crate::extraction::{extract_query, Completion};
use crate::rewards::answer_f1;

/// Tolerance of the category-weighted EM identity.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub id: String,
    pub extracted_query: String,
    pub outcome: ExecutionOutcome,
    pub f1: f64,
    pub exact_match: bool,
    pub category: QueryType,
    pub is_temporal: bool,
    pub is_heldout: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{instances} instances but {completions} completions")]
    CountMismatch { instances: usize, completions: usize },
    #[error("instance {0} has no materialized gold answers")]
    NotMaterialized(String),
    #[error("no results to aggregate")]
    Empty,
}

pub fn evaluate_run(
    instances: &[QAInstance],
    completions: &[Completion],
    backend: &dyn Backend,
    cache: &QueryCache,
) -> Result<Vec<InstanceResult>, EvalError> {
    evaluate_run_with_timeout(instances, completions, backend, cache, backend.default_timeout())
}

pub fn evaluate_run_with_timeout(
    instances: &[QAInstance],
    completions: &[Completion],
    backend: &dyn Backend,
    cache: &QueryCache,
    timeout: Option<Duration>,
) -> Result<Vec<InstanceResult>, EvalError> {
    if instances.len() != completions.len() {
        return Err(EvalError::CountMismatch {
            instances: instances.len(),
            completions: completions.len(),
        });
    }
    if let Some(i) = instances.iter().find(|i| i.gold_answers.is_none()) {
        return Err(EvalError::NotMaterialized(i.id.clone()));
    }
    Ok(instances
        .par_iter()
        .zip(completions)
        .map(|(inst, completion)| {
            let query = extract_query(completion).query_text;
            let outcome = cache.execute(&query, backend, timeout);
            let gold = inst.gold_answers.as_ref().expect("checked above");
            let (f1, exact_match) = match (&outcome.answers, outcome.is_ok()) {
                (Some(a), true) => (answer_f1(a, gold), a.normalized() == gold.normalized()),
                _ => (0.0, false),
            };
            InstanceResult {
                id: inst.id.clone(),
                extracted_query: query,
                outcome,
                f1,
                exact_match,
                category: inst.query_type,
                is_temporal: inst.is_temporal,
                is_heldout: inst.is_heldout,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub count: usize,
    /// `None` when the category has no instances.
    pub em: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub em_acc: f64,
    pub ex_acc: f64,
    /// Mean per-instance F1.
    pub macro_f1: f64,
    /// Mean of per-category mean F1 over non-empty categories.
    pub category_macro_f1: f64,
    pub temp_acc: Option<f64>,
    pub temporal_count: usize,
    pub gen_acc: Option<f64>,
    pub heldout_count: usize,
    /// Keyed by category name, in the fixed category order.
    pub categories: BTreeMap<String, CategoryScore>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(results: &[InstanceResult]) -> Result<EvalReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    for r in results {
        assert!(!r.exact_match || r.f1 == 1.0, "{}: exact match with F1 {}", r.id, r.f1);
        assert!(r.outcome.is_ok() || (r.f1 == 0.0 && !r.exact_match), "{}: failed execution scored", r.id);
    }
    let em = |r: &InstanceResult| f64::from(u8::from(r.exact_match));
    let n = results.len();
    let em_acc = mean(results.iter().map(em)).expect("non-empty");
    let ex_acc = mean(results.iter().map(|r| f64::from(u8::from(r.outcome.is_ok())))).expect("non-empty");
    let macro_f1 = mean(results.iter().map(|r| r.f1)).expect("non-empty");
    let temporal: Vec<&InstanceResult> = results.iter().filter(|r| r.is_temporal).collect();
    let heldout: Vec<&InstanceResult> = results.iter().filter(|r| r.is_heldout).collect();

    let mut categories = BTreeMap::new();
    for cat in QueryType::ALL {
        let slice: Vec<&InstanceResult> = results.iter().filter(|r| r.category == cat).collect();
        categories.insert(
            cat.name().to_string(),
            CategoryScore {
                count: slice.len(),
                em: mean(slice.iter().map(|r| em(r))),
                f1: mean(slice.iter().map(|r| r.f1)),
            },
        );
    }
    let category_macro_f1 = mean(categories.values().filter_map(|c| c.f1)).expect("non-empty");

    let report = EvalReport {
        count: n,
        em_acc,
        ex_acc,
        macro_f1,
        category_macro_f1,
        temp_acc: mean(temporal.iter().map(|r| em(r))),
        temporal_count: temporal.len(),
        gen_acc: mean(heldout.iter().map(|r| em(r))),
        heldout_count: heldout.len(),
        categories,
    };
    check_identities(&report);
    Ok(report)
}

/// Metric identities that hold for every run; a violation is a bug.
pub fn check_identities(report: &EvalReport) {
    assert!(report.ex_acc >= report.em_acc, "ExAcc {} < EMAcc {}", report.ex_acc, report.em_acc);
    assert!(
        report.macro_f1 + IDENTITY_TOLERANCE >= report.em_acc,
        "F1 {} < EMAcc {}",
        report.macro_f1,
        report.em_acc
    );
    let weighted: f64 = report
        .categories
        .values()
        .filter_map(|c| c.em.map(|em| em * c.count as f64))
        .sum::<f64>()
        / report.count as f64;
    assert!(
        (weighted - report.em_acc).abs() <= IDENTITY_TOLERANCE,
        "category-weighted EM {weighted} != EMAcc {}",
        report.em_acc
    );
    let total: usize = report.categories.values().map(|c| c.count).sum();
    assert_eq!(total, report.count, "category counts do not cover the run");
    assert!(report.temporal_count <= report.count && report.heldout_count <= report.count);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str("| EMAcc | ExAcc | F1 |\n|---|---|---|\n");
            out.push_str(&format!(
                "| {:.3} | {:.3} | {:.3} |\n\n",
                report.em_acc, report.ex_acc, report.macro_f1
            ));
            out.push_str(&category_table(report));
            out.push('\n');
            out.push_str("| Overall EM | TempAcc | GenAcc |\n|---|---|---|\n");
            out.push_str(&format!(
                "| {:.3} | {} | {} |\n",
                report.em_acc,
                cell(report.temp_acc),
                cell(report.gen_acc)
            ));
            out
        }
    }
}

/// Per-category EM and F1 with abbreviated headers.
pub fn category_table(report: &EvalReport) -> String {
    let cats = QueryType::TABLE_ORDER;
    let mut out = String::from("| Metric |");
    for c in cats {
        out.push_str(&format!(" {} |", c.abbreviation()));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(cats.len()));
    out.push('\n');
    for (name, pick) in [
        ("EM", (|c: &CategoryScore| c.em) as fn(&CategoryScore) -> Option<f64>),
        ("F1", |c: &CategoryScore| c.f1),
    ] {
        out.push_str(&format!("| {name} |"));
        for c in cats {
            out.push_str(&format!(" {} |", cell(pick(&report.categories[c.name()]))));
        }
        out.push('\n');
    }
    out
}

/// One row per run: EMAcc / ExAcc / F1 / TempAcc / GenAcc.
pub fn comparison_table(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from("| Configuration | EMAcc | ExAcc | F1 | TempAcc | GenAcc |\n|---|---|---|---|---|---|\n");
    for (name, r) in rows {
        out.push_str(&format!(
            "| {name} | {:.3} | {:.3} | {:.3} | {} | {} |\n",
            r.em_acc,
            r.ex_acc,
            r.macro_f1,
            cell(r.temp_acc),
            cell(r.gen_acc)
        ));
    }
    out
}
