//! SPARQL 1.1 query results JSON (`application/sparql-results+json`).

use serde::Deserialize;
use serde_json::Value;
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

use crate::sparql::AnswerSet;

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("malformed results document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("results document has neither \"boolean\" nor \"results.bindings\"")]
    MissingResults,
}

#[derive(Deserialize)]
struct Head {
    #[serde(default)]
    vars: Vec<String>,
}

#[derive(Deserialize)]
struct Bindings {
    bindings: Vec<HashMap<String, Value>>,
}

#[derive(Deserialize)]
struct Document {
    #[serde(default)]
    head: Option<Head>,
    #[serde(default)]
    boolean: Option<bool>,
    #[serde(default)]
    results: Option<Bindings>,
}

/// Parse a results document. Rows are ordered by the head `vars`; a
/// variable missing from a row becomes the empty string.
pub fn parse_results_json(bytes: &[u8]) -> Result<AnswerSet, ResultsError> {
    let doc: Document = serde_json::from_slice(bytes)?;
    if let Some(b) = doc.boolean {
        return Ok(AnswerSet::Boolean(b));
    }
    let results = doc.results.ok_or(ResultsError::MissingResults)?;
    let vars = doc.head.map(|h| h.vars).unwrap_or_default();
    let mut rows = BTreeSet::new();
    for row in results.bindings {
        let tuple = vars
            .iter()
            .map(|v| {
                row.get(v)
                    .and_then(|cell| cell.get("value"))
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string()
            })
            .collect();
        rows.insert(tuple);
    }
    Ok(AnswerSet::Bindings(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boolean_document() {
        assert_eq!(
            parse_results_json(br#"{"head":{},"boolean":true}"#).unwrap(),
            AnswerSet::Boolean(true)
        );
    }

    #[test]
    fn bindings_follow_head_order() {
        let doc = br#"{"head":{"vars":["x","y"]},"results":{"bindings":[
            {"y":{"type":"literal","value":"2"},"x":{"type":"uri","value":"a"}},
            {"x":{"type":"uri","value":"b"}}
        ]}}"#;
        assert_eq!(
            parse_results_json(doc).unwrap(),
            AnswerSet::bindings([vec!["a", "2"], vec!["b", ""]])
        );
    }

    #[test]
    fn duplicate_rows_collapse() {
        let doc = br#"{"head":{"vars":["x"]},"results":{"bindings":[
            {"x":{"type":"uri","value":"a"}},
            {"x":{"type":"uri","value":"a"}},
            {"x":{"type":"uri","value":"c"}}
        ]}}"#;
        let a = parse_results_json(doc).unwrap();
        assert_eq!(a, AnswerSet::bindings([["a"], ["c"]]));
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(parse_results_json(b"{nope"), Err(ResultsError::Json(_))));
        assert!(matches!(
            parse_results_json(br#"{"head":{"vars":[]}}"#),
            Err(ResultsError::MissingResults)
        ));
    }
}
