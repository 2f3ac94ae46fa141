use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Normalized execution result.
///
/// Binding tuples hold lexical forms in projection order. The tuple set is
/// duplicate-free by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSet {
    Boolean(bool),
    Bindings(BTreeSet<Vec<String>>),
    Count(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerKind {
    Boolean,
    Bindings,
    Count,
}

impl AnswerSet {
    pub fn kind(&self) -> AnswerKind {
        match self {
            AnswerSet::Boolean(_) => AnswerKind::Boolean,
            AnswerSet::Bindings(_) => AnswerKind::Bindings,
            AnswerSet::Count(_) => AnswerKind::Count,
        }
    }

    pub fn bindings<I, T, S>(rows: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AnswerSet::Bindings(
            rows.into_iter()
                .map(|r| r.into_iter().map(Into::into).collect())
                .collect(),
        )
    }

    /// Same answer with every lexical form whitespace-trimmed.
    pub fn normalized(&self) -> AnswerSet {
        match self {
            AnswerSet::Bindings(rows) => AnswerSet::Bindings(
                rows.iter()
                    .map(|r| r.iter().map(|v| v.trim().to_string()).collect())
                    .collect(),
            ),
            other => other.clone(),
        }
    }

    /// Number of answers: tuples for bindings, one for scalar answers.
    pub fn len(&self) -> usize {
        match self {
            AnswerSet::Bindings(rows) => rows.len(),
            _ => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, AnswerSet::Bindings(rows) if rows.is_empty())
    }
}
