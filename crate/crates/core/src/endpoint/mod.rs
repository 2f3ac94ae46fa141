//! Query execution against an embedded store or a remote SPARQL endpoint.
//!
//! Every failure is returned as a classified [`ExecutionOutcome`]; nothing
//! raised by a backend crosses into reward computation.

mod cache;
mod embedded;
mod remote;
mod results_json;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::sparql::AnswerSet;

pub use cache::{cached_execute, CacheError, CacheRecord, QueryCache};
pub use embedded::EmbeddedBackend;
pub use remote::{HttpMethod, RemoteBackend};
pub use results_json::{parse_results_json, ResultsError};

/// Default timeout for remote endpoints.
pub const DEFAULT_REMOTE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecStatus {
    Ok,
    ParseOrSyntaxError,
    EndpointError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<AnswerSet>,
    #[serde(default)]
    pub message: String,
}

impl ExecutionOutcome {
    pub fn ok(answers: AnswerSet) -> Self {
        Self {
            status: ExecStatus::Ok,
            answers: Some(answers),
            message: String::new(),
        }
    }

    /// A failed outcome. An empty message is replaced by the status name.
    pub fn failure(status: ExecStatus, message: impl Into<String>) -> Self {
        assert_ne!(status, ExecStatus::Ok, "failure outcome with Ok status");
        let mut message = message.into();
        if message.trim().is_empty() {
            message = format!("{status:?}");
        }
        Self {
            status,
            answers: None,
            message,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

/// Something that executes query text.
pub trait Backend: Send + Sync {
    fn execute(&self, query: &str, timeout: Option<Duration>) -> ExecutionOutcome;

    /// Whether the backend can serve queries at all. Used before batch work.
    fn check_reachable(&self) -> Result<(), String>;

    /// Number of executions actually performed.
    fn executions(&self) -> u64;

    fn describe(&self) -> String;

    fn default_timeout(&self) -> Option<Duration> {
        None
    }
}

pub fn execute(query: &str, backend: &dyn Backend, timeout: Option<Duration>) -> ExecutionOutcome {
    backend.execute(query, timeout)
}

/// Trim a response body for inclusion in an error message.
pub(crate) fn excerpt(body: &str) -> String {
    const LIMIT: usize = 300;
    let body = body.trim();
    if body.len() <= LIMIT {
        return body.to_string();
    }
    let mut end = LIMIT;
    while !body.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &body[..end])
}
