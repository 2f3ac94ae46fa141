use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use super::{Backend, ExecStatus, ExecutionOutcome};
use crate::sparql::{evaluate, parse, Store};

/// Parses and evaluates locally against a shared immutable store.
#[derive(Debug)]
pub struct EmbeddedBackend {
    store: Arc<Store>,
    executions: AtomicU64,
}

impl EmbeddedBackend {
    pub fn new(store: Store) -> Self {
        Self::shared(Arc::new(store))
    }

    pub fn shared(store: Arc<Store>) -> Self {
        Self {
            store,
            executions: AtomicU64::new(0),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn run(store: &Store, query: &str) -> ExecutionOutcome {
        let ast = match parse(query) {
            Ok(ast) => ast,
            Err(e) => return ExecutionOutcome::failure(ExecStatus::ParseOrSyntaxError, e.to_string()),
        };
        match evaluate(&ast, store) {
            Ok(answers) => ExecutionOutcome::ok(answers),
            Err(e) => ExecutionOutcome::failure(ExecStatus::ParseOrSyntaxError, e.to_string()),
        }
    }
}

impl Backend for EmbeddedBackend {
    fn execute(&self, query: &str, timeout: Option<Duration>) -> ExecutionOutcome {
        self.executions.fetch_add(1, Ordering::Relaxed);
        let Some(limit) = timeout else {
            return Self::run(&self.store, query);
        };
        // The worker is detached on timeout and finishes in the background.
        let (tx, rx) = mpsc::channel();
        let store = Arc::clone(&self.store);
        let query = query.to_string();
        std::thread::spawn(move || {
            let _ = tx.send(Self::run(&store, &query));
        });
        match rx.recv_timeout(limit) {
            Ok(outcome) => outcome,
            Err(_) => ExecutionOutcome::failure(
                ExecStatus::Timeout,
                format!("embedded evaluation exceeded {limit:?}"),
            ),
        }
    }

    fn check_reachable(&self) -> Result<(), String> {
        Ok(())
    }

    fn executions(&self) -> u64 {
        self.executions.load(Ordering::Relaxed)
    }

    fn describe(&self) -> String {
        format!("embedded store ({} triples)", self.store.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparql::{AnswerSet, Triple};

    fn backend() -> EmbeddedBackend {
        EmbeddedBackend::new(Store::new([Triple::iris("a", "p", "b")]))
    }

    #[test]
    fn valid_ask() {
        let out = backend().execute("ASK { <a> <p> <b> }", None);
        assert_eq!(out, ExecutionOutcome::ok(AnswerSet::Boolean(true)));
    }

    #[test]
    fn malformed_keyword_is_syntax_error() {
        let out = backend().execute("SELEC ?x WHERE { ?x <p> <b> }", None);
        assert_eq!(out.status, ExecStatus::ParseOrSyntaxError);
        assert!(out.answers.is_none());
        assert!(!out.message.is_empty());
    }

    #[test]
    fn timeout_path_returns_result_when_fast() {
        let out = backend().execute("ASK { <a> <p> <b> }", Some(Duration::from_secs(5)));
        assert!(out.is_ok());
    }
}
