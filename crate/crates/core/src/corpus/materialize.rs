use rayon::prelude::*;
use thiserror::Error;

use super::QAInstance;
use crate::endpoint::{Backend, ExecStatus};

#[derive(Debug, Error)]
pub enum MaterializeError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("instance {0} has no gold query")]
    MissingGoldQuery(String),
}

/// Execute every gold query and attach the answers. Per-query failures are
/// recorded on the instance (which then reports `is_usable() == false`);
/// an unreachable backend aborts the whole batch. Output order matches input.
pub fn materialize_gold_answers(
    instances: &[QAInstance],
    backend: &dyn Backend,
) -> Result<Vec<QAInstance>, MaterializeError> {
    if let Some(missing) = instances.iter().find(|i| i.gold_query.is_none()) {
        return Err(MaterializeError::MissingGoldQuery(missing.id.clone()));
    }
    backend
        .check_reachable()
        .map_err(MaterializeError::Unreachable)?;
    let timeout = backend.default_timeout();
    Ok(instances
        .par_iter()
        .map(|inst| {
            let query = inst.gold_query.as_deref().expect("checked above");
            let outcome = backend.execute(query, timeout);
            let mut out = inst.clone();
            if outcome.status == ExecStatus::Ok {
                out.gold_answers = outcome.answers;
                out.materialize_error = None;
            } else {
                log::warn!("{}: gold query failed: {}", inst.id, outcome.message);
                out.gold_answers = None;
                out.materialize_error = Some(format!("{:?}: {}", outcome.status, outcome.message));
            }
            out
        })
        .collect())
}
