//! Report and state files: atomic writes and the operator breaker reset.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::AuditRecord;
use crate::escalation::{AgentEscalationState, EscalationConfig, EscalationError, ResetOutcome};
use crate::model::{AgentId, Capability};
use crate::plane::audit::{header_key, AuditError, AuditLog};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed state file: {0}")]
    State(#[from] serde_json::Error),
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error(transparent)]
    Escalation(#[from] EscalationError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("audit log expects signed records; operator resets go to an unsigned log")]
    SignedLog,
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("reports serialize");
    out.push(b'\n');
    out
}

/// Escalation state of a set of agents, as persisted between operator
/// actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscalationStateFile {
    pub escalation: EscalationConfig,
    pub baseline: BTreeMap<AgentId, BTreeSet<Capability>>,
    pub agents: Vec<AgentEscalationState>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResetReport {
    pub agent: AgentId,
    pub reset: bool,
    pub level_after: u8,
    pub audit_index: Option<u64>,
}

/// Releases `agent` from quarantine in the state file. A real reset is
/// appended to the audit log (created unsigned if missing) before the state
/// file is replaced; a reset of a non-quarantined agent changes nothing.
pub fn reset_breaker_files(
    state_path: &Path,
    log_path: &Path,
    agent: &AgentId,
    operator_token: &str,
    now: f64,
) -> Result<ResetReport, IoError> {
    let mut state: EscalationStateFile = serde_json::from_slice(&std::fs::read(state_path)?)?;
    let baseline = state.baseline.get(agent).cloned().unwrap_or_default();
    let st = state
        .agents
        .iter_mut()
        .find(|s| &s.agent == agent)
        .ok_or_else(|| IoError::UnknownAgent(agent.to_string()))?;
    let outcome = st.reset_circuit_breaker(operator_token, now, &baseline, &state.escalation)?;
    let level_after = st.current_level;
    if outcome == ResetOutcome::NotQuarantined {
        return Ok(ResetReport {
            agent: agent.clone(),
            reset: false,
            level_after,
            audit_index: None,
        });
    }
    let mut log = if log_path.exists() {
        let bytes = std::fs::read(log_path)?;
        if header_key(&bytes).is_some_and(|k| !k.is_empty()) {
            return Err(IoError::SignedLog);
        }
        AuditLog::open_append(log_path)?
    } else {
        AuditLog::create(log_path, &[])?
    };
    let record = AuditRecord::BreakerReset {
        timestamp: now,
        agent: agent.clone(),
        operator_token: operator_token.to_string(),
        level_after,
    };
    let receipt = log.append(
        &serde_json::to_vec(&record).expect("records serialize"),
        &[],
    )?;
    log.flush()?;
    write_atomic(state_path, &to_json_bytes(&state))?;
    Ok(ResetReport {
        agent: agent.clone(),
        reset: true,
        level_after,
        audit_index: Some(receipt.index),
    })
}
