//! Per-agent violation history, graduated escalation levels and the circuit
//! breaker.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{clamp01, AgentId, Capability, ViolationType};
use crate::policy::{Decision, EnforcementActionKind};
use crate::rules::RulePack;

pub const MAX_LEVEL: u8 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum EscalationError {
    #[error("window_w_seconds must be positive and finite")]
    BadWindow,
    #[error("k must be at least 1")]
    BadK,
    #[error("cb_threshold must be at least 1")]
    BadThreshold,
    #[error("cb_window_seconds must be positive and not exceed the escalation window")]
    BadCbWindow,
    #[error("no base level for violation {0}")]
    NoBaseLevel(&'static str),
    #[error("operator token must be non-empty")]
    EmptyToken,
    #[error("ALLOW decisions never enter the violation history")]
    AllowRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEscalationConfig", into = "RawEscalationConfig")]
pub struct EscalationConfig {
    pub window_w: f64,
    pub k: u32,
    pub cb_threshold: u32,
    pub cb_window: f64,
    pub breaker_enabled: bool,
    pub trust_decay_per_level: f64,
    pub trust_recovery: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEscalationConfig {
    window_w_seconds: f64,
    k: u32,
    #[serde(default)]
    cb_threshold: Option<u32>,
    #[serde(default)]
    cb_window_seconds: Option<f64>,
    #[serde(default = "yes")]
    breaker_enabled: bool,
    #[serde(default = "default_decay")]
    trust_decay_per_level: f64,
    #[serde(default = "default_recovery")]
    trust_recovery: f64,
}

fn yes() -> bool {
    true
}

fn default_decay() -> f64 {
    0.1
}

fn default_recovery() -> f64 {
    0.01
}

impl TryFrom<RawEscalationConfig> for EscalationConfig {
    type Error = EscalationError;
    fn try_from(r: RawEscalationConfig) -> Result<Self, Self::Error> {
        let mut c = EscalationConfig::new(r.window_w_seconds, r.k)?;
        if let Some(t) = r.cb_threshold {
            c.cb_threshold = t;
        }
        if let Some(w) = r.cb_window_seconds {
            c.cb_window = w;
        }
        c.breaker_enabled = r.breaker_enabled;
        c.trust_decay_per_level = r.trust_decay_per_level;
        c.trust_recovery = r.trust_recovery;
        c.validate()?;
        Ok(c)
    }
}

impl From<EscalationConfig> for RawEscalationConfig {
    fn from(c: EscalationConfig) -> Self {
        Self {
            window_w_seconds: c.window_w,
            k: c.k,
            cb_threshold: Some(c.cb_threshold),
            cb_window_seconds: Some(c.cb_window),
            breaker_enabled: c.breaker_enabled,
            trust_decay_per_level: c.trust_decay_per_level,
            trust_recovery: c.trust_recovery,
        }
    }
}

impl EscalationConfig {
    /// Breaker defaults: threshold 3k within W/4.
    pub fn new(window_w: f64, k: u32) -> Result<Self, EscalationError> {
        let c = Self {
            window_w,
            k,
            cb_threshold: 3 * k,
            cb_window: window_w / 4.0,
            breaker_enabled: true,
            trust_decay_per_level: default_decay(),
            trust_recovery: default_recovery(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), EscalationError> {
        if !(self.window_w.is_finite() && self.window_w > 0.0) {
            return Err(EscalationError::BadWindow);
        }
        if self.k == 0 {
            return Err(EscalationError::BadK);
        }
        if self.cb_threshold == 0 {
            return Err(EscalationError::BadThreshold);
        }
        if !(self.cb_window > 0.0 && self.cb_window <= self.window_w) {
            return Err(EscalationError::BadCbWindow);
        }
        Ok(())
    }

    /// Bound on convergence time without the breaker: 4k·W.
    pub fn t_max(&self) -> f64 {
        4.0 * self.k as f64 * self.window_w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    #[serde(with = "hex32")]
    pub event_ref: [u8; 32],
    pub policy_id: Arc<str>,
    pub decision: Decision,
    pub time: f64,
}

mod hex32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEscalationState {
    pub agent: AgentId,
    pub history: VecDeque<ViolationRecord>,
    pub current_level: u8,
    pub circuit_broken: bool,
    pub trust: f64,
    pub capabilities: BTreeSet<Capability>,
}

/// What one recorded violation did to an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub level: u8,
    pub breaker_tripped: bool,
    /// Level was already 4 before this violation.
    pub already_quarantined: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResetOutcome {
    Reset {
        level: u8,
    },
    /// Agent was not quarantined; nothing changed.
    NotQuarantined,
}

pub fn graduated_level(base: u8, history_len: usize, k: u32) -> u8 {
    let steps = history_len / k as usize;
    (base as usize + steps).min(MAX_LEVEL as usize) as u8
}

/// Level from accumulated history alone, used when no violation is active.
pub fn level_from_history(history_len: usize, k: u32) -> u8 {
    graduated_level(0, history_len, k)
}

impl AgentEscalationState {
    pub fn new(agent: AgentId, trust: f64, capabilities: BTreeSet<Capability>) -> Self {
        Self {
            agent,
            history: VecDeque::new(),
            current_level: 0,
            circuit_broken: false,
            trust: clamp01(trust),
            capabilities,
        }
    }

    pub fn is_quarantined(&self) -> bool {
        self.current_level == MAX_LEVEL
    }

    /// Keeps exactly the records with time in [now − W, now].
    pub fn prune_history(&mut self, now: f64, config: &EscalationConfig) {
        let lo = now - config.window_w;
        self.history.retain(|r| r.time >= lo && r.time <= now);
    }

    pub fn compute_level(
        &self,
        violation: ViolationType,
        config: &EscalationConfig,
        rules: &RulePack,
    ) -> Result<u8, EscalationError> {
        let base = rules
            .base_level(violation)
            .ok_or(EscalationError::NoBaseLevel(violation.name()))?;
        Ok(graduated_level(base, self.history.len(), config.k))
    }

    pub fn count_in_breaker_window(&self, now: f64, config: &EscalationConfig) -> usize {
        let lo = now - config.cb_window;
        self.history
            .iter()
            .rev()
            .take_while(|r| r.time >= lo)
            .filter(|r| r.time <= now)
            .count()
    }

    /// Trips the breaker when the count in [now − W_cb, now] exceeds k_cb.
    pub fn check_circuit_breaker(&mut self, now: f64, config: &EscalationConfig) -> bool {
        let tripped = self.count_in_breaker_window(now, config) > config.cb_threshold as usize;
        if tripped {
            self.circuit_broken = true;
            self.quarantine();
        }
        tripped
    }

    fn quarantine(&mut self) {
        self.current_level = MAX_LEVEL;
        self.capabilities.clear();
    }

    /// Records a violation with escalation base `base` at time `now`. The
    /// graduated level uses the history preceding this violation.
    pub fn record_violation(
        &mut self,
        record: ViolationRecord,
        base: u8,
        config: &EscalationConfig,
    ) -> Result<StepOutcome, EscalationError> {
        if record.decision.action == EnforcementActionKind::Allow {
            return Err(EscalationError::AllowRecord);
        }
        let now = record.time;
        self.prune_history(now, config);
        let already_quarantined = self.is_quarantined();
        let graduated = graduated_level(base, self.history.len(), config.k);
        self.history.push_back(record);
        if already_quarantined {
            return Ok(StepOutcome {
                level: MAX_LEVEL,
                breaker_tripped: false,
                already_quarantined,
            });
        }
        if config.breaker_enabled && self.check_circuit_breaker(now, config) {
            return Ok(StepOutcome {
                level: MAX_LEVEL,
                breaker_tripped: true,
                already_quarantined,
            });
        }
        self.current_level = graduated;
        if graduated == MAX_LEVEL {
            self.quarantine();
        }
        Ok(StepOutcome {
            level: graduated,
            breaker_tripped: false,
            already_quarantined,
        })
    }

    /// Operator release from quarantine (breaker or graduated L4).
    pub fn reset_circuit_breaker(
        &mut self,
        operator_token: &str,
        now: f64,
        baseline: &BTreeSet<Capability>,
        config: &EscalationConfig,
    ) -> Result<ResetOutcome, EscalationError> {
        if operator_token.is_empty() {
            return Err(EscalationError::EmptyToken);
        }
        if !self.is_quarantined() {
            return Ok(ResetOutcome::NotQuarantined);
        }
        self.prune_history(now, config);
        self.circuit_broken = false;
        let level = level_from_history(self.history.len(), config.k).min(MAX_LEVEL - 1);
        self.current_level = level;
        self.capabilities = baseline.clone();
        Ok(ResetOutcome::Reset { level })
    }

    pub fn update_trust(&mut self, applied_level: u8, config: &EscalationConfig) {
        self.trust = next_trust(self.trust, applied_level, config);
    }
}

pub fn next_trust(trust: f64, applied_level: u8, config: &EscalationConfig) -> f64 {
    if applied_level == 0 {
        clamp01((trust + config.trust_recovery).min(1.0))
    } else {
        clamp01(trust * (1.0 - config.trust_decay_per_level * applied_level as f64))
    }
}
