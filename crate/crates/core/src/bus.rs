//! The enforcement pipeline: verify → replay → fail-mode gate → policy
//! evaluation → escalation → apply → audit → trust feedback.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::escalation::{
    AgentEscalationState, EscalationConfig, ResetOutcome, ViolationRecord, MAX_LEVEL,
};
use crate::model::{
    derive_risk_tier, AgentId, Capability, FailMode, RiskTier, TelemetryEvent, Tier, TierConfig,
    Verified, ViolationType,
};
use crate::plane::audit::{AuditError, AuditLog};
use crate::plane::canonical::canonical_serialize;
use crate::plane::replay::{ReplayConfig, ReplayFilter, ReplayVerdict};
use crate::plane::signing::{verify_event, EventSigner, KeyRegistry};
use crate::policy::{Decision, EnforcementActionKind};
use crate::rules::{AgentDirectory, CompiledPack, RuleError, RulePack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EnforcementMode {
    /// Whole-chain evaluation with enforcement.
    Full,
    /// Rules see only the last lineage hop.
    BoundaryOnly,
    /// Decisions are recorded but never applied.
    ObserveOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EnforcementLevel {
    L0Allow = 0,
    L1Alert = 1,
    L2Flag = 2,
    L3Redirect = 3,
    L4Quarantine = 4,
}

impl EnforcementLevel {
    pub fn from_u8(l: u8) -> Self {
        match l {
            0 => Self::L0Allow,
            1 => Self::L1Alert,
            2 => Self::L2Flag,
            3 => Self::L3Redirect,
            _ => Self::L4Quarantine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Reason {
    Policy,
    CircuitBreaker,
    FailClosedUnverified,
    FailOpenPass,
    Replay,
    Quarantined,
    /// A rule could not be decided (unknown agent) and the tier fails closed.
    Indeterminate,
    InternalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateResult {
    Proceed,
    DenyUnverified,
    PassWithAlert,
}

pub fn gate_unverified(verified: Verified, tier: RiskTier) -> GateResult {
    match (verified, tier.fail_mode) {
        (Verified::True, _) => GateResult::Proceed,
        (_, FailMode::FailClosed) => GateResult::DenyUnverified,
        (_, FailMode::FailOpen) => GateResult::PassWithAlert,
    }
}

/// Minimum level implied by a policy action. DENY blocks the operation
/// without raising the level floor.
pub fn action_floor(action: EnforcementActionKind) -> u8 {
    match action {
        EnforcementActionKind::Allow | EnforcementActionKind::Deny => 0,
        EnforcementActionKind::Flag => 2,
        EnforcementActionKind::Quarantine => MAX_LEVEL,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnforcementOutcome {
    pub event_digest: String,
    pub source: AgentId,
    pub receiver: AgentId,
    pub operation: String,
    pub tier: Tier,
    pub verified: Verified,
    pub decided_action: Option<Decision>,
    pub violation: Option<ViolationType>,
    pub rule_id: Option<String>,
    pub applied_level: EnforcementLevel,
    pub operation_completed: bool,
    /// Receiver actually reached; differs from `receiver` on redirect.
    pub delivered_to: Option<AgentId>,
    pub reason: Reason,
    #[serde(skip)]
    pub latency_detection_ms: f64,
    #[serde(skip)]
    pub latency_e2e_ms: f64,
}

impl EnforcementOutcome {
    pub fn redirected(&self) -> bool {
        self.delivered_to
            .as_ref()
            .is_some_and(|d| *d != self.receiver)
    }

    pub fn blocked(&self) -> bool {
        !self.operation_completed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub timestamp: f64,
    pub agent: AgentId,
    pub kind: String,
    pub detail: String,
}

/// One audit log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditRecord {
    Enforcement {
        timestamp: f64,
        event_digest: String,
        source: AgentId,
        receiver: AgentId,
        operation: String,
        tier: Tier,
        verified: Verified,
        decided_action: Option<Decision>,
        violation: Option<ViolationType>,
        rule_id: Option<String>,
        applied_level: EnforcementLevel,
        operation_completed: bool,
        delivered_to: Option<AgentId>,
        reason: Reason,
        trust_after: Option<f64>,
    },
    BreakerReset {
        timestamp: f64,
        agent: AgentId,
        operator_token: String,
        level_after: u8,
    },
}

#[derive(Debug, Error)]
pub enum BusError {
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error("unknown compliance sink {0}")]
    UnknownSink(String),
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("operator token must be non-empty")]
    EmptyToken,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounters {
    pub received: u64,
    pub verified: u64,
    pub replay_checked: u64,
    pub policy_evaluated: u64,
    pub escalated: u64,
    pub audited: u64,
}

pub struct BusConfig {
    pub mode: EnforcementMode,
    pub tiers: TierConfig,
    pub escalation: EscalationConfig,
    pub replay: ReplayConfig,
    pub compliance_sink: AgentId,
}

pub struct EnforcementBus {
    mode: EnforcementMode,
    tiers: TierConfig,
    escalation: EscalationConfig,
    pack: CompiledPack,
    directory: Arc<AgentDirectory>,
    registry: KeyRegistry,
    replay: ReplayFilter,
    audit: AuditLog,
    audit_signer: Option<Arc<dyn EventSigner>>,
    agents: BTreeMap<AgentId, AgentEscalationState>,
    compliance_sink: AgentId,
    counters: StageCounters,
    alerts: Vec<AlertRecord>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl EnforcementBus {
    pub fn new(
        config: BusConfig,
        pack: &RulePack,
        directory: Arc<AgentDirectory>,
        registry: KeyRegistry,
        audit: AuditLog,
        audit_signer: Option<Arc<dyn EventSigner>>,
    ) -> Result<Self, BusError> {
        if !directory.jurisdiction.contains_key(&config.compliance_sink) {
            return Err(BusError::UnknownSink(config.compliance_sink.to_string()));
        }
        let compiled = CompiledPack::compile(pack, directory.clone())?;
        let agents = directory
            .capabilities
            .iter()
            .map(|(a, caps)| {
                (
                    a.clone(),
                    AgentEscalationState::new(a.clone(), 1.0, caps.clone()),
                )
            })
            .collect();
        Ok(Self {
            mode: config.mode,
            tiers: config.tiers,
            escalation: config.escalation,
            pack: compiled,
            directory,
            registry,
            replay: ReplayFilter::new(config.replay),
            audit,
            audit_signer,
            agents,
            compliance_sink: config.compliance_sink,
            counters: StageCounters::default(),
            alerts: Vec::new(),
        })
    }

    pub fn mode(&self) -> EnforcementMode {
        self.mode
    }

    pub fn counters(&self) -> StageCounters {
        self.counters
    }

    pub fn alerts(&self) -> &[AlertRecord] {
        &self.alerts
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn audit_mut(&mut self) -> &mut AuditLog {
        &mut self.audit
    }

    pub fn registry_mut(&mut self) -> &mut KeyRegistry {
        &mut self.registry
    }

    pub fn agent_state(&self, a: &AgentId) -> Option<&AgentEscalationState> {
        self.agents.get(a)
    }

    pub fn agent_states(&self) -> impl Iterator<Item = &AgentEscalationState> {
        self.agents.values()
    }

    fn alert(&mut self, timestamp: f64, agent: &AgentId, kind: &str, detail: String) {
        self.alerts.push(AlertRecord {
            timestamp,
            agent: agent.clone(),
            kind: kind.to_string(),
            detail,
        });
    }

    fn state_mut(&mut self, a: &AgentId) -> &mut AgentEscalationState {
        self.agents
            .entry(a.clone())
            .or_insert_with(|| AgentEscalationState::new(a.clone(), 1.0, BTreeSet::new()))
    }

    fn append_audit(&mut self, record: &AuditRecord) -> Result<(), BusError> {
        let bytes = serde_json::to_vec(record).expect("audit records serialize");
        let sig = self
            .audit_signer
            .as_ref()
            .map(|s| s.sign(&bytes))
            .unwrap_or_default();
        self.audit.append(&bytes, &sig)?;
        self.counters.audited += 1;
        Ok(())
    }

    /// Runs one event through the full pipeline and audits the outcome.
    pub fn process_event(
        &mut self,
        event: &TelemetryEvent,
    ) -> Result<EnforcementOutcome, BusError> {
        self.process_event_at(event, event.timestamp)
    }

    /// As [`process_event`](Self::process_event), with the bus clock at
    /// `arrival` instead of the event's own timestamp. The replay window
    /// runs on arrival time.
    pub fn process_event_at(
        &mut self,
        event: &TelemetryEvent,
        arrival: f64,
    ) -> Result<EnforcementOutcome, BusError> {
        let start = Instant::now();
        self.counters.received += 1;
        let risk = derive_risk_tier(event, &self.tiers);
        let mut out = EnforcementOutcome {
            event_digest: String::new(),
            source: event.source.clone(),
            receiver: event.receiver.clone(),
            operation: event.operation.clone(),
            tier: risk.tier,
            verified: Verified::Unknown,
            decided_action: None,
            violation: None,
            rule_id: None,
            applied_level: EnforcementLevel::L0Allow,
            operation_completed: false,
            delivered_to: None,
            reason: Reason::Policy,
            latency_detection_ms: 0.0,
            latency_e2e_ms: 0.0,
        };
        let trust_after = match canonical_serialize(event) {
            Err(e) => {
                out.event_digest = digest(format!("{event:?}").as_bytes());
                self.internal_failure(event, risk, &mut out, &e.to_string());
                None
            }
            Ok(bytes) => {
                out.event_digest = digest(&bytes);
                self.pipeline(event, arrival, risk, &mut out, start)
            }
        };
        if out.latency_detection_ms == 0.0 {
            out.latency_detection_ms = start.elapsed().as_secs_f64() * 1e3;
        }
        let record = AuditRecord::Enforcement {
            timestamp: event.timestamp,
            event_digest: out.event_digest.clone(),
            source: out.source.clone(),
            receiver: out.receiver.clone(),
            operation: out.operation.clone(),
            tier: out.tier,
            verified: out.verified,
            decided_action: out.decided_action,
            violation: out.violation,
            rule_id: out.rule_id.clone(),
            applied_level: out.applied_level,
            operation_completed: out.operation_completed,
            delivered_to: out.delivered_to.clone(),
            reason: out.reason,
            trust_after,
        };
        self.append_audit(&record)?;
        out.latency_e2e_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(out)
    }

    fn internal_failure(
        &mut self,
        event: &TelemetryEvent,
        risk: RiskTier,
        out: &mut EnforcementOutcome,
        detail: &str,
    ) {
        out.reason = Reason::InternalFailure;
        match risk.fail_mode {
            FailMode::FailClosed => out.operation_completed = false,
            FailMode::FailOpen => {
                out.operation_completed = self.mode == EnforcementMode::ObserveOnly
                    || !self
                        .agents
                        .get(&event.source)
                        .is_some_and(|s| s.is_quarantined());
                out.delivered_to = out.operation_completed.then(|| event.receiver.clone());
                self.alert(
                    event.timestamp,
                    &event.source,
                    "INTERNAL_FAILURE",
                    detail.to_string(),
                );
            }
        }
        if self.mode == EnforcementMode::ObserveOnly {
            out.operation_completed = true;
            out.delivered_to = Some(event.receiver.clone());
        }
    }

    /// Stages after canonicalisation. Returns the source's trust after the
    /// closed-loop update, when one happened.
    fn pipeline(
        &mut self,
        event: &TelemetryEvent,
        arrival: f64,
        risk: RiskTier,
        out: &mut EnforcementOutcome,
        start: Instant,
    ) -> Option<f64> {
        let observe = self.mode == EnforcementMode::ObserveOnly;
        let complete = |out: &mut EnforcementOutcome, to: &AgentId| {
            out.operation_completed = true;
            out.delivered_to = Some(to.clone());
        };

        let verified = verify_event(event, &self.registry);
        self.counters.verified += 1;
        out.verified = verified;

        self.counters.replay_checked += 1;
        if self.replay.check(&event.source, event.nonce, arrival) == ReplayVerdict::Replay {
            out.reason = Reason::Replay;
            if observe {
                complete(out, &event.receiver);
            }
            return None;
        }

        let mut fail_open = false;
        match gate_unverified(verified, risk) {
            GateResult::Proceed => {}
            GateResult::DenyUnverified => {
                out.reason = Reason::FailClosedUnverified;
                if observe {
                    complete(out, &event.receiver);
                }
                return None;
            }
            GateResult::PassWithAlert => {
                fail_open = true;
                self.alert(
                    event.timestamp,
                    &event.source,
                    "UNVERIFIED_PASS",
                    format!("verified={}", verified.name()),
                );
            }
        }

        if !observe && self.state_mut(&event.source).is_quarantined() {
            out.reason = Reason::Quarantined;
            out.applied_level = EnforcementLevel::L4Quarantine;
            let cfg = self.escalation.clone();
            let st = self.state_mut(&event.source);
            st.update_trust(MAX_LEVEL, &cfg);
            return Some(st.trust);
        }

        let outcome = if self.mode == EnforcementMode::BoundaryOnly {
            let mut boundary = event.clone();
            let last = boundary.governance.lineage.last().cloned();
            boundary.governance.lineage = last.into_iter().collect();
            self.pack.evaluate(&boundary)
        } else {
            self.pack.evaluate(event)
        };
        self.counters.policy_evaluated += 1;
        out.latency_detection_ms = start.elapsed().as_secs_f64() * 1e3;
        out.decided_action = Some(outcome.decision);
        if let Some(p) = &outcome.primary {
            out.violation = Some(p.violation);
            out.rule_id = Some(p.rule_id.clone());
        }
        out.reason = if fail_open {
            Reason::FailOpenPass
        } else {
            Reason::Policy
        };

        if observe {
            complete(out, &event.receiver);
            return None;
        }

        let mut decision = outcome.decision;
        let mut base = outcome.primary.as_ref().map_or(0, |p| p.base_level);
        if outcome.indeterminate && decision.action == EnforcementActionKind::Allow {
            match risk.fail_mode {
                FailMode::FailClosed => {
                    decision = Decision {
                        action: EnforcementActionKind::Deny,
                        confidence: 1.0,
                    };
                    base = 0;
                    out.reason = Reason::Indeterminate;
                }
                FailMode::FailOpen => self.alert(
                    event.timestamp,
                    &event.source,
                    "INDETERMINATE_PASS",
                    "rule could not be decided".into(),
                ),
            }
        }

        let cfg = self.escalation.clone();
        if decision.action == EnforcementActionKind::Allow {
            complete(out, &event.receiver);
            let st = self.state_mut(&event.source);
            st.update_trust(0, &cfg);
            return Some(st.trust);
        }

        let record = ViolationRecord {
            event_ref: Sha256::digest(out.event_digest.as_bytes()).into(),
            policy_id: Arc::from(out.rule_id.as_deref().unwrap_or("indeterminate")),
            decision,
            time: event.timestamp,
        };
        self.counters.escalated += 1;
        let st = self.state_mut(&event.source);
        let step = st
            .record_violation(record, base, &cfg)
            .expect("non-ALLOW decisions are always recordable");
        let mut level = step.level.max(action_floor(decision.action));
        if step.breaker_tripped {
            out.reason = Reason::CircuitBreaker;
            level = MAX_LEVEL;
        }
        if level == MAX_LEVEL && !st.is_quarantined() {
            st.current_level = MAX_LEVEL;
            st.capabilities.clear();
        }
        out.applied_level = EnforcementLevel::from_u8(level);
        st.update_trust(level, &cfg);
        let trust = st.trust;

        let blocked = decision.action == EnforcementActionKind::Deny || level == MAX_LEVEL;
        if !blocked {
            match level {
                3 => {
                    let sink = self.compliance_sink.clone();
                    complete(out, &sink);
                }
                _ => {
                    if level == 1 {
                        self.alert(
                            event.timestamp,
                            &event.source,
                            "L1_ALERT",
                            out.rule_id.clone().unwrap_or_default(),
                        );
                    }
                    complete(out, &event.receiver);
                }
            }
        }
        if level == MAX_LEVEL {
            self.alert(
                event.timestamp,
                &event.source,
                "QUARANTINE",
                format!("{:?}", out.reason),
            );
        }
        Some(trust)
    }

    /// Attaches the L2 flag annotation to an event that passed at L2.
    pub fn annotate(event: &mut TelemetryEvent, out: &EnforcementOutcome) {
        if out.applied_level == EnforcementLevel::L2Flag && out.operation_completed {
            event
                .governance
                .flags
                .push(format!("L2:{}", out.rule_id.as_deref().unwrap_or("policy")));
        }
    }

    /// Operator release of a quarantined agent; always audited.
    pub fn reset_agent(
        &mut self,
        agent: &AgentId,
        operator_token: &str,
        now: f64,
    ) -> Result<ResetOutcome, BusError> {
        if operator_token.is_empty() {
            return Err(BusError::EmptyToken);
        }
        let baseline: BTreeSet<Capability> = self
            .directory
            .capabilities
            .get(agent)
            .cloned()
            .ok_or_else(|| BusError::UnknownAgent(agent.to_string()))?;
        let cfg = self.escalation.clone();
        let st = self.state_mut(agent);
        let res = st
            .reset_circuit_breaker(operator_token, now, &baseline, &cfg)
            .map_err(|_| BusError::EmptyToken)?;
        let level_after = st.current_level;
        self.append_audit(&AuditRecord::BreakerReset {
            timestamp: now,
            agent: agent.clone(),
            operator_token: operator_token.to_string(),
            level_after,
        })?;
        Ok(res)
    }
}
