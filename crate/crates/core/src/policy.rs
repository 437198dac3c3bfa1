//! Policies, their composition operators and the total action order.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TelemetryEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EnforcementActionKind {
    Allow = 0,
    Flag = 1,
    Quarantine = 2,
    Deny = 3,
}

impl EnforcementActionKind {
    pub const ALL: [EnforcementActionKind; 4] = [
        EnforcementActionKind::Allow,
        EnforcementActionKind::Flag,
        EnforcementActionKind::Quarantine,
        EnforcementActionKind::Deny,
    ];

    pub fn severity(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            EnforcementActionKind::Allow => "ALLOW",
            EnforcementActionKind::Flag => "FLAG",
            EnforcementActionKind::Quarantine => "QUARANTINE",
            EnforcementActionKind::Deny => "DENY",
        }
    }
}

impl fmt::Display for EnforcementActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn action_max(a: EnforcementActionKind, b: EnforcementActionKind) -> EnforcementActionKind {
    a.max(b)
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(f64),
    #[error("policy set is empty")]
    EmptySet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: EnforcementActionKind,
    pub confidence: f64,
}

impl Decision {
    pub fn new(action: EnforcementActionKind, confidence: f64) -> Result<Self, PolicyError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(PolicyError::BadConfidence(confidence));
        }
        Ok(Self { action, confidence })
    }

    pub const fn allow() -> Self {
        Self {
            action: EnforcementActionKind::Allow,
            confidence: 1.0,
        }
    }
}

/// A decision together with whether the policy could actually decide.
/// Indeterminate outcomes are resolved by the caller's fail mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assessment {
    pub decision: Decision,
    pub indeterminate: bool,
}

impl From<Decision> for Assessment {
    fn from(decision: Decision) -> Self {
        Self {
            decision,
            indeterminate: false,
        }
    }
}

pub trait Policy: Send + Sync {
    fn id(&self) -> &str;

    fn assess(&self, event: &TelemetryEvent) -> Assessment;

    fn evaluate(&self, event: &TelemetryEvent) -> Decision {
        self.assess(event).decision
    }
}

pub type PolicyRef = Arc<dyn Policy>;

pub struct FnPolicy<F> {
    id: String,
    f: F,
}

impl<F> FnPolicy<F>
where
    F: Fn(&TelemetryEvent) -> Decision + Send + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&TelemetryEvent) -> Decision + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn assess(&self, event: &TelemetryEvent) -> Assessment {
        (self.f)(event).into()
    }
}

/// A policy that always returns the same decision.
pub fn constant(id: impl Into<String>, decision: Decision) -> PolicyRef {
    Arc::new(FnPolicy::new(id, move |_: &TelemetryEvent| decision))
}

fn fold_parallel(ds: impl IntoIterator<Item = Assessment>) -> Option<Assessment> {
    ds.into_iter().reduce(|acc, d| Assessment {
        decision: Decision {
            action: action_max(acc.decision.action, d.decision.action),
            confidence: acc.decision.confidence.max(d.decision.confidence),
        },
        indeterminate: acc.indeterminate || d.indeterminate,
    })
}

pub struct ParallelPolicy {
    id: String,
    members: Vec<PolicyRef>,
}

impl ParallelPolicy {
    pub fn members(&self) -> &[PolicyRef] {
        &self.members
    }
}

impl Policy for ParallelPolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn assess(&self, event: &TelemetryEvent) -> Assessment {
        fold_parallel(self.members.iter().map(|p| p.assess(event)))
            .expect("parallel policy is never empty")
    }
}

pub fn parallel_compose(policies: Vec<PolicyRef>) -> Result<ParallelPolicy, PolicyError> {
    if policies.is_empty() {
        return Err(PolicyError::EmptySet);
    }
    let id = format!(
        "par({})",
        policies
            .iter()
            .map(|p| p.id())
            .collect::<Vec<_>>()
            .join(",")
    );
    Ok(ParallelPolicy {
        id,
        members: policies,
    })
}

pub struct SequentialPolicy {
    id: String,
    first: PolicyRef,
    second: PolicyRef,
}

impl Policy for SequentialPolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn assess(&self, event: &TelemetryEvent) -> Assessment {
        let a = self.first.assess(event);
        if a.decision.action == EnforcementActionKind::Deny {
            return a;
        }
        let b = self.second.assess(event);
        let d1 = a.decision;
        let d2 = b.decision;
        let confidence = match d1.action.cmp(&d2.action) {
            std::cmp::Ordering::Greater => d1.confidence,
            std::cmp::Ordering::Less => d2.confidence,
            std::cmp::Ordering::Equal => d1.confidence.max(d2.confidence),
        };
        Assessment {
            decision: Decision {
                action: action_max(d1.action, d2.action),
                confidence,
            },
            indeterminate: a.indeterminate || b.indeterminate,
        }
    }
}

pub fn sequential_compose(first: PolicyRef, second: PolicyRef) -> SequentialPolicy {
    SequentialPolicy {
        id: format!("seq({},{})", first.id(), second.id()),
        first,
        second,
    }
}

pub fn assess_policy_set(
    policies: &[PolicyRef],
    event: &TelemetryEvent,
) -> Result<Assessment, PolicyError> {
    fold_parallel(policies.iter().map(|p| p.assess(event))).ok_or(PolicyError::EmptySet)
}

/// Parallel composition of the whole set; independent of list order.
pub fn evaluate_policy_set(
    policies: &[PolicyRef],
    event: &TelemetryEvent,
) -> Result<Decision, PolicyError> {
    assess_policy_set(policies, event).map(|a| a.decision)
}
