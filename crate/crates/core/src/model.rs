//! Domain types shared by every layer of the enforcement stack.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("empty identifier")]
    EmptyId,
    #[error("duplicate agent {0}")]
    DuplicateAgent(String),
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("timestamp must be strictly positive and finite, got {0}")]
    BadTimestamp(f64),
    #[error("source equals receiver for non-self operation {0}")]
    SelfLoop(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ModelError::EmptyId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AgentId {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<AgentId> for String {
    fn from(a: AgentId) -> String {
        a.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Convenience constructor for literals known to be non-empty.
pub fn agent(id: &str) -> AgentId {
    AgentId::new(id).expect("agent id literal must be non-empty")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Capability(String);

impl Capability {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ModelError::EmptyId);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Capability {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<Capability> for String {
    fn from(c: Capability) -> String {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Classification {
    Pii,
    Financial,
    Operational,
    Public,
}

impl Classification {
    pub const ALL: [Classification; 4] = [
        Classification::Pii,
        Classification::Financial,
        Classification::Operational,
        Classification::Public,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Classification::Pii => "PII",
            Classification::Financial => "FINANCIAL",
            Classification::Operational => "OPERATIONAL",
            Classification::Public => "PUBLIC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Rank used when comparing how restrictive two classes are; lower is
    /// more sensitive.
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Jurisdiction {
    Eu,
    Us,
    Other,
}

impl Jurisdiction {
    pub const ALL: [Jurisdiction; 3] = [Jurisdiction::Eu, Jurisdiction::Us, Jurisdiction::Other];

    pub fn name(self) -> &'static str {
        match self {
            Jurisdiction::Eu => "EU",
            Jurisdiction::Us => "US",
            Jurisdiction::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|j| j.name() == s)
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Sensitivity {
    High,
    Medium,
    Low,
}

impl Sensitivity {
    pub const ALL: [Sensitivity; 3] = [Sensitivity::High, Sensitivity::Medium, Sensitivity::Low];

    pub fn name(self) -> &'static str {
        match self {
            Sensitivity::High => "HIGH",
            Sensitivity::Medium => "MEDIUM",
            Sensitivity::Low => "LOW",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verified {
    True,
    False,
    #[default]
    Unknown,
}

impl Verified {
    pub fn name(self) -> &'static str {
        match self {
            Verified::True => "TRUE",
            Verified::False => "FALSE",
            Verified::Unknown => "UNKNOWN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernanceMetadata {
    pub classification: Classification,
    pub jurisdiction: Jurisdiction,
    pub sensitivity: Sensitivity,
    pub lineage: Vec<AgentId>,
    #[serde(default)]
    pub verified: Verified,
    /// Annotations attached by flag-level enforcement. Not signed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl GovernanceMetadata {
    pub fn new(
        classification: Classification,
        jurisdiction: Jurisdiction,
        sensitivity: Sensitivity,
        lineage: Vec<AgentId>,
    ) -> Self {
        Self {
            classification,
            jurisdiction,
            sensitivity,
            lineage,
            verified: Verified::Unknown,
            flags: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextValue {
    Int(i64),
    Real(f64),
    Str(String),
}

impl ContextValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ContextValue::Int(i) => Some(*i as f64),
            ContextValue::Real(r) => Some(*r),
            ContextValue::Str(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ContextValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

pub type Context = BTreeMap<String, ContextValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationType {
    ConsentMissing,
    BiasThreshold,
    DataResidency,
    UnauthorizedAccess,
}

impl ViolationType {
    pub const ALL: [ViolationType; 4] = [
        ViolationType::ConsentMissing,
        ViolationType::BiasThreshold,
        ViolationType::DataResidency,
        ViolationType::UnauthorizedAccess,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ViolationType::ConsentMissing => "CONSENT_MISSING",
            ViolationType::BiasThreshold => "BIAS_THRESHOLD",
            ViolationType::DataResidency => "DATA_RESIDENCY",
            ViolationType::UnauthorizedAccess => "UNAUTHORIZED_ACCESS",
        }
    }
}

/// Operations allowed to have identical source and receiver.
pub const SELF_OPERATIONS: &[&str] = &["heartbeat", "checkpoint"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub timestamp: f64,
    pub source: AgentId,
    pub receiver: AgentId,
    pub operation: String,
    #[serde(default)]
    pub context: Context,
    pub governance: GovernanceMetadata,
    pub nonce: u64,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_hex")]
    pub signature: Option<Vec<u8>>,
}

impl TelemetryEvent {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.timestamp.is_finite() && self.timestamp > 0.0) {
            return Err(ModelError::BadTimestamp(self.timestamp));
        }
        if self.source == self.receiver && !SELF_OPERATIONS.contains(&self.operation.as_str()) {
            return Err(ModelError::SelfLoop(self.operation.clone()));
        }
        Ok(())
    }

    pub fn context_f64(&self, key: &str) -> Option<f64> {
        self.context.get(key).and_then(ContextValue::as_f64)
    }

    pub fn context_str(&self, key: &str) -> Option<&str> {
        self.context.get(key).and_then(ContextValue::as_str)
    }
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_str(&hex::encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        s.map(|h| hex::decode(h).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tier {
    High,
    Medium,
    Low,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::High, Tier::Medium, Tier::Low];

    pub fn name(self) -> &'static str {
        match self {
            Tier::High => "HIGH",
            Tier::Medium => "MEDIUM",
            Tier::Low => "LOW",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailMode {
    FailClosed,
    FailOpen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskTier {
    pub tier: Tier,
    pub fail_mode: FailMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierConfig {
    pub high: FailMode,
    pub medium: FailMode,
    pub low: FailMode,
    /// Explicit (classification, jurisdiction) → tier entries checked before
    /// the default rule.
    #[serde(default)]
    pub overrides: Vec<TierOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierOverride {
    pub classification: Classification,
    pub jurisdiction: Option<Jurisdiction>,
    pub tier: Tier,
}

impl Default for TierConfig {
    fn default() -> Self {
        Self {
            high: FailMode::FailClosed,
            medium: FailMode::FailClosed,
            low: FailMode::FailOpen,
            overrides: Vec::new(),
        }
    }
}

impl TierConfig {
    pub fn fail_mode(&self, tier: Tier) -> FailMode {
        match tier {
            Tier::High => self.high,
            Tier::Medium => self.medium,
            Tier::Low => self.low,
        }
    }

    /// Same tier for every level, used by attack scenarios that force one
    /// fail mode across the board.
    pub fn uniform(mode: FailMode) -> Self {
        Self {
            high: mode,
            medium: mode,
            low: mode,
            overrides: Vec::new(),
        }
    }
}

pub fn tier_of(gov: &GovernanceMetadata, config: &TierConfig) -> Tier {
    for o in &config.overrides {
        if o.classification == gov.classification
            && o.jurisdiction.map_or(true, |j| j == gov.jurisdiction)
        {
            return o.tier;
        }
    }
    if gov.classification == Classification::Pii && gov.jurisdiction == Jurisdiction::Eu {
        Tier::High
    } else if gov.classification == Classification::Financial
        || gov.sensitivity == Sensitivity::High
    {
        Tier::Medium
    } else {
        Tier::Low
    }
}

pub fn derive_risk_tier(event: &TelemetryEvent, config: &TierConfig) -> RiskTier {
    let tier = tier_of(&event.governance, config);
    RiskTier {
        tier,
        fail_mode: config.fail_mode(tier),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Channel {
    pub source: AgentId,
    pub receiver: AgentId,
    pub label: String,
}

/// Agents, channels, capabilities E and trust T.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MultiAgentSystem {
    agents: BTreeSet<AgentId>,
    channels: BTreeSet<Channel>,
    capabilities: BTreeMap<AgentId, BTreeSet<Capability>>,
    trust: BTreeMap<AgentId, f64>,
}

impl MultiAgentSystem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_agent(
        &mut self,
        id: AgentId,
        caps: impl IntoIterator<Item = Capability>,
        trust: f64,
    ) -> Result<(), ModelError> {
        if !self.agents.insert(id.clone()) {
            return Err(ModelError::DuplicateAgent(id.0));
        }
        self.capabilities
            .insert(id.clone(), caps.into_iter().collect());
        self.trust.insert(id, clamp01(trust));
        Ok(())
    }

    pub fn add_channel(
        &mut self,
        source: &AgentId,
        receiver: &AgentId,
        label: &str,
    ) -> Result<(), ModelError> {
        for a in [source, receiver] {
            if !self.agents.contains(a) {
                return Err(ModelError::UnknownAgent(a.0.clone()));
            }
        }
        self.channels.insert(Channel {
            source: source.clone(),
            receiver: receiver.clone(),
            label: label.to_string(),
        });
        Ok(())
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.agents.iter()
    }

    pub fn contains(&self, a: &AgentId) -> bool {
        self.agents.contains(a)
    }

    pub fn channels(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter()
    }

    pub fn capabilities(&self, a: &AgentId) -> Option<&BTreeSet<Capability>> {
        self.capabilities.get(a)
    }

    pub fn set_capabilities(
        &mut self,
        a: &AgentId,
        caps: BTreeSet<Capability>,
    ) -> Result<(), ModelError> {
        let slot = self
            .capabilities
            .get_mut(a)
            .ok_or_else(|| ModelError::UnknownAgent(a.0.clone()))?;
        *slot = caps;
        Ok(())
    }

    pub fn trust(&self, a: &AgentId) -> Option<f64> {
        self.trust.get(a).copied()
    }

    /// Stores `value` clamped to [0, 1].
    pub fn set_trust(&mut self, a: &AgentId, value: f64) -> Result<(), ModelError> {
        let slot = self
            .trust
            .get_mut(a)
            .ok_or_else(|| ModelError::UnknownAgent(a.0.clone()))?;
        *slot = clamp01(value);
        Ok(())
    }
}

pub fn clamp01(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gov(c: Classification, j: Jurisdiction, s: Sensitivity) -> GovernanceMetadata {
        GovernanceMetadata::new(c, j, s, vec![agent("a")])
    }

    #[test]
    fn eu_pii_is_high_tier() {
        let t = tier_of(
            &gov(Classification::Pii, Jurisdiction::Eu, Sensitivity::Low),
            &TierConfig::default(),
        );
        assert_eq!(t, Tier::High);
        assert_eq!(TierConfig::default().fail_mode(t), FailMode::FailClosed);
    }

    #[test]
    fn public_low_is_low_tier() {
        let t = tier_of(
            &gov(Classification::Public, Jurisdiction::Us, Sensitivity::Low),
            &TierConfig::default(),
        );
        assert_eq!(t, Tier::Low);
        assert_eq!(TierConfig::default().fail_mode(t), FailMode::FailOpen);
    }

    #[test]
    fn tier_grid_matches_table() {
        // Independent restatement of the default table over the full grid.
        let cfg = TierConfig::default();
        for c in Classification::ALL {
            for j in Jurisdiction::ALL {
                for s in Sensitivity::ALL {
                    let expected = match (c, j, s) {
                        (Classification::Pii, Jurisdiction::Eu, _) => Tier::High,
                        (Classification::Financial, _, _) => Tier::Medium,
                        (_, _, Sensitivity::High) => Tier::Medium,
                        _ => Tier::Low,
                    };
                    assert_eq!(tier_of(&gov(c, j, s), &cfg), expected, "{c:?} {j:?} {s:?}");
                }
            }
        }
        assert_eq!(
            tier_of(
                &gov(
                    Classification::Financial,
                    Jurisdiction::Us,
                    Sensitivity::Low
                ),
                &cfg
            ),
            Tier::Medium
        );
    }

    #[test]
    fn override_takes_precedence() {
        let mut cfg = TierConfig::default();
        cfg.overrides.push(TierOverride {
            classification: Classification::Public,
            jurisdiction: None,
            tier: Tier::High,
        });
        let g = gov(
            Classification::Public,
            Jurisdiction::Other,
            Sensitivity::Low,
        );
        assert_eq!(tier_of(&g, &cfg), Tier::High);
    }

    #[test]
    fn trust_is_clamped() {
        let mut mas = MultiAgentSystem::new();
        let a = agent("a");
        mas.add_agent(a.clone(), [], 1.7).unwrap();
        assert_eq!(mas.trust(&a), Some(1.0));
        mas.set_trust(&a, -0.2).unwrap();
        assert_eq!(mas.trust(&a), Some(0.0));
        mas.set_trust(&a, f64::NAN).unwrap();
        assert_eq!(mas.trust(&a), Some(0.0));
    }

    #[test]
    fn channels_require_known_endpoints() {
        let mut mas = MultiAgentSystem::new();
        mas.add_agent(agent("a"), [], 1.0).unwrap();
        assert_eq!(
            mas.add_channel(&agent("a"), &agent("b"), "x"),
            Err(ModelError::UnknownAgent("b".into()))
        );
        assert!(mas.add_agent(agent("a"), [], 1.0).is_err());
    }

    #[test]
    fn enums_serialize_uppercase() {
        assert_eq!(
            serde_json::to_string(&ViolationType::DataResidency).unwrap(),
            "\"DATA_RESIDENCY\""
        );
        assert_eq!(
            serde_json::to_string(&Classification::Pii).unwrap(),
            "\"PII\""
        );
        assert_eq!(
            serde_json::to_string(&Verified::Unknown).unwrap(),
            "\"UNKNOWN\""
        );
        assert!(AgentId::new("").is_err());
        assert!(serde_json::from_str::<AgentId>("\"\"").is_err());
    }

    #[test]
    fn event_validation() {
        let mut e = TelemetryEvent {
            timestamp: 1.0,
            source: agent("a"),
            receiver: agent("a"),
            operation: "heartbeat".into(),
            context: Context::new(),
            governance: gov(Classification::Public, Jurisdiction::Eu, Sensitivity::Low),
            nonce: 7,
            signature: Some(vec![1, 2]),
        };
        assert!(e.validate().is_ok());
        e.operation = "route".into();
        assert!(matches!(e.validate(), Err(ModelError::SelfLoop(_))));
        e.receiver = agent("b");
        e.timestamp = 0.0;
        assert!(matches!(e.validate(), Err(ModelError::BadTimestamp(_))));
        let json = serde_json::to_string(&e).unwrap();
        let back: TelemetryEvent = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
    }
}
