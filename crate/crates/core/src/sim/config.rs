//! Scenario configuration file.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::EnforcementMode;
use crate::escalation::EscalationConfig;
use crate::model::{agent, AgentId, Capability, Jurisdiction, TierConfig, ViolationType};
use crate::plane::replay::ReplayConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Order,
    Inventory,
    Payment,
    Shipping,
    Analytics,
    ComplianceSink,
}

impl Role {
    /// Baseline capabilities E(a) for an agent with this role.
    pub fn capabilities(self) -> Vec<Capability> {
        let names: &[&str] = match self {
            Role::Order => &["reserve_inventory", "authorize_payment"],
            Role::Inventory => &["update_stock"],
            Role::Payment => &["schedule_shipment"],
            Role::Shipping => &["emit_analytics"],
            Role::Analytics => &["publish_report"],
            Role::ComplianceSink => &["compliance_review"],
        };
        names.iter().map(|n| Capability::new(*n).unwrap()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: AgentId,
    pub role: Role,
    pub jurisdiction: Jurisdiction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierMix {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub seed: u64,
    pub flows_per_run: usize,
    pub runs: usize,
    pub injection_rate: f64,
    pub noise_epsilon: f64,
    pub mode: EnforcementMode,
    /// Relative weights of injected violation kinds.
    pub weights: BTreeMap<ViolationType, f64>,
    pub tier_mix: TierMix,
    pub fail_modes: TierConfig,
    pub escalation: EscalationConfig,
    pub replay: ReplayConfig,
    pub agents: Vec<AgentSpec>,
    pub compliance_sink: AgentId,
    pub flow_spacing_seconds: f64,
    pub hop_spacing_seconds: f64,
    /// Sign audit records with the bus key.
    pub sign_audit: bool,
    pub bootstrap_resamples: usize,
    /// Include wall-clock latency percentiles in reports. Off by default so
    /// reports are reproducible byte for byte.
    pub report_latency: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let entry = |id: &str, role, jurisdiction| AgentSpec {
            id: agent(id),
            role,
            jurisdiction,
        };
        Self {
            version: SCHEMA_VERSION,
            seed: 42,
            flows_per_run: 500,
            runs: 10,
            injection_rate: 0.05,
            noise_epsilon: 0.02,
            mode: EnforcementMode::Full,
            weights: ViolationType::ALL.into_iter().map(|v| (v, 1.0)).collect(),
            tier_mix: TierMix {
                high: 0.18,
                medium: 0.35,
                low: 0.47,
            },
            fail_modes: TierConfig::default(),
            escalation: EscalationConfig::new(60.0, 2).expect("valid defaults"),
            replay: ReplayConfig::default(),
            agents: vec![
                entry("order_agent", Role::Order, Jurisdiction::Eu),
                entry("inventory_agent", Role::Inventory, Jurisdiction::Eu),
                entry("payment_agent", Role::Payment, Jurisdiction::Eu),
                entry("shipping_agent", Role::Shipping, Jurisdiction::Eu),
                entry("analytics_agent", Role::Analytics, Jurisdiction::Eu),
                // Misconfigured offshore replica of the shipping role.
                entry("shipping_agent_us", Role::Shipping, Jurisdiction::Us),
                entry("compliance_sink", Role::ComplianceSink, Jurisdiction::Eu),
            ],
            compliance_sink: agent("compliance_sink"),
            flow_spacing_seconds: 1.0,
            hop_spacing_seconds: 0.1,
            sign_audit: true,
            bootstrap_resamples: 1000,
            report_latency: false,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != SCHEMA_VERSION {
            return Err(invalid(format!("unsupported version {}", self.version)));
        }
        if !(0.0..=1.0).contains(&self.injection_rate) {
            return Err(invalid("injection_rate must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.noise_epsilon) {
            return Err(invalid("noise_epsilon must be in [0, 1]"));
        }
        if self.runs == 0 || self.flows_per_run == 0 {
            return Err(invalid("runs and flows_per_run must be positive"));
        }
        if self.weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be non-negative"));
        }
        if self.injection_rate > 0.0 && self.weights.values().sum::<f64>() <= 0.0 {
            return Err(invalid("at least one violation weight must be positive"));
        }
        let m = &self.tier_mix;
        if [m.high, m.medium, m.low].iter().any(|p| *p < 0.0)
            || (m.high + m.medium + m.low - 1.0).abs() > 1e-9
        {
            return Err(invalid("tier_mix must be non-negative and sum to 1"));
        }
        if !(self.flow_spacing_seconds > 0.0 && self.hop_spacing_seconds > 0.0) {
            return Err(invalid("spacings must be positive"));
        }
        if 4.0 * self.hop_spacing_seconds >= self.flow_spacing_seconds {
            return Err(invalid(
                "a flow's four hops must fit inside flow_spacing_seconds",
            ));
        }
        self.escalation
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        let mut ids = std::collections::BTreeSet::new();
        for a in &self.agents {
            if !ids.insert(&a.id) {
                return Err(invalid(format!("duplicate agent {}", a.id)));
            }
        }
        if !self
            .agents
            .iter()
            .any(|a| a.id == self.compliance_sink && a.role == Role::ComplianceSink)
        {
            return Err(invalid(format!(
                "compliance_sink {} is not a configured compliance_sink agent",
                self.compliance_sink
            )));
        }
        for role in [Role::Order, Role::Inventory, Role::Payment, Role::Analytics] {
            self.primary(role)?;
        }
        self.primary(Role::Shipping)?;
        if self
            .weights
            .get(&ViolationType::DataResidency)
            .copied()
            .unwrap_or(0.0)
            > 0.0
            && self.injection_rate > 0.0
        {
            self.offshore_shipping()?;
        }
        Ok(())
    }

    /// First agent with `role` in the home (EU) jurisdiction, else the first
    /// with that role.
    pub fn primary(&self, role: Role) -> Result<&AgentSpec, ConfigError> {
        self.agents
            .iter()
            .filter(|a| a.role == role)
            .min_by_key(|a| a.jurisdiction != Jurisdiction::Eu)
            .ok_or_else(|| invalid(format!("no agent with role {role:?}")))
    }

    /// A shipping agent outside the EU, the residency injection's detour.
    pub fn offshore_shipping(&self) -> Result<&AgentSpec, ConfigError> {
        self.agents
            .iter()
            .find(|a| a.role == Role::Shipping && a.jurisdiction != Jurisdiction::Eu)
            .ok_or_else(|| invalid("DATA_RESIDENCY injection needs a non-EU shipping agent"))
    }

    pub fn injections_per_run(&self) -> usize {
        (self.injection_rate * self.flows_per_run as f64).round() as usize
    }
}
