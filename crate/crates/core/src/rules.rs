//! Declarative governance rules and their compilation into policies.
//!
//! A rule pack is a TOML document:
//!
//! ```toml
//! version = 1
//! name = "example"
//!
//! [[rules]]
//! id = "bias.disparate_impact"
//! violation = "BIAS_THRESHOLD"   # CONSENT_MISSING | BIAS_THRESHOLD | DATA_RESIDENCY | UNAUTHORIZED_ACCESS
//! action = "FLAG"                # ALLOW | FLAG | QUARANTINE | DENY
//! confidence = 0.8               # [0, 1]
//! base_level = 1                 # 0..=4, escalation base for this violation
//!
//! [[rules.conditions]]
//! field = "context.disparate_impact"
//! op = "GT"                      # EQ | NEQ | GT | LT | IN | CONTAINS | CHAIN_CROSSES
//! value = 0.15
//! ```
//!
//! Field selectors:
//!
//! | field | type | operators |
//! |---|---|---|
//! | `operation`, `source`, `receiver` | string | EQ NEQ IN |
//! | `governance.classification` / `.jurisdiction` / `.sensitivity` / `.verified` | enum name | EQ NEQ IN |
//! | `governance.flags`, `lineage` | list of strings | CONTAINS |
//! | `lineage` | chain | CHAIN_CROSSES (value: origin jurisdiction or `"ANY"`) |
//! | `lineage.length` | integer | EQ NEQ GT LT |
//! | `lineage.any_jurisdiction_crossing` | bool | EQ NEQ |
//! | `source.authorized` | bool (operation ∈ baseline capabilities of source) | EQ NEQ |
//! | `source.jurisdiction`, `receiver.jurisdiction` | enum name | EQ NEQ IN |
//! | `context.<key>` | string or number | EQ NEQ GT LT IN CONTAINS |
//!
//! A `context.<key>` condition on an absent key never matches. Selectors
//! that need the agent directory yield an indeterminate result when an agent
//! is unknown; the enforcement bus resolves those with the event's fail mode.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AgentId, Capability, Classification, ContextValue, Jurisdiction, Sensitivity, TelemetryEvent,
    ViolationType,
};
use crate::policy::{Assessment, Decision, EnforcementActionKind, Policy, PolicyRef};

pub const DEFAULT_PACK_TOML: &str = include_str!("../rules/default.toml");

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("rule pack parse error: {0}")]
    Parse(String),
    #[error("rule {rule}: unknown field {field}")]
    UnknownField { rule: String, field: String },
    #[error("rule {rule}: operator {op:?} not applicable to field {field}")]
    OperatorMismatch {
        rule: String,
        field: String,
        op: Operator,
    },
    #[error("rule {rule}: bad value for field {field}: {reason}")]
    BadValue {
        rule: String,
        field: String,
        reason: String,
    },
    #[error("rule {0}: conditions must be non-empty")]
    NoConditions(String),
    #[error("rule {0}: base_level must be in 0..=4")]
    BadBaseLevel(String),
    #[error("rule {0}: confidence must be in [0, 1]")]
    BadConfidence(String),
    #[error("duplicate rule id {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Operator {
    Eq,
    Neq,
    Gt,
    Lt,
    In,
    Contains,
    ChainCrosses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
    List(Vec<RuleValue>),
}

impl RuleValue {
    fn as_f64(&self) -> Option<f64> {
        match self {
            RuleValue::Int(i) => Some(*i as f64),
            RuleValue::Real(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleCondition {
    pub field: String,
    pub op: Operator,
    pub value: RuleValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernanceRule {
    pub id: String,
    pub violation: ViolationType,
    pub action: EnforcementActionKind,
    pub confidence: f64,
    pub base_level: u8,
    pub conditions: Vec<RuleCondition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulePack {
    pub version: u32,
    pub name: String,
    pub rules: Vec<GovernanceRule>,
}

impl RulePack {
    pub fn from_toml(text: &str) -> Result<Self, RuleError> {
        let pack: RulePack = toml::from_str(text).map_err(|e| RuleError::Parse(e.to_string()))?;
        let mut seen = BTreeSet::new();
        for r in &pack.rules {
            if !seen.insert(r.id.as_str()) {
                return Err(RuleError::DuplicateId(r.id.clone()));
            }
        }
        Ok(pack)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rule pack is always representable as TOML")
    }

    pub fn base_level(&self, v: ViolationType) -> Option<u8> {
        self.rules
            .iter()
            .filter(|r| r.violation == v && r.action != EnforcementActionKind::Allow)
            .map(|r| r.base_level)
            .max()
    }
}

pub fn default_rule_pack() -> RulePack {
    RulePack::from_toml(DEFAULT_PACK_TOML).expect("embedded default pack parses")
}

/// Per-agent facts the rule evaluator needs beyond the event itself.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AgentDirectory {
    pub jurisdiction: BTreeMap<AgentId, Jurisdiction>,
    /// Baseline capabilities, used for the `source.authorized` selector.
    pub capabilities: BTreeMap<AgentId, BTreeSet<Capability>>,
}

impl AgentDirectory {
    pub fn insert(
        &mut self,
        id: AgentId,
        jurisdiction: Jurisdiction,
        caps: impl IntoIterator<Item = Capability>,
    ) {
        self.jurisdiction.insert(id.clone(), jurisdiction);
        self.capabilities.insert(id, caps.into_iter().collect());
    }

    pub fn is_authorized(&self, source: &AgentId, op: &str) -> Option<bool> {
        self.capabilities
            .get(source)
            .map(|caps| caps.iter().any(|c| c.as_str() == op))
    }
}

/// Required origin for CHAIN_CROSSES.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Origin {
    Any,
    Only(Jurisdiction),
}

/// Whether data originating at the head of the lineage reaches a hop (later
/// lineage agent or the receiver) in a different jurisdiction. The
/// receiver's jurisdiction is `context.destination_jurisdiction` when
/// present. `None` when some agent is missing from the directory.
fn chain_crosses(event: &TelemetryEvent, dir: &AgentDirectory, origin: Origin) -> Option<bool> {
    let lineage = &event.governance.lineage;
    let Some(head) = lineage.first() else {
        return Some(false);
    };
    let head_j = *dir.jurisdiction.get(head)?;
    let mut hops = Vec::with_capacity(lineage.len());
    for a in &lineage[1..] {
        hops.push(*dir.jurisdiction.get(a)?);
    }
    let receiver_j = match event
        .context_str("destination_jurisdiction")
        .and_then(Jurisdiction::parse)
    {
        Some(j) => j,
        None => *dir.jurisdiction.get(&event.receiver)?,
    };
    hops.push(receiver_j);
    if let Origin::Only(j) = origin {
        if head_j != j {
            return Some(false);
        }
    }
    Some(hops.iter().any(|&h| h != head_j))
}

/// End-to-end chain check for the CHAIN_CROSSES conditions of `rule`. Rules
/// without such a condition never match. `None` means undecidable.
pub fn lineage_cross_check(
    event: &TelemetryEvent,
    rule: &GovernanceRule,
    dir: &AgentDirectory,
) -> Option<bool> {
    let mut any = false;
    for c in rule
        .conditions
        .iter()
        .filter(|c| c.op == Operator::ChainCrosses)
    {
        any = true;
        let origin = parse_origin(&rule.id, c).ok()?;
        if !chain_crosses(event, dir, origin)? {
            return Some(false);
        }
    }
    Some(any)
}

fn parse_origin(rule: &str, c: &RuleCondition) -> Result<Origin, RuleError> {
    let bad = |reason: &str| RuleError::BadValue {
        rule: rule.to_string(),
        field: c.field.clone(),
        reason: reason.to_string(),
    };
    match &c.value {
        RuleValue::Str(s) if s == "ANY" => Ok(Origin::Any),
        RuleValue::Str(s) => Jurisdiction::parse(s)
            .map(Origin::Only)
            .ok_or_else(|| bad("expected jurisdiction name or ANY")),
        _ => Err(bad("expected jurisdiction name or ANY")),
    }
}

/// Condition compiled against a concrete selector.
#[derive(Debug, Clone)]
enum Check {
    StrField {
        sel: StrSel,
        op: Operator,
        values: Vec<String>,
    },
    EnumField {
        sel: EnumSel,
        op: Operator,
        values: Vec<String>,
    },
    ListContains {
        sel: ListSel,
        value: String,
    },
    ChainCrosses(Origin),
    LineageLength {
        op: Operator,
        value: f64,
    },
    Bool {
        sel: BoolSel,
        op: Operator,
        value: bool,
    },
    Context {
        key: String,
        op: Operator,
        value: RuleValue,
    },
}

#[derive(Debug, Clone, Copy)]
enum StrSel {
    Operation,
    Source,
    Receiver,
}

#[derive(Debug, Clone, Copy)]
enum EnumSel {
    Classification,
    Jurisdiction,
    Sensitivity,
    Verified,
    SourceJurisdiction,
    ReceiverJurisdiction,
}

#[derive(Debug, Clone, Copy)]
enum ListSel {
    Flags,
    Lineage,
}

#[derive(Debug, Clone, Copy)]
enum BoolSel {
    SourceAuthorized,
    AnyCrossing,
}

fn compile_condition(rule: &str, c: &RuleCondition) -> Result<Check, RuleError> {
    use Operator::*;
    let mismatch = || RuleError::OperatorMismatch {
        rule: rule.to_string(),
        field: c.field.clone(),
        op: c.op,
    };
    let bad = |reason: &str| RuleError::BadValue {
        rule: rule.to_string(),
        field: c.field.clone(),
        reason: reason.to_string(),
    };
    let strings = |valid: &dyn Fn(&str) -> bool| -> Result<Vec<String>, RuleError> {
        let vals = match (&c.op, &c.value) {
            (Eq | Neq, RuleValue::Str(s)) => vec![s.clone()],
            (In, RuleValue::List(items)) => items
                .iter()
                .map(|v| match v {
                    RuleValue::Str(s) => Ok(s.clone()),
                    _ => Err(bad("IN expects a list of strings")),
                })
                .collect::<Result<_, _>>()?,
            (Eq | Neq | In, _) => return Err(bad("expected string value(s)")),
            _ => return Err(mismatch()),
        };
        if let Some(v) = vals.iter().find(|v| !valid(v)) {
            return Err(bad(&format!("unknown value {v}")));
        }
        Ok(vals)
    };
    let any = |_: &str| true;
    let boolean = || match (&c.op, &c.value) {
        (Eq | Neq, RuleValue::Bool(b)) => Ok(*b),
        (Eq | Neq, _) => Err(bad("expected boolean")),
        _ => Err(mismatch()),
    };

    let check = match c.field.as_str() {
        "operation" => Check::StrField {
            sel: StrSel::Operation,
            op: c.op,
            values: strings(&any)?,
        },
        "source" => Check::StrField {
            sel: StrSel::Source,
            op: c.op,
            values: strings(&any)?,
        },
        "receiver" => Check::StrField {
            sel: StrSel::Receiver,
            op: c.op,
            values: strings(&any)?,
        },
        "governance.classification" => Check::EnumField {
            sel: EnumSel::Classification,
            op: c.op,
            values: strings(&|s| Classification::parse(s).is_some())?,
        },
        "governance.jurisdiction" | "source.jurisdiction" | "receiver.jurisdiction" => {
            let sel = match c.field.as_str() {
                "governance.jurisdiction" => EnumSel::Jurisdiction,
                "source.jurisdiction" => EnumSel::SourceJurisdiction,
                _ => EnumSel::ReceiverJurisdiction,
            };
            Check::EnumField {
                sel,
                op: c.op,
                values: strings(&|s| Jurisdiction::parse(s).is_some())?,
            }
        }
        "governance.sensitivity" => Check::EnumField {
            sel: EnumSel::Sensitivity,
            op: c.op,
            values: strings(&|s| Sensitivity::parse(s).is_some())?,
        },
        "governance.verified" => Check::EnumField {
            sel: EnumSel::Verified,
            op: c.op,
            values: strings(&|s| matches!(s, "TRUE" | "FALSE" | "UNKNOWN"))?,
        },
        "governance.flags" | "lineage" if c.op == Contains => {
            let sel = if c.field == "lineage" {
                ListSel::Lineage
            } else {
                ListSel::Flags
            };
            match &c.value {
                RuleValue::Str(s) => Check::ListContains {
                    sel,
                    value: s.clone(),
                },
                _ => return Err(bad("CONTAINS expects a string")),
            }
        }
        "lineage" if c.op == ChainCrosses => Check::ChainCrosses(parse_origin(rule, c)?),
        "lineage.length" => match (&c.op, c.value.as_f64()) {
            (Eq | Neq | Gt | Lt, Some(v)) => Check::LineageLength { op: c.op, value: v },
            (Eq | Neq | Gt | Lt, None) => return Err(bad("expected number")),
            _ => return Err(mismatch()),
        },
        "lineage.any_jurisdiction_crossing" => Check::Bool {
            sel: BoolSel::AnyCrossing,
            op: c.op,
            value: boolean()?,
        },
        "source.authorized" => Check::Bool {
            sel: BoolSel::SourceAuthorized,
            op: c.op,
            value: boolean()?,
        },
        "governance.flags" | "lineage" => return Err(mismatch()),
        f if f.starts_with("context.") && f.len() > "context.".len() => {
            match (&c.op, &c.value) {
                (ChainCrosses, _) => return Err(mismatch()),
                (Gt | Lt, v) if v.as_f64().is_none() => return Err(bad("expected number")),
                (In, RuleValue::List(_)) => {}
                (In, _) => return Err(bad("IN expects a list")),
                (Contains, RuleValue::Str(_)) => {}
                (Contains, _) => return Err(bad("CONTAINS expects a string")),
                (Eq | Neq, RuleValue::List(_)) => return Err(bad("expected scalar")),
                _ => {}
            }
            Check::Context {
                key: f["context.".len()..].to_string(),
                op: c.op,
                value: c.value.clone(),
            }
        }
        _ => {
            return Err(RuleError::UnknownField {
                rule: rule.to_string(),
                field: c.field.clone(),
            })
        }
    };
    Ok(check)
}

fn set_match(op: Operator, actual: &str, values: &[String]) -> bool {
    let hit = values.iter().any(|v| v == actual);
    match op {
        Operator::Neq => !hit,
        _ => hit,
    }
}

fn scalar_eq(actual: &ContextValue, expected: &RuleValue) -> bool {
    match (actual, expected) {
        (ContextValue::Str(a), RuleValue::Str(b)) => a == b,
        (ContextValue::Str(_), _) | (_, RuleValue::Str(_)) => false,
        (a, b) => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        },
    }
}

fn eval_check(check: &Check, e: &TelemetryEvent, dir: &AgentDirectory) -> Option<bool> {
    Some(match check {
        Check::StrField { sel, op, values } => {
            let actual = match sel {
                StrSel::Operation => e.operation.as_str(),
                StrSel::Source => e.source.as_str(),
                StrSel::Receiver => e.receiver.as_str(),
            };
            set_match(*op, actual, values)
        }
        Check::EnumField { sel, op, values } => {
            let g = &e.governance;
            let actual = match sel {
                EnumSel::Classification => g.classification.name(),
                EnumSel::Jurisdiction => g.jurisdiction.name(),
                EnumSel::Sensitivity => g.sensitivity.name(),
                EnumSel::Verified => g.verified.name(),
                EnumSel::SourceJurisdiction => dir.jurisdiction.get(&e.source)?.name(),
                EnumSel::ReceiverJurisdiction => dir.jurisdiction.get(&e.receiver)?.name(),
            };
            set_match(*op, actual, values)
        }
        Check::ListContains { sel, value } => match sel {
            ListSel::Flags => e.governance.flags.iter().any(|f| f == value),
            ListSel::Lineage => e.governance.lineage.iter().any(|a| a.as_str() == value),
        },
        Check::ChainCrosses(origin) => chain_crosses(e, dir, *origin)?,
        Check::LineageLength { op, value } => {
            let n = e.governance.lineage.len() as f64;
            match op {
                Operator::Eq => n == *value,
                Operator::Neq => n != *value,
                Operator::Gt => n > *value,
                _ => n < *value,
            }
        }
        Check::Bool { sel, op, value } => {
            let actual = match sel {
                BoolSel::SourceAuthorized => dir.is_authorized(&e.source, &e.operation)?,
                BoolSel::AnyCrossing => chain_crosses(e, dir, Origin::Any)?,
            };
            (actual == *value) == (*op == Operator::Eq)
        }
        Check::Context { key, op, value } => {
            let Some(actual) = e.context.get(key) else {
                return Some(false);
            };
            match op {
                Operator::Eq => scalar_eq(actual, value),
                Operator::Neq => !scalar_eq(actual, value),
                Operator::Gt | Operator::Lt => match (actual.as_f64(), value.as_f64()) {
                    (Some(a), Some(b)) if *op == Operator::Gt => a > b,
                    (Some(a), Some(b)) => a < b,
                    _ => false,
                },
                Operator::In => match value {
                    RuleValue::List(items) => items.iter().any(|v| scalar_eq(actual, v)),
                    _ => false,
                },
                Operator::Contains => match (actual, value) {
                    (ContextValue::Str(a), RuleValue::Str(b)) => a.contains(b.as_str()),
                    _ => false,
                },
                Operator::ChainCrosses => false,
            }
        }
    })
}

pub struct CompiledRule {
    rule: GovernanceRule,
    checks: Vec<Check>,
    directory: Arc<AgentDirectory>,
    decision: Decision,
}

impl CompiledRule {
    pub fn rule(&self) -> &GovernanceRule {
        &self.rule
    }

    /// Conjunction of the conditions. A definite miss wins over an
    /// undecidable condition.
    pub fn matches(&self, e: &TelemetryEvent) -> Option<bool> {
        let mut unknown = false;
        for c in &self.checks {
            match eval_check(c, e, &self.directory) {
                Some(false) => return Some(false),
                Some(true) => {}
                None => unknown = true,
            }
        }
        if unknown {
            None
        } else {
            Some(true)
        }
    }
}

impl Policy for CompiledRule {
    fn id(&self) -> &str {
        &self.rule.id
    }

    fn assess(&self, e: &TelemetryEvent) -> Assessment {
        match self.matches(e) {
            Some(true) => self.decision.into(),
            Some(false) => Decision::allow().into(),
            None => Assessment {
                decision: Decision::allow(),
                indeterminate: true,
            },
        }
    }
}

pub fn validate_rule(rule: &GovernanceRule) -> Result<(), RuleError> {
    if rule.conditions.is_empty() {
        return Err(RuleError::NoConditions(rule.id.clone()));
    }
    if rule.base_level > 4 {
        return Err(RuleError::BadBaseLevel(rule.id.clone()));
    }
    if !(0.0..=1.0).contains(&rule.confidence) {
        return Err(RuleError::BadConfidence(rule.id.clone()));
    }
    Ok(())
}

pub fn compile_rule(
    rule: &GovernanceRule,
    directory: Arc<AgentDirectory>,
) -> Result<CompiledRule, RuleError> {
    validate_rule(rule)?;
    let checks = rule
        .conditions
        .iter()
        .map(|c| compile_condition(&rule.id, c))
        .collect::<Result<_, _>>()?;
    Ok(CompiledRule {
        decision: Decision {
            action: rule.action,
            confidence: rule.confidence,
        },
        rule: rule.clone(),
        checks,
        directory,
    })
}

/// Outcome of evaluating a whole pack against one event.
#[derive(Debug, Clone, PartialEq)]
pub struct PackOutcome {
    pub decision: Decision,
    /// Some rule could not be decided (unknown agent).
    pub indeterminate: bool,
    /// The rule that determines the violation kind and escalation base: among
    /// matching rules carrying the composed action, highest base level, then
    /// lowest id.
    pub primary: Option<PrimaryMatch>,
    pub matched: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryMatch {
    pub rule_id: String,
    pub violation: ViolationType,
    pub base_level: u8,
}

pub struct CompiledPack {
    rules: Vec<Arc<CompiledRule>>,
}

impl CompiledPack {
    pub fn compile(pack: &RulePack, directory: Arc<AgentDirectory>) -> Result<Self, RuleError> {
        if pack.rules.is_empty() {
            return Err(RuleError::Parse("rule pack has no rules".into()));
        }
        let rules = pack
            .rules
            .iter()
            .map(|r| compile_rule(r, directory.clone()).map(Arc::new))
            .collect::<Result<_, _>>()?;
        Ok(Self { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn policies(&self) -> Vec<PolicyRef> {
        self.rules.iter().map(|r| r.clone() as PolicyRef).collect()
    }

    pub fn evaluate(&self, e: &TelemetryEvent) -> PackOutcome {
        let mut decision: Option<Decision> = None;
        let mut indeterminate = false;
        let mut matched: Vec<&CompiledRule> = Vec::new();
        for r in &self.rules {
            let d = match r.matches(e) {
                Some(true) => {
                    matched.push(r);
                    r.decision
                }
                Some(false) => Decision::allow(),
                None => {
                    indeterminate = true;
                    Decision::allow()
                }
            };
            decision = Some(match decision {
                None => d,
                Some(acc) => Decision {
                    action: acc.action.max(d.action),
                    confidence: acc.confidence.max(d.confidence),
                },
            });
        }
        let decision = decision.expect("pack is non-empty");
        let primary = matched
            .iter()
            .filter(|r| {
                r.rule.action == decision.action && decision.action != EnforcementActionKind::Allow
            })
            .min_by(|a, b| {
                b.rule
                    .base_level
                    .cmp(&a.rule.base_level)
                    .then_with(|| a.rule.id.cmp(&b.rule.id))
            })
            .map(|r| PrimaryMatch {
                rule_id: r.rule.id.clone(),
                violation: r.rule.violation,
                base_level: r.rule.base_level,
            });
        PackOutcome {
            decision,
            indeterminate,
            primary,
            matched: matched.iter().map(|r| r.rule.id.clone()).collect(),
        }
    }
}
