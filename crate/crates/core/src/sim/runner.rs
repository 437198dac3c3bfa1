//! Drives generated flows through a fresh enforcement bus per run.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bus::{BusConfig, BusError, EnforcementBus, EnforcementLevel, EnforcementOutcome};
use crate::plane::audit::AuditLog;
use crate::plane::signing::{sign_event, EventSigner, KeyRing, P256Signer};
use crate::rules::{default_rule_pack, AgentDirectory, RulePack};
use crate::sim::config::ScenarioConfig;
use crate::sim::metrics::{aggregate, MetricsReport, RunCounts};
use crate::sim::scenario::{generate_run, Flow};

const KEY_STREAM_SALT: u64 = 0x6b65_7973;

/// Everything one run needs: the bus and the agents' signing keys.
pub struct RunHarness {
    pub bus: EnforcementBus,
    pub keys: KeyRing,
}

pub fn directory(config: &ScenarioConfig) -> AgentDirectory {
    let mut d = AgentDirectory::default();
    for a in &config.agents {
        d.insert(a.id.clone(), a.jurisdiction, a.role.capabilities());
    }
    d
}

/// Fresh bus for `run`, with keys derived from the seed so signatures and
/// audit roots are reproducible.
pub fn build_harness(
    config: &ScenarioConfig,
    pack: &RulePack,
    run: usize,
) -> Result<RunHarness, BusError> {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ KEY_STREAM_SALT);
    rng.set_stream(run as u64 + 1);
    let mut keys = KeyRing::default();
    for a in &config.agents {
        keys.insert(a.id.clone(), Arc::new(P256Signer::generate(&mut rng)));
    }
    let bus_key: Arc<dyn EventSigner> = Arc::new(P256Signer::generate(&mut rng));
    let (audit, signer) = if config.sign_audit {
        (
            AuditLog::in_memory(&bus_key.verifier().public_key()),
            Some(bus_key),
        )
    } else {
        (AuditLog::in_memory(&[]), None)
    };
    let bus = EnforcementBus::new(
        BusConfig {
            mode: config.mode,
            tiers: config.fail_modes.clone(),
            escalation: config.escalation.clone(),
            replay: config.replay.clone(),
            compliance_sink: config.compliance_sink.clone(),
        },
        pack,
        Arc::new(directory(config)),
        keys.registry(),
        audit,
        signer,
    )?;
    Ok(RunHarness { bus, keys })
}

/// What happened to one flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub outcomes: Vec<EnforcementOutcome>,
    /// Stopped by a block or diverted to the compliance sink before the
    /// terminal operation reached its receiver.
    pub interrupted: bool,
    /// Any event blocked, or escalated to L2 or above.
    pub intervened: bool,
}

/// Sends the flow's events in order; the flow stops at the first event
/// that does not reach its intended receiver.
pub fn drive_flow(
    bus: &mut EnforcementBus,
    events: &[crate::model::TelemetryEvent],
) -> Result<FlowResult, BusError> {
    let mut outcomes = Vec::with_capacity(events.len());
    let mut interrupted = false;
    let mut intervened = false;
    for e in events {
        let out = bus.process_event(e)?;
        intervened |= !out.operation_completed || out.applied_level >= EnforcementLevel::L2Flag;
        let diverted = !out.operation_completed || out.redirected();
        outcomes.push(out);
        if diverted {
            interrupted = true;
            break;
        }
    }
    Ok(FlowResult {
        outcomes,
        interrupted,
        intervened,
    })
}

pub fn sign_flow(flow: &Flow, keys: &KeyRing) -> Vec<crate::model::TelemetryEvent> {
    flow.events
        .iter()
        .map(|e| sign_event(e, keys).expect("scenario events canonicalise and agents hold keys"))
        .collect()
}

pub struct RunOutput {
    pub counts: RunCounts,
    pub states: Vec<crate::escalation::AgentEscalationState>,
    /// Serialized audit log of the run.
    pub audit: Vec<u8>,
    pub detection_ms: Vec<f64>,
    pub e2e_ms: Vec<f64>,
}

fn tally(counts: &mut RunCounts, flow: &Flow, res: &FlowResult) {
    counts.flows += 1;
    for o in &res.outcomes {
        counts.events += 1;
        if o.blocked() {
            counts.blocked_events += 1;
        }
        if o.redirected() {
            counts.redirected_events += 1;
        }
        let level = o.applied_level as u64;
        if level >= 1 {
            counts.escalated_events += 1;
            counts.level_sum += level;
        }
    }
    match flow.injected {
        Some(kind) => {
            let k = counts.by_kind.entry(kind).or_default();
            k.injected += 1;
            if res.interrupted {
                k.prevented += 1;
            }
        }
        None => {
            counts.legitimate_flows += 1;
            if res.intervened {
                counts.false_positive_flows += 1;
            }
        }
    }
}

pub fn execute_run(
    config: &ScenarioConfig,
    pack: &RulePack,
    run: usize,
) -> Result<RunOutput, BusError> {
    let mut h = build_harness(config, pack, run)?;
    let mut counts = RunCounts {
        run,
        ..RunCounts::default()
    };
    let mut detection_ms = Vec::new();
    let mut e2e_ms = Vec::new();
    for flow in generate_run(config, run) {
        let events = sign_flow(&flow, &h.keys);
        let res = drive_flow(&mut h.bus, &events)?;
        for o in &res.outcomes {
            detection_ms.push(o.latency_detection_ms);
            e2e_ms.push(o.latency_e2e_ms);
        }
        tally(&mut counts, &flow, &res);
    }
    counts.alerts = h.bus.alerts().len() as u64;
    counts.quarantined_agents = h
        .bus
        .agent_states()
        .filter(|s| s.is_quarantined())
        .map(|s| s.agent.to_string())
        .collect();
    counts.audit_records = h.bus.audit().len();
    counts.audit_root = hex::encode(h.bus.audit().root());
    Ok(RunOutput {
        counts,
        states: h.bus.agent_states().cloned().collect(),
        audit: h
            .bus
            .audit()
            .bytes()
            .map(<[u8]>::to_vec)
            .unwrap_or_default(),
        detection_ms,
        e2e_ms,
    })
}

/// All runs of a scenario with the default rule pack.
pub fn run_scenario(config: &ScenarioConfig) -> Result<MetricsReport, BusError> {
    run_scenario_with(config, &default_rule_pack())
}

pub fn run_scenario_with(
    config: &ScenarioConfig,
    pack: &RulePack,
) -> Result<MetricsReport, BusError> {
    let mut per_run = Vec::with_capacity(config.runs);
    let mut det = Vec::new();
    let mut e2e = Vec::new();
    for run in 0..config.runs {
        let out = execute_run(config, pack, run)?;
        per_run.push(out.counts);
        if config.report_latency {
            det.extend(out.detection_ms);
            e2e.extend(out.e2e_ms);
        }
    }
    Ok(aggregate(
        config.seed,
        config.mode,
        config.injection_rate,
        config.noise_epsilon,
        config.flows_per_run,
        per_run,
        config.bootstrap_resamples,
        &det,
        &e2e,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub injection_rate: f64,
    pub vpr: Option<f64>,
    pub fpr: f64,
    pub avg_level: f64,
    pub injected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Average level strictly increases with the injection rate.
    pub fn level_strictly_increasing(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].avg_level > w[0].avg_level)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("injection_rate,vpr,fpr,avg_level,injected\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.injection_rate,
                r.vpr.map(|v| v.to_string()).unwrap_or_default(),
                r.fpr,
                r.avg_level,
                r.injected
            ));
        }
        s
    }
}

/// Same scenario at each injection rate.
pub fn sensitivity_sweep(config: &ScenarioConfig, rates: &[f64]) -> Result<SweepTable, BusError> {
    let pack = default_rule_pack();
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut c = config.clone();
        c.injection_rate = rate;
        c.report_latency = false;
        let r = run_scenario_with(&c, &pack)?;
        rows.push(SweepRow {
            injection_rate: rate,
            vpr: r.vpr,
            fpr: r.fpr,
            avg_level: r.avg_level,
            injected: r.injected(),
        });
    }
    Ok(SweepTable {
        seed: config.seed,
        rows,
    })
}
