//! Attack campaigns against the trusted telemetry plane: forged
//! signatures, replayed events and suppressed emissions.

use std::collections::VecDeque;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bus::{BusError, EnforcementBus, Reason};
use crate::hmm::{baum_welch_train, calibrate_threshold, score_for_omission, HmmError, HmmModel};
use crate::model::{FailMode, TelemetryEvent, Tier, TierConfig, Verified};
use crate::rules::default_rule_pack;
use crate::sim::config::ScenarioConfig;
use crate::sim::runner::{build_harness, drive_flow, sign_flow, FlowResult};
use crate::sim::scenario::{generate_run, run_rng, Flow};
use crate::sim::traces::{delete_phase, generate_trace, symbols, Phase, TraceShape, ALPHABET};

const ATTACK_SALT: u64 = 0x00a7_7ac4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackKind {
    Forgery,
    Replay,
    Omission,
}

impl AttackKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "forgery" => Some(Self::Forgery),
            "replay" => Some(Self::Replay),
            "omission" => Some(Self::Omission),
            _ => None,
        }
    }
}

/// Legitimate flows that reached their terminal receiver.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Availability {
    pub flows: u64,
    pub completed: u64,
    pub high_flows: u64,
    pub high_completed: u64,
}

impl Availability {
    fn add(&mut self, flow: &Flow, res: &FlowResult) {
        self.flows += 1;
        let ok = !res.interrupted;
        self.completed += ok as u64;
        if flow.tier == Tier::High {
            self.high_flows += 1;
            self.high_completed += ok as u64;
        }
    }

    fn rate(completed: u64, flows: u64) -> f64 {
        if flows == 0 {
            1.0
        } else {
            completed as f64 / flows as f64
        }
    }

    /// Drop in the completed fraction relative to `baseline`.
    pub fn reduction(&self, baseline: &Availability) -> f64 {
        Self::rate(baseline.completed, baseline.flows) - Self::rate(self.completed, self.flows)
    }

    pub fn high_reduction(&self, baseline: &Availability) -> f64 {
        Self::rate(baseline.high_completed, baseline.high_flows)
            - Self::rate(self.high_completed, self.high_flows)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBreakdown {
    pub in_window: u64,
    pub in_window_detected: u64,
    pub expired: u64,
    pub expired_detected: u64,
    /// Fresh events wrongly rejected as replays.
    pub fresh_rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmissionBreakdown {
    pub training_traces: usize,
    pub held_out_traces: usize,
    pub attacked_traces: usize,
    pub theta: f64,
    pub false_alert_rate: f64,
    pub loglik_trace: Vec<f64>,
    pub loglik_non_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub attack: AttackKind,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fail_mode: Option<FailMode>,
    /// Attack attempts: forged events, replayed events or attacked traces.
    pub attempts: u64,
    pub detected: u64,
    pub detection_rate: f64,
    /// Attempts that reached their receiver.
    pub bypassed: u64,
    pub bypass_rate: f64,
    pub availability_reduction: f64,
    pub high_tier_availability_reduction: f64,
    pub baseline: Availability,
    pub attacked: Availability,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay: Option<ReplayBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omission: Option<OmissionBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub scenario: ScenarioConfig,
    /// Share of flows (forgery) or processed events (replay) attacked.
    pub attack_fraction: f64,
    /// Share of replays delayed past the detection window.
    pub expired_share: f64,
    pub omission: OmissionSettings,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig {
                injection_rate: 0.0,
                ..ScenarioConfig::default()
            },
            attack_fraction: 0.1,
            expired_share: 0.1,
            omission: OmissionSettings::default(),
        }
    }
}

fn rate(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn with_mode(config: &ScenarioConfig, mode: Option<FailMode>) -> ScenarioConfig {
    let mut c = config.clone();
    if let Some(m) = mode {
        let overrides = std::mem::take(&mut c.fail_modes.overrides);
        c.fail_modes = TierConfig {
            overrides,
            ..TierConfig::uniform(m)
        };
    }
    c
}

fn baseline(config: &ScenarioConfig) -> Result<Availability, BusError> {
    let pack = default_rule_pack();
    let mut a = Availability::default();
    for run in 0..config.runs {
        let mut h = build_harness(config, &pack, run)?;
        for flow in generate_run(config, run) {
            let res = drive_flow(&mut h.bus, &sign_flow(&flow, &h.keys))?;
            if flow.is_legitimate() {
                a.add(&flow, &res);
            }
        }
    }
    Ok(a)
}

/// Replaces every signature of a share of flows with random bytes of
/// signature length.
pub fn forgery_campaign(
    campaign: &CampaignConfig,
    fail_mode: Option<FailMode>,
) -> Result<SecurityReport, BusError> {
    let config = with_mode(&campaign.scenario, fail_mode);
    let base = baseline(&config)?;
    let pack = default_rule_pack();
    let mut attacked = Availability::default();
    let (mut attempts, mut detected, mut bypassed) = (0u64, 0u64, 0u64);
    for run in 0..config.runs {
        let mut rng = run_rng(config.seed ^ ATTACK_SALT, run);
        let mut h = build_harness(&config, &pack, run)?;
        for flow in generate_run(&config, run) {
            let mut events = sign_flow(&flow, &h.keys);
            let forged = rng.gen::<f64>() < campaign.attack_fraction;
            if forged {
                for e in &mut events {
                    let mut sig = vec![0u8; 64];
                    rng.fill_bytes(&mut sig);
                    e.signature = Some(sig);
                }
            }
            let res = drive_flow(&mut h.bus, &events)?;
            if forged {
                for o in &res.outcomes {
                    attempts += 1;
                    detected += (o.verified == Verified::False) as u64;
                    bypassed += o.operation_completed as u64;
                }
            }
            if flow.is_legitimate() {
                attacked.add(&flow, &res);
            }
        }
    }
    Ok(SecurityReport {
        attack: AttackKind::Forgery,
        seed: config.seed,
        fail_mode,
        attempts,
        detected,
        detection_rate: rate(detected, attempts),
        bypassed,
        bypass_rate: rate(bypassed, attempts),
        availability_reduction: attacked.reduction(&base),
        high_tier_availability_reduction: attacked.high_reduction(&base),
        baseline: base,
        attacked,
        replay: None,
        omission: None,
    })
}

struct PendingReplay {
    arrival: f64,
    event: TelemetryEvent,
    expired: bool,
}

#[derive(Default)]
struct ReplayTally {
    breakdown: ReplayBreakdown,
    bypassed: u64,
}

fn flush_replays(
    bus: &mut EnforcementBus,
    pending: &mut VecDeque<PendingReplay>,
    until: f64,
    tally: &mut ReplayTally,
) -> Result<(), BusError> {
    let b = &mut tally.breakdown;
    while pending.front().is_some_and(|p| p.arrival < until) {
        let p = pending.pop_front().expect("checked non-empty");
        let out = bus.process_event_at(&p.event, p.arrival)?;
        let caught = out.reason == Reason::Replay;
        if p.expired {
            b.expired += 1;
            b.expired_detected += caught as u64;
        } else {
            b.in_window += 1;
            b.in_window_detected += caught as u64;
        }
        tally.bypassed += out.operation_completed as u64;
    }
    Ok(())
}

fn enqueue(pending: &mut VecDeque<PendingReplay>, p: PendingReplay) {
    let at = pending.partition_point(|q| q.arrival <= p.arrival);
    pending.insert(at, p);
}

/// Resubmits validly signed events later: most inside the detection
/// window, a share after it has certainly expired.
pub fn replay_campaign(
    campaign: &CampaignConfig,
    fail_mode: Option<FailMode>,
) -> Result<SecurityReport, BusError> {
    let config = with_mode(&campaign.scenario, fail_mode);
    let base = baseline(&config)?;
    let pack = default_rule_pack();
    let window_min = config.replay.rotation_seconds;
    let mut attacked = Availability::default();
    let mut tally = ReplayTally::default();
    let mut fresh_rejected = 0u64;
    for run in 0..config.runs {
        let mut rng = run_rng(config.seed ^ ATTACK_SALT, run);
        let mut h = build_harness(&config, &pack, run)?;
        let mut pending = VecDeque::new();
        for flow in generate_run(&config, run) {
            flush_replays(
                &mut h.bus,
                &mut pending,
                flow.events[0].timestamp,
                &mut tally,
            )?;
            let events = sign_flow(&flow, &h.keys);
            let res = drive_flow(&mut h.bus, &events)?;
            for (e, o) in events.iter().zip(&res.outcomes) {
                fresh_rejected += (o.reason == Reason::Replay) as u64;
                if rng.gen::<f64>() < campaign.attack_fraction {
                    let expired = rng.gen::<f64>() < campaign.expired_share;
                    let delay = if expired {
                        rng.gen_range(2.0 * window_min + 1.0..=3.0 * window_min)
                    } else {
                        rng.gen_range(1.0..=window_min - 10.0)
                    };
                    enqueue(
                        &mut pending,
                        PendingReplay {
                            arrival: e.timestamp + delay,
                            event: e.clone(),
                            expired,
                        },
                    );
                }
            }
            if flow.is_legitimate() {
                attacked.add(&flow, &res);
            }
        }
        flush_replays(&mut h.bus, &mut pending, f64::INFINITY, &mut tally)?;
    }
    let mut b = tally.breakdown;
    b.fresh_rejected = fresh_rejected;
    let attempts = b.in_window + b.expired;
    let detected = b.in_window_detected + b.expired_detected;
    Ok(SecurityReport {
        attack: AttackKind::Replay,
        seed: config.seed,
        fail_mode,
        attempts,
        detected,
        detection_rate: rate(detected, attempts),
        bypassed: tally.bypassed,
        bypass_rate: rate(tally.bypassed, attempts),
        availability_reduction: attacked.reduction(&base),
        high_tier_availability_reduction: attacked.high_reduction(&base),
        baseline: base,
        attacked,
        replay: Some(b),
        omission: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmissionSettings {
    pub seed: u64,
    pub training_traces: usize,
    pub held_out_traces: usize,
    pub states: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub tolerance: f64,
    pub calibration_quantile: f64,
    pub shape: TraceShape,
}

impl Default for OmissionSettings {
    fn default() -> Self {
        Self {
            seed: 42,
            training_traces: 600,
            held_out_traces: 500,
            states: 4,
            restarts: 3,
            max_iters: 20,
            tolerance: 1e-4,
            calibration_quantile: 0.05,
            shape: TraceShape::default(),
        }
    }
}

/// Trains the phase model on nominal traces, calibrates θ, then scores
/// held-out nominal traces and the same traces with one VALIDATE or ROUTE
/// phase suppressed.
pub fn omission_campaign(s: &OmissionSettings) -> Result<SecurityReport, HmmError> {
    let mut rng = ChaCha20Rng::seed_from_u64(s.seed ^ ATTACK_SALT);
    let alphabet: Vec<String> = ALPHABET.iter().map(|x| x.to_string()).collect();
    let states: Vec<String> = (0..s.states).map(|i| format!("s{i}")).collect();
    let train: Vec<_> = (0..s.training_traces)
        .map(|_| generate_trace(&mut rng, &s.shape))
        .collect();
    let held: Vec<_> = (0..s.held_out_traces)
        .map(|_| generate_trace(&mut rng, &s.shape))
        .collect();
    let probe = HmmModel::random(states.clone(), alphabet.clone(), &mut rng);
    let corpus = train
        .iter()
        .map(|t| probe.encode(&symbols(t)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut best: Option<crate::hmm::Training> = None;
    for _ in 0..s.restarts.max(1) {
        let init = HmmModel::random(states.clone(), alphabet.clone(), &mut rng);
        let t = baum_welch_train(&corpus, &init, s.max_iters, s.tolerance)?;
        let ll = t.trace.last().copied().unwrap_or(t.initial_loglik);
        let better = best.as_ref().map_or(true, |b| {
            ll > b.trace.last().copied().unwrap_or(b.initial_loglik)
        });
        if better {
            best = Some(t);
        }
    }
    let training = best.expect("at least one restart");
    let model = &training.model;
    let threshold = calibrate_threshold(model, &corpus, s.calibration_quantile)?;

    let mut false_alerts = 0u64;
    let mut detected = 0u64;
    for (i, t) in held.iter().enumerate() {
        false_alerts += score_for_omission(model, &threshold, &symbols(t))?.is_alert() as u64;
        let phase = if i % 2 == 0 {
            Phase::Validate
        } else {
            Phase::Route
        };
        let attacked = delete_phase(&mut rng, t, phase);
        detected += score_for_omission(model, &threshold, &symbols(&attacked))?.is_alert() as u64;
    }
    let mut lls = vec![training.initial_loglik];
    lls.extend(&training.trace);
    let non_decreasing = lls
        .windows(2)
        .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
    let n = held.len() as u64;
    Ok(SecurityReport {
        attack: AttackKind::Omission,
        seed: s.seed,
        fail_mode: None,
        attempts: n,
        detected,
        detection_rate: rate(detected, n),
        bypassed: n - detected,
        bypass_rate: rate(n - detected, n),
        availability_reduction: 0.0,
        high_tier_availability_reduction: 0.0,
        baseline: Availability::default(),
        attacked: Availability::default(),
        replay: None,
        omission: Some(OmissionBreakdown {
            training_traces: train.len(),
            held_out_traces: held.len(),
            attacked_traces: held.len(),
            theta: threshold.theta,
            false_alert_rate: rate(false_alerts, n),
            loglik_trace: lls,
            loglik_non_decreasing: non_decreasing,
        }),
    })
}

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Hmm(#[from] HmmError),
}

pub fn attack_campaign(
    campaign: &CampaignConfig,
    attack: AttackKind,
    fail_mode: Option<FailMode>,
) -> Result<SecurityReport, CampaignError> {
    Ok(match attack {
        AttackKind::Forgery => forgery_campaign(campaign, fail_mode)?,
        AttackKind::Replay => replay_campaign(campaign, fail_mode)?,
        AttackKind::Omission => omission_campaign(&campaign.omission)?,
    })
}
