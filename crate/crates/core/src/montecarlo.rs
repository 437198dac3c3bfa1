//! Seeded Monte Carlo validation of escalation termination, conflict
//! resolution determinism and the false-quarantine bound.
//!
//! Every trial draws from `ChaCha20Rng::seed_from_u64(seed ^ salt)` on
//! stream `trial`, so any trial replays from (seed, trial index).
//!
//! Escalation trials run one agent for T_max = 4kW one-second processing
//! cycles. Bounded-rate schedules deliver at most one violation per cycle.
//! Rate-mixture schedules are Poisson with a per-trial rate drawn from the
//! configured mixture. A breaker window holding more than k_cb violations
//! is an overload: the burst is denser than the breaker tolerates, the
//! bounded-rate assumption no longer covers it and graduated escalation has
//! no guaranteed fixed point. With the defaults (W = 200, k = 20, so
//! W_cb = 50 and k_cb = 60) a bounded-rate schedule fits at most 51
//! violations in a breaker window and never overloads. Without the breaker such a trial fails. With the
//! breaker it succeeds when the agent sits at L4 no later than W_cb after
//! the overload began.
//!
//! False-quarantine trials draw a batch of legitimate events with true
//! class uniform over the four classes. Classification noise replaces the
//! class with a uniform other class with probability ε; an event is
//! falsely quarantined when noise moved it to a more sensitive class, or
//! when an independent policy false positive fires with probability δ.
//! Under independent noise the expected rate is εq + (1 − εq)δ with
//! q = 1/2. Correlated noise splits the batch into groups; with probability
//! ρ a group shares one noise draw for all its events.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::escalation::{AgentEscalationState, EscalationConfig, ViolationRecord, MAX_LEVEL};
use crate::model::{agent, Classification};
use crate::policy::{Decision, EnforcementActionKind};

const CONVERGENCE_SALT: u64 = 0x7432;
const DETERMINISM_SALT: u64 = 0x7433;
const FALSE_QUARANTINE_SALT: u64 = 0x7434;
pub const MAX_EXEMPLARS: usize = 5;

pub fn trial_rng(seed: u64, salt: u64, trial: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(trial as u64);
    rng
}

fn fraction(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// One component of a per-cycle violation-rate mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateBand {
    pub weight: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Bernoulli per cycle with probability drawn from [low, high] ⊆ [0, 1].
    BoundedRate { low: f64, high: f64 },
    /// Poisson arrivals at a per-trial rate drawn from the mixture.
    RateMixture { bands: Vec<RateBand> },
}

impl Schedule {
    pub fn heavy_tail() -> Self {
        Schedule::RateMixture {
            bands: vec![
                RateBand {
                    weight: 0.8,
                    low: 0.0,
                    high: 0.3,
                },
                RateBand {
                    weight: 0.2,
                    low: 0.3,
                    high: 0.8,
                },
            ],
        }
    }

    fn draw_rate<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Schedule::BoundedRate { low, high } => rng.gen_range(*low..=*high),
            Schedule::RateMixture { bands } => {
                let total: f64 = bands.iter().map(|b| b.weight).sum();
                let mut u = rng.gen::<f64>() * total;
                let mut pick = bands[bands.len() - 1];
                for b in bands {
                    if u < b.weight {
                        pick = *b;
                        break;
                    }
                    u -= b.weight;
                }
                rng.gen_range(pick.low..=pick.high)
            }
        }
    }

    /// Violation times in [0, horizon), ascending.
    fn arrivals<R: Rng>(&self, rng: &mut R, rate: f64, horizon: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if rate <= 0.0 {
            return out;
        }
        match self {
            Schedule::BoundedRate { .. } => {
                if rate >= 1.0 {
                    return (0..horizon as usize).map(|c| c as f64).collect();
                }
                let gap = Geometric::new(rate).expect("rate in (0, 1)");
                let mut cycle = gap.sample(rng);
                while (cycle as f64) < horizon {
                    out.push(cycle as f64);
                    cycle += 1 + gap.sample(rng);
                }
            }
            Schedule::RateMixture { .. } => {
                let gap = Exp::new(rate).expect("positive rate");
                let mut t = gap.sample(rng);
                while t < horizon {
                    out.push(t);
                    t += gap.sample(rng);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub trials: usize,
    pub seed: u64,
    pub window_w_seconds: f64,
    pub k: u32,
    pub breaker_enabled: bool,
    pub schedule: Schedule,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            trials: 10_000,
            seed: 42,
            window_w_seconds: 200.0,
            k: 20,
            breaker_enabled: false,
            schedule: Schedule::heavy_tail(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceExemplar {
    pub trial: usize,
    pub rate: f64,
    pub overload_at: Option<f64>,
    pub fixed_at: Option<f64>,
    /// Violation times inside the first overloaded breaker window.
    pub window: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub trials: usize,
    pub seed: u64,
    pub breaker_enabled: bool,
    pub t_max: f64,
    pub cb_window: f64,
    pub cb_threshold: u32,
    pub successes: usize,
    pub success_fraction: f64,
    /// Smallest drawn rate among failed trials.
    pub min_failed_rate: Option<f64>,
    /// Trials whose level was fixed more than W_cb after overload onset.
    pub late_fixes: usize,
    pub exemplars: Vec<ConvergenceExemplar>,
}

/// First time some window [t − W_cb, t] holds more than k_cb violations,
/// with the window contents.
pub fn first_overload(
    arrivals: &[f64],
    cb_window: f64,
    cb_threshold: u32,
) -> Option<(f64, Vec<f64>)> {
    let mut lo = 0;
    for (hi, &t) in arrivals.iter().enumerate() {
        while arrivals[lo] < t - cb_window {
            lo += 1;
        }
        if hi + 1 - lo > cb_threshold as usize {
            return Some((t, arrivals[lo..=hi].to_vec()));
        }
    }
    None
}

/// Feeds the schedule to the escalation engine; returns the time the agent
/// reached the absorbing L4, if it did.
fn run_engine(arrivals: &[f64], cfg: &EscalationConfig) -> Option<f64> {
    let mut st = AgentEscalationState::new(agent("trial_agent"), 1.0, Default::default());
    let policy: Arc<str> = Arc::from("trial");
    let decision = Decision {
        action: EnforcementActionKind::Deny,
        confidence: 1.0,
    };
    for &t in arrivals {
        let rec = ViolationRecord {
            event_ref: [0; 32],
            policy_id: policy.clone(),
            decision,
            time: t,
        };
        let step = st
            .record_violation(rec, 0, cfg)
            .expect("DENY is recordable");
        if step.level == MAX_LEVEL {
            return Some(t);
        }
    }
    None
}

pub fn validate_convergence(config: &ConvergenceConfig) -> ConvergenceReport {
    let mut esc = EscalationConfig::new(config.window_w_seconds, config.k)
        .expect("caller validated window and k");
    esc.breaker_enabled = config.breaker_enabled;
    let t_max = esc.t_max();
    let mut successes = 0;
    let mut late_fixes = 0;
    let mut min_failed_rate: Option<f64> = None;
    let mut exemplars = Vec::new();
    for trial in 0..config.trials {
        let mut rng = trial_rng(config.seed, CONVERGENCE_SALT, trial);
        let rate = config.schedule.draw_rate(&mut rng);
        let arrivals = config.schedule.arrivals(&mut rng, rate, t_max);
        let overload = first_overload(&arrivals, esc.cb_window, esc.cb_threshold);
        let (ok, fixed_at) = match (&overload, config.breaker_enabled) {
            (None, _) => (true, None),
            (Some(_), false) => (false, None),
            (Some((onset, _)), true) => {
                let upto = arrivals.partition_point(|t| *t <= onset + esc.cb_window);
                let fixed = run_engine(&arrivals[..upto], &esc);
                (fixed.is_some_and(|f| f <= onset + esc.cb_window), fixed)
            }
        };
        if ok {
            successes += 1;
        } else {
            if config.breaker_enabled {
                late_fixes += 1;
            }
            min_failed_rate = Some(min_failed_rate.map_or(rate, |m| m.min(rate)));
            if exemplars.len() < MAX_EXEMPLARS {
                exemplars.push(ConvergenceExemplar {
                    trial,
                    rate,
                    overload_at: overload.as_ref().map(|o| o.0),
                    fixed_at,
                    window: overload.map(|o| o.1).unwrap_or_default(),
                });
            }
        }
    }
    ConvergenceReport {
        trials: config.trials,
        seed: config.seed,
        breaker_enabled: config.breaker_enabled,
        t_max,
        cb_window: esc.cb_window,
        cb_threshold: esc.cb_threshold,
        successes,
        success_fraction: fraction(successes, config.trials),
        min_failed_rate,
        late_fixes,
        exemplars,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterminismConfig {
    pub trials: usize,
    pub seed: u64,
    pub min_policies: usize,
    pub max_policies: usize,
    pub permutations: usize,
    /// Fold with first-wins confidence instead of the parallel composition.
    /// A known-broken evaluator, for checking that failures are reported.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub order_dependent_fixture: bool,
}

impl Default for DeterminismConfig {
    fn default() -> Self {
        Self {
            trials: 10_000,
            seed: 42,
            min_policies: 2,
            max_policies: 25,
            permutations: 50,
            order_dependent_fixture: false,
        }
    }
}

fn first_wins(set: &[crate::policy::PolicyRef], event: &crate::model::TelemetryEvent) -> Decision {
    let mut out = set[0].evaluate(event);
    for p in &set[1..] {
        let d = p.evaluate(event);
        if d.action > out.action {
            out.action = d.action;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterminismExemplar {
    pub trial: usize,
    pub policies: Vec<String>,
    pub reference: Decision,
    pub divergent: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterminismReport {
    pub trials: usize,
    pub seed: u64,
    pub permutations: usize,
    pub successes: usize,
    pub success_fraction: f64,
    pub exemplars: Vec<DeterminismExemplar>,
}

/// Random event over the scenario vocabulary, so rule conditions both hold
/// and fail across trials.
pub fn random_event<R: Rng>(rng: &mut R) -> crate::model::TelemetryEvent {
    use crate::model::*;
    const AGENTS: [&str; 9] = [
        "order_agent",
        "inventory_agent",
        "payment_agent",
        "shipping_agent",
        "analytics_agent",
        "shipping_agent_us",
        "compliance_sink",
        "external_agent",
        "unknown_agent",
    ];
    const OPS: [&str; 11] = [
        "reserve_inventory",
        "authorize_payment",
        "schedule_shipment",
        "emit_analytics",
        "publish_report",
        "compliance_review",
        "export_dataset",
        "heartbeat",
        "grant_capability",
        "rotate_keys",
        "checkpoint",
    ];
    let pick = |rng: &mut R, xs: &[&str]| xs[rng.gen_range(0..xs.len())].to_string();
    let lineage_len = rng.gen_range(1..=8);
    let lineage = (0..lineage_len)
        .map(|_| agent(&pick(rng, &AGENTS)))
        .collect();
    let mut context = Context::new();
    let ints = [
        ("consent_flag", 0, 1),
        ("marketing_consent", 0, 1),
        ("guardian_consent", 0, 1),
        ("uses_protected_attribute", 0, 1),
        ("subject_age", 10, 80),
    ];
    for (key, lo, hi) in ints {
        if rng.gen_bool(0.5) {
            context.insert(key.into(), ContextValue::Int(rng.gen_range(lo..=hi)));
        }
    }
    for key in [
        "disparate_impact",
        "approval_rate_gap",
        "demographic_parity_gap",
        "score_drift",
    ] {
        if rng.gen_bool(0.5) {
            context.insert(key.into(), ContextValue::Real(rng.gen_range(0.0..0.5)));
        }
    }
    let strs: [(&str, &[&str]); 3] = [
        ("consent_status", &["granted", "withdrawn"]),
        ("purpose", &["marketing", "fulfilment"]),
        ("destination_jurisdiction", &["EU", "US", "OTHER"]),
    ];
    for (key, vals) in strs {
        if rng.gen_bool(0.5) {
            context.insert(key.into(), ContextValue::Str(pick(rng, vals)));
        }
    }
    TelemetryEvent {
        timestamp: rng.gen_range(0.0..1e4),
        source: agent(&pick(rng, &AGENTS)),
        receiver: agent(&pick(rng, &AGENTS)),
        operation: pick(rng, &OPS),
        context,
        governance: GovernanceMetadata::new(
            Classification::ALL[rng.gen_range(0..4)],
            Jurisdiction::ALL[rng.gen_range(0..3)],
            crate::model::Sensitivity::ALL[rng.gen_range(0..3)],
            lineage,
        ),
        nonce: rng.gen(),
        signature: None,
    }
}

/// Per trial: a random mix of default-pack rules and constant policies with
/// random decisions, one random event, and `permutations` shuffled
/// evaluations that must all agree bit for bit.
pub fn validate_determinism(config: &DeterminismConfig) -> DeterminismReport {
    use crate::policy::{constant, evaluate_policy_set, PolicyRef};
    use crate::rules::{default_rule_pack, CompiledPack};
    use crate::sim::runner::directory;
    use crate::sim::ScenarioConfig;
    use rand::seq::SliceRandom;

    let dir = Arc::new(directory(&ScenarioConfig::default()));
    let rules = CompiledPack::compile(&default_rule_pack(), dir)
        .expect("default pack compiles")
        .policies();
    let mut successes = 0;
    let mut exemplars = Vec::new();
    for trial in 0..config.trials {
        let mut rng = trial_rng(config.seed, DETERMINISM_SALT, trial);
        let n = rng.gen_range(config.min_policies..=config.max_policies);
        let mut set: Vec<PolicyRef> = (0..n)
            .map(|i| {
                if rng.gen_bool(0.5) {
                    rules[rng.gen_range(0..rules.len())].clone()
                } else {
                    let action = EnforcementActionKind::ALL[rng.gen_range(0..4)];
                    let conf = rng.gen_range(0.0..=1.0);
                    constant(
                        format!("c{i}"),
                        Decision {
                            action,
                            confidence: conf,
                        },
                    )
                }
            })
            .collect();
        let event = random_event(&mut rng);
        let eval = |set: &[PolicyRef]| {
            if config.order_dependent_fixture {
                first_wins(set, &event)
            } else {
                evaluate_policy_set(set, &event).expect("non-empty set")
            }
        };
        let reference = eval(&set);
        let mut divergent = None;
        for _ in 0..config.permutations {
            set.shuffle(&mut rng);
            let d = eval(&set);
            let same = d.action == reference.action
                && d.confidence.to_bits() == reference.confidence.to_bits();
            if !same {
                divergent = Some(d);
                break;
            }
        }
        match divergent {
            None => successes += 1,
            Some(d) if exemplars.len() < MAX_EXEMPLARS => exemplars.push(DeterminismExemplar {
                trial,
                policies: set.iter().map(|p| p.id().to_string()).collect(),
                reference,
                divergent: d,
            }),
            Some(_) => {}
        }
    }
    DeterminismReport {
        trials: config.trials,
        seed: config.seed,
        permutations: config.permutations,
        successes,
        success_fraction: fraction(successes, config.trials),
        exemplars,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FalseQuarantineConfig {
    pub trials: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub delta: f64,
    /// ρ is drawn per trial from [rho_min, rho_max].
    pub rho_min: f64,
    pub rho_max: f64,
    pub batch: usize,
    pub group_size: usize,
}

impl Default for FalseQuarantineConfig {
    fn default() -> Self {
        Self {
            trials: 10_000,
            seed: 42,
            epsilon: 0.02,
            delta: 0.011,
            rho_min: 0.0,
            rho_max: 0.0,
            batch: 10_000,
            group_size: 200,
        }
    }
}

/// ε + (1 − ε)δ, evaluated as ε + δ − εδ, which rounds to the nearest
/// double at the reference point (0.02, 0.011).
pub fn independence_bound(epsilon: f64, delta: f64) -> f64 {
    epsilon + delta - epsilon * delta
}

/// (1 + ρ)(ε + (1 − ε)δ).
pub fn corrected_bound(epsilon: f64, delta: f64, rho: f64) -> f64 {
    (1.0 + rho) * independence_bound(epsilon, delta)
}

/// Probability that noise moves a uniformly drawn class to a strictly more
/// sensitive one, given that it moved it.
pub const UPWARD_SHARE: f64 = 0.5;

/// Expected false-quarantine rate of the generative model, independent of ρ.
pub fn analytic_fq_rate(epsilon: f64, delta: f64) -> f64 {
    let up = epsilon * UPWARD_SHARE;
    up + (1.0 - up) * delta
}

fn sensitivity_rank(c: Classification) -> u8 {
    match c {
        Classification::Pii => 3,
        Classification::Financial => 2,
        Classification::Operational => 1,
        Classification::Public => 0,
    }
}

/// Noise moved `true_class` to `noisy_index` (0..3 among the other classes);
/// reports whether the move went up in sensitivity.
fn moved_up(true_class: usize, noisy_index: usize) -> bool {
    let others: Vec<Classification> = Classification::ALL
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != true_class)
        .map(|(_, c)| c)
        .collect();
    sensitivity_rank(others[noisy_index]) > sensitivity_rank(Classification::ALL[true_class])
}

/// False-quarantine count of one batch.
pub fn simulate_batch<R: Rng>(rng: &mut R, config: &FalseQuarantineConfig, rho: f64) -> usize {
    let mut fq = 0;
    let mut remaining = config.batch;
    while remaining > 0 {
        let n = remaining.min(config.group_size.max(1));
        remaining -= n;
        let shared =
            (rho > 0.0 && rng.gen_bool(rho.min(1.0))).then(|| rng.gen_bool(config.epsilon));
        for _ in 0..n {
            let noisy = match shared {
                Some(flag) => flag,
                None => rng.gen_bool(config.epsilon),
            };
            let up = noisy && moved_up(rng.gen_range(0..4), rng.gen_range(0..3));
            let policy_fp = rng.gen_bool(config.delta);
            fq += (up || policy_fp) as usize;
        }
    }
    fq
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalseQuarantineExemplar {
    pub trial: usize,
    pub rho: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalseQuarantineReport {
    pub trials: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub batch: usize,
    pub independence_bound: f64,
    pub analytic_rate: f64,
    pub mean_empirical_rate: f64,
    pub max_empirical_rate: f64,
    /// Trials whose rate stayed within ε + (1 − ε)δ.
    pub independence_successes: usize,
    pub independence_success_fraction: f64,
    /// Trials whose rate stayed within (1 + ρ)(ε + (1 − ε)δ) for their ρ.
    pub corrected_successes: usize,
    pub corrected_success_fraction: f64,
    pub exemplars: Vec<FalseQuarantineExemplar>,
}

pub fn validate_false_quarantine(config: &FalseQuarantineConfig) -> FalseQuarantineReport {
    let bound = independence_bound(config.epsilon, config.delta);
    let mut ind = 0;
    let mut cor = 0;
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut exemplars = Vec::new();
    for trial in 0..config.trials {
        let mut rng = trial_rng(config.seed, FALSE_QUARANTINE_SALT, trial);
        let rho = if config.rho_max > config.rho_min {
            rng.gen_range(config.rho_min..=config.rho_max)
        } else {
            config.rho_min
        };
        let rate = simulate_batch(&mut rng, config, rho) as f64 / config.batch as f64;
        sum += rate;
        max = max.max(rate);
        ind += (rate <= bound) as usize;
        let ok = rate <= corrected_bound(config.epsilon, config.delta, rho);
        cor += ok as usize;
        if !ok && exemplars.len() < MAX_EXEMPLARS {
            exemplars.push(FalseQuarantineExemplar { trial, rho, rate });
        }
    }
    FalseQuarantineReport {
        trials: config.trials,
        seed: config.seed,
        epsilon: config.epsilon,
        delta: config.delta,
        rho_min: config.rho_min,
        rho_max: config.rho_max,
        batch: config.batch,
        independence_bound: bound,
        analytic_rate: analytic_fq_rate(config.epsilon, config.delta),
        mean_empirical_rate: if config.trials == 0 {
            0.0
        } else {
            sum / config.trials as f64
        },
        max_empirical_rate: max,
        independence_successes: ind,
        independence_success_fraction: fraction(ind, config.trials),
        corrected_successes: cor,
        corrected_success_fraction: fraction(cor, config.trials),
        exemplars,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    pub trials: usize,
    pub convergence_window_w_seconds: f64,
    pub convergence_k: u32,
    pub determinism_permutations: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub order_dependent_fixture: bool,
    pub fq_epsilon: f64,
    pub fq_delta: f64,
    pub fq_rho: f64,
    pub fq_rho_max: f64,
    pub fq_batch: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            trials: 10_000,
            convergence_window_w_seconds: 200.0,
            convergence_k: 20,
            determinism_permutations: 50,
            order_dependent_fixture: false,
            fq_epsilon: 0.02,
            fq_delta: 0.011,
            fq_rho: 0.2,
            fq_rho_max: 0.4,
            fq_batch: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub bounded: ConvergenceReport,
    pub mixture: ConvergenceReport,
    pub with_breaker: ConvergenceReport,
    pub determinism: DeterminismReport,
    pub fq_independent: FalseQuarantineReport,
    pub fq_rho_fixed: FalseQuarantineReport,
    pub fq_rho_range: FalseQuarantineReport,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

pub fn run_suite(config: &SuiteConfig) -> SuiteReport {
    let convergence = |breaker_enabled, schedule| ConvergenceConfig {
        trials: config.trials,
        seed: config.seed,
        window_w_seconds: config.convergence_window_w_seconds,
        k: config.convergence_k,
        breaker_enabled,
        schedule,
    };
    let bounded = validate_convergence(&convergence(
        false,
        Schedule::BoundedRate {
            low: 0.0,
            high: 1.0,
        },
    ));
    let mixture = validate_convergence(&convergence(false, Schedule::heavy_tail()));
    let with_breaker = validate_convergence(&convergence(true, Schedule::heavy_tail()));
    let determinism = validate_determinism(&DeterminismConfig {
        trials: config.trials,
        seed: config.seed,
        permutations: config.determinism_permutations,
        order_dependent_fixture: config.order_dependent_fixture,
        ..DeterminismConfig::default()
    });
    let false_quarantine = |lo, hi| FalseQuarantineConfig {
        trials: config.trials,
        seed: config.seed,
        epsilon: config.fq_epsilon,
        delta: config.fq_delta,
        rho_min: lo,
        rho_max: hi,
        batch: config.fq_batch,
        ..FalseQuarantineConfig::default()
    };
    let fq_independent = validate_false_quarantine(&false_quarantine(0.0, 0.0));
    let fq_rho_fixed = validate_false_quarantine(&false_quarantine(config.fq_rho, config.fq_rho));
    let fq_rho_range = validate_false_quarantine(&false_quarantine(0.0, config.fq_rho_max));

    let pct = |x: f64| format!("{:.3}%", 100.0 * x);
    let checks = vec![
        check(
            "bounded_rate_converges",
            bounded.successes == bounded.trials,
            pct(bounded.success_fraction),
        ),
        check(
            "mixture_without_breaker",
            (0.90..=0.999).contains(&mixture.success_fraction)
                && mixture.min_failed_rate.map_or(true, |r| r > 0.4),
            format!(
                "{} min failed rate {:?}",
                pct(mixture.success_fraction),
                mixture.min_failed_rate
            ),
        ),
        check(
            "mixture_with_breaker",
            with_breaker.success_fraction >= 0.995 && with_breaker.late_fixes == 0,
            format!(
                "{} late fixes {}",
                pct(with_breaker.success_fraction),
                with_breaker.late_fixes
            ),
        ),
        check(
            "policy_determinism",
            determinism.successes == determinism.trials,
            pct(determinism.success_fraction),
        ),
        check(
            "fq_independence_bound",
            fq_independent.independence_success_fraction >= 0.99,
            format!(
                "bound {} held in {}",
                fq_independent.independence_bound,
                pct(fq_independent.independence_success_fraction)
            ),
        ),
        check(
            "fq_corrected_bound",
            fq_rho_range.corrected_success_fraction >= 0.93,
            format!(
                "rho {} bound {} held in {} (rho in [0, {}]: {})",
                config.fq_rho,
                corrected_bound(config.fq_epsilon, config.fq_delta, config.fq_rho),
                pct(fq_rho_fixed.corrected_success_fraction),
                config.fq_rho_max,
                pct(fq_rho_range.corrected_success_fraction)
            ),
        ),
    ];
    SuiteReport {
        config: config.clone(),
        bounded,
        mixture,
        with_breaker,
        determinism,
        fq_independent,
        fq_rho_fixed,
        fq_rho_range,
        checks,
    }
}
