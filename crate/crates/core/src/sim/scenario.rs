//! Flow generation with violation injection and classification noise.
//!
//! A nominal flow is four delegated operations, 0.1 s apart by default:
//!
//! ```text
//! e1 order     → inventory  reserve_inventory   lineage [order]
//! e2 order     → payment    authorize_payment   lineage [order]
//! e3 payment   → shipping   schedule_shipment   lineage [order, payment]
//! e4 shipping  → analytics  emit_analytics      lineage [order, payment, shipping]
//! ```
//!
//! Injected flows differ in one place:
//!
//! | kind | change |
//! |---|---|
//! | CONSENT_MISSING | e2 carries `consent_flag = 0` |
//! | BIAS_THRESHOLD | e3 carries `disparate_impact` in (0.15, 0.5] |
//! | UNAUTHORIZED_ACCESS | e3 is sent by inventory, which lacks `schedule_shipment` |
//! | DATA_RESIDENCY | e3/e4 detour through the offshore shipping replica; EU PII |

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::model::{
    AgentId, Classification, Context, ContextValue, GovernanceMetadata, Jurisdiction, Sensitivity,
    TelemetryEvent, Tier, ViolationType,
};
use crate::sim::config::{Role, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flow {
    pub index: usize,
    pub tier: Tier,
    pub injected: Option<ViolationType>,
    pub events: Vec<TelemetryEvent>,
}

impl Flow {
    pub fn is_legitimate(&self) -> bool {
        self.injected.is_none()
    }
}

pub fn run_rng(seed: u64, run: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(run as u64 + 1);
    rng
}

/// Violation kinds for global injection indices `from..to`, by smooth
/// weighted round-robin in enum order: each step picks the kind furthest
/// below its weighted share.
pub fn kind_schedule(
    weights: &std::collections::BTreeMap<ViolationType, f64>,
    from: usize,
    to: usize,
) -> Vec<ViolationType> {
    let total: f64 = weights.values().sum();
    let share: Vec<(ViolationType, f64)> = ViolationType::ALL
        .into_iter()
        .map(|v| (v, weights.get(&v).copied().unwrap_or(0.0) / total))
        .collect();
    let mut counts = [0usize; 4];
    let mut out = Vec::with_capacity(to.saturating_sub(from));
    for g in 0..to {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (i, (_, p)) in share.iter().enumerate() {
            if *p <= 0.0 {
                continue;
            }
            let deficit = (g + 1) as f64 * p - counts[i] as f64;
            if deficit > best_deficit + 1e-12 {
                best = i;
                best_deficit = deficit;
            }
        }
        counts[best] += 1;
        if g >= from {
            out.push(share[best].0);
        }
    }
    out
}

fn pick<T: Copy, R: Rng>(rng: &mut R, xs: &[T]) -> T {
    xs[rng.gen_range(0..xs.len())]
}

fn noisy_class<R: Rng>(rng: &mut R, c: Classification, eps: f64) -> Classification {
    if eps > 0.0 && rng.gen::<f64>() < eps {
        let others: Vec<Classification> = Classification::ALL
            .into_iter()
            .filter(|x| *x != c)
            .collect();
        pick(rng, &others)
    } else {
        c
    }
}

struct Cast {
    order: AgentId,
    inventory: AgentId,
    payment: AgentId,
    shipping: AgentId,
    analytics: AgentId,
    offshore: Option<AgentId>,
}

fn cast(config: &ScenarioConfig) -> Cast {
    let id = |r| config.primary(r).expect("validated config").id.clone();
    Cast {
        order: id(Role::Order),
        inventory: id(Role::Inventory),
        payment: id(Role::Payment),
        shipping: id(Role::Shipping),
        analytics: id(Role::Analytics),
        offshore: config.offshore_shipping().ok().map(|a| a.id.clone()),
    }
}

/// Tier per flow: exact counts from the configured mix, residency
/// injections pinned to HIGH (EU PII).
fn assign_tiers<R: Rng>(
    rng: &mut R,
    config: &ScenarioConfig,
    injected: &[Option<ViolationType>],
) -> Vec<Tier> {
    let n = injected.len();
    let high = (config.tier_mix.high * n as f64).round() as usize;
    let medium = ((config.tier_mix.medium * n as f64).round() as usize).min(n - high.min(n));
    let mut tiers = vec![Tier::Low; n];
    let mut free = Vec::with_capacity(n);
    let mut pinned = 0;
    for (i, k) in injected.iter().enumerate() {
        if *k == Some(ViolationType::DataResidency) {
            tiers[i] = Tier::High;
            pinned += 1;
        } else {
            free.push(i);
        }
    }
    free.shuffle(rng);
    let high_left = high.saturating_sub(pinned);
    for (j, &i) in free.iter().enumerate() {
        tiers[i] = if j < high_left {
            Tier::High
        } else if j < high_left + medium {
            Tier::Medium
        } else {
            Tier::Low
        };
    }
    tiers
}

fn metadata_for<R: Rng>(rng: &mut R, tier: Tier) -> (Classification, Sensitivity) {
    match tier {
        Tier::High => (Classification::Pii, pick(rng, &Sensitivity::ALL)),
        Tier::Medium => (Classification::Financial, pick(rng, &Sensitivity::ALL)),
        Tier::Low => (
            pick(rng, &[Classification::Operational, Classification::Public]),
            pick(rng, &[Sensitivity::Medium, Sensitivity::Low]),
        ),
    }
}

/// Deterministic event stream of one run.
pub fn generate_run(config: &ScenarioConfig, run: usize) -> Vec<Flow> {
    let mut rng = run_rng(config.seed, run);
    let n = config.flows_per_run;
    let n_inj = config.injections_per_run().min(n);
    let mut positions = sample(&mut rng, n, n_inj).into_vec();
    positions.sort_unstable();
    let kinds = kind_schedule(&config.weights, run * n_inj, (run + 1) * n_inj);
    let mut injected = vec![None; n];
    for (p, k) in positions.iter().zip(kinds) {
        injected[*p] = Some(k);
    }
    let tiers = assign_tiers(&mut rng, config, &injected);
    let c = cast(config);

    let mut flows = Vec::with_capacity(n);
    for i in 0..n {
        let kind = injected[i];
        let (class, sens) = metadata_for(&mut rng, tiers[i]);
        let t0 = 1.0 + i as f64 * config.flow_spacing_seconds;
        let dt = config.hop_spacing_seconds;

        let mut e3_source = c.payment.clone();
        let mut shipper = c.shipping.clone();
        let mut consent = 1;
        let mut di = rng.gen_range(0.0..=0.15);
        match kind {
            Some(ViolationType::ConsentMissing) => consent = 0,
            Some(ViolationType::BiasThreshold) => {
                // (0.15, 0.5]: reflect a draw from [0.15, 0.5) about 0.325.
                di = 0.65 - rng.gen_range(0.15..0.5);
            }
            Some(ViolationType::UnauthorizedAccess) => e3_source = c.inventory.clone(),
            Some(ViolationType::DataResidency) => {
                shipper = c
                    .offshore
                    .clone()
                    .expect("validated config has offshore agent")
            }
            None => {}
        }

        let hops: [(AgentId, AgentId, &str, Vec<AgentId>, Context); 4] = [
            (
                c.order.clone(),
                c.inventory.clone(),
                "reserve_inventory",
                vec![c.order.clone()],
                Context::from([("quantity".into(), ContextValue::Int(rng.gen_range(1..5)))]),
            ),
            (
                c.order.clone(),
                c.payment.clone(),
                "authorize_payment",
                vec![c.order.clone()],
                Context::from([
                    ("consent_flag".into(), ContextValue::Int(consent)),
                    (
                        "amount".into(),
                        ContextValue::Real((rng.gen_range(500..50_000) as f64) / 100.0),
                    ),
                ]),
            ),
            (
                e3_source.clone(),
                shipper.clone(),
                "schedule_shipment",
                vec![c.order.clone(), e3_source.clone()],
                Context::from([("disparate_impact".into(), ContextValue::Real(di))]),
            ),
            (
                shipper.clone(),
                c.analytics.clone(),
                "emit_analytics",
                vec![c.order.clone(), e3_source, shipper],
                Context::new(),
            ),
        ];
        let events = hops
            .into_iter()
            .enumerate()
            .map(|(h, (source, receiver, op, lineage, context))| {
                let classification = noisy_class(&mut rng, class, config.noise_epsilon);
                TelemetryEvent {
                    timestamp: t0 + h as f64 * dt,
                    source,
                    receiver,
                    operation: op.to_string(),
                    context,
                    governance: GovernanceMetadata::new(
                        classification,
                        Jurisdiction::Eu,
                        sens,
                        lineage,
                    ),
                    nonce: rng.gen(),
                    signature: None,
                }
            })
            .collect();
        flows.push(Flow {
            index: i,
            tier: tiers[i],
            injected: kind,
            events,
        });
    }
    flows
}
