use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use telegov_core::escalation::*;
use telegov_core::model::*;
use telegov_core::montecarlo::random_event;
use telegov_core::plane::canonical::*;
use telegov_core::policy::*;
use telegov_core::rules::{default_rule_pack, AgentDirectory, CompiledPack};

fn action() -> impl Strategy<Value = EnforcementActionKind> {
    prop::sample::select(EnforcementActionKind::ALL.to_vec())
}

fn decision() -> impl Strategy<Value = Decision> {
    (action(), 0.0f64..=1.0).prop_map(|(a, c)| Decision::new(a, c).unwrap())
}

fn event(seed: u64) -> TelemetryEvent {
    random_event(&mut ChaCha20Rng::seed_from_u64(seed))
}

fn constants(ds: &[Decision]) -> Vec<PolicyRef> {
    ds.iter()
        .enumerate()
        .map(|(i, d)| constant(format!("p{i}"), *d))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn adding_a_policy_never_weakens_the_set(ds in prop::collection::vec(decision(), 1..8), extra in decision(), seed in any::<u64>()) {
        let e = event(seed);
        let base = evaluate_policy_set(&constants(&ds), &e).unwrap();
        let mut more = ds.clone();
        more.push(extra);
        let bigger = evaluate_policy_set(&constants(&more), &e).unwrap();
        prop_assert!(bigger.action >= base.action);
        prop_assert!(bigger.action >= extra.action);
        prop_assert_eq!(bigger.action, ds.iter().map(|d| d.action).chain([extra.action]).max().unwrap());
    }

    #[test]
    fn set_result_ignores_order(mut ds in prop::collection::vec(decision(), 1..8), seed in any::<u64>()) {
        let e = event(seed);
        let a = evaluate_policy_set(&constants(&ds), &e).unwrap();
        ds.reverse();
        let b = evaluate_policy_set(&constants(&ds), &e).unwrap();
        prop_assert_eq!(a.action, b.action);
        prop_assert_eq!(a.confidence.to_bits(), b.confidence.to_bits());
    }

    #[test]
    fn sequential_is_at_least_as_strict_as_its_parts(d1 in decision(), d2 in decision(), seed in any::<u64>()) {
        let e = event(seed);
        let s = sequential_compose(constant("a", d1), constant("b", d2));
        let out = s.evaluate(&e);
        prop_assert!(out.action >= d1.action);
        if d1.action != EnforcementActionKind::Deny {
            prop_assert!(out.action >= d2.action);
        }
    }

    #[test]
    fn canonical_round_trip(seed in any::<u64>()) {
        let e = event(seed);
        let bytes = canonical_serialize(&e).unwrap();
        let back = parse_canonical(&bytes).unwrap();
        prop_assert_eq!(canonical_serialize(&back).unwrap(), bytes);
        prop_assert_eq!(back, e);
    }

    #[test]
    fn rule_pack_is_deterministic(seed in any::<u64>()) {
        let e = event(seed);
        let pack = CompiledPack::compile(&default_rule_pack(), Arc::new(directory())).unwrap();
        let a = pack.evaluate(&e);
        let b = pack.evaluate(&e);
        prop_assert_eq!(a.decision.action, b.decision.action);
        prop_assert_eq!(a.decision.confidence.to_bits(), b.decision.confidence.to_bits());
    }

    #[test]
    fn trust_and_level_stay_in_bounds(
        steps in prop::collection::vec((0u8..=3, 0.0f64..50.0, prop::bool::ANY), 1..120),
        breaker in prop::bool::ANY,
    ) {
        let mut cfg = EscalationConfig::new(60.0, 3).unwrap();
        cfg.breaker_enabled = breaker;
        let mut st = AgentEscalationState::new(AgentId::new("a").unwrap(), 1.0, BTreeSet::new());
        let mut t = 0.0;
        let mut was_quarantined = false;
        for (i, (base, gap, violate)) in steps.into_iter().enumerate() {
            t += gap;
            if violate {
                let rec = ViolationRecord {
                    event_ref: [i as u8; 32],
                    policy_id: Arc::from("r"),
                    decision: Decision::new(EnforcementActionKind::Flag, 0.9).unwrap(),
                    time: t,
                };
                let step = st.record_violation(rec, base, &cfg).unwrap();
                prop_assert!(step.level <= MAX_LEVEL);
                st.update_trust(step.level, &cfg);
            } else {
                st.update_trust(0, &cfg);
            }
            prop_assert!((0.0..=1.0).contains(&st.trust));
            prop_assert!(st.current_level <= MAX_LEVEL);
            if was_quarantined {
                prop_assert!(st.is_quarantined());
            }
            was_quarantined = st.is_quarantined();
        }
    }

    #[test]
    fn graduated_level_is_monotone(base in 0u8..=4, n in 0usize..500, k in 1u32..50) {
        let l = graduated_level(base, n, k);
        prop_assert!(l >= base.min(MAX_LEVEL) && l <= MAX_LEVEL);
        prop_assert!(graduated_level(base, n + 1, k) >= l);
    }
}

fn directory() -> AgentDirectory {
    telegov_core::sim::runner::directory(&telegov_core::sim::config::ScenarioConfig::default())
}
