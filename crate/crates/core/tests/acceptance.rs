//! Acceptance criteria. One line per criterion; the process exits non-zero
//! when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use telegov_core::bus::EnforcementMode;
use telegov_core::model::{agent, FailMode, ViolationType};
use telegov_core::montecarlo::{
    corrected_bound, independence_bound, random_event, run_suite, validate_convergence,
    validate_determinism, validate_false_quarantine, ConvergenceConfig, DeterminismConfig,
    FalseQuarantineConfig, Schedule, SuiteConfig,
};
use telegov_core::plane::audit::{verify_chain, AuditLog, ChainReport};
use telegov_core::plane::replay::{ReplayConfig, ReplayFilter, ReplayVerdict};
use telegov_core::policy::{
    constant, evaluate_policy_set, Decision, EnforcementActionKind, PolicyRef,
};
use telegov_core::rules::{default_rule_pack, CompiledPack};
use telegov_core::sim::attack::{
    forgery_campaign, omission_campaign, CampaignConfig, OmissionSettings,
};
use telegov_core::sim::runner::{directory, run_scenario_with};
use telegov_core::sim::{run_scenario, sensitivity_sweep, MetricsReport, ScenarioConfig};

type Outcome = Result<String, String>;

fn pct(x: f64) -> String {
    format!("{:.3}%", 100.0 * x)
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn policy_determinism() -> Outcome {
    let r = validate_determinism(&DeterminismConfig::default());
    verdict(
        r.trials == 10_000 && r.successes == r.trials,
        format!(
            "{} of {} trials identical across {} permutations",
            pct(r.success_fraction),
            r.trials,
            r.permutations
        ),
    )
}

fn monotonicity() -> Outcome {
    let dir = std::sync::Arc::new(directory(&ScenarioConfig::default()));
    let rules = CompiledPack::compile(&default_rule_pack(), dir)
        .unwrap()
        .policies();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let random_policy = |rng: &mut ChaCha20Rng, i: usize| -> PolicyRef {
        if rng.gen_bool(0.5) {
            rules[rng.gen_range(0..rules.len())].clone()
        } else {
            let action = EnforcementActionKind::ALL[rng.gen_range(0..4)];
            constant(
                format!("c{i}"),
                Decision {
                    action,
                    confidence: rng.gen(),
                },
            )
        }
    };
    let triples = 10_000;
    let mut violations = 0;
    for _ in 0..triples {
        let n = rng.gen_range(1..=25);
        let mut set: Vec<PolicyRef> = (0..n).map(|i| random_policy(&mut rng, i)).collect();
        let event = random_event(&mut rng);
        let before = evaluate_policy_set(&set, &event).unwrap();
        set.push(random_policy(&mut rng, n));
        let after = evaluate_policy_set(&set, &event).unwrap();
        if after.action.severity() < before.action.severity() {
            violations += 1;
        }
    }
    verdict(
        violations == 0,
        format!("{triples} triples, {violations} violations"),
    )
}

fn escalation() -> Outcome {
    let base = ConvergenceConfig::default();
    let a = validate_convergence(&ConvergenceConfig {
        schedule: Schedule::BoundedRate {
            low: 0.0,
            high: 1.0,
        },
        ..base.clone()
    });
    let b = validate_convergence(&base);
    let c = validate_convergence(&ConvergenceConfig {
        breaker_enabled: true,
        ..base.clone()
    });
    let ok_a = a.successes == a.trials;
    let ok_b =
        (0.90..=0.999).contains(&b.success_fraction) && b.min_failed_rate.is_some_and(|r| r > 0.4);
    let ok_c = c.success_fraction >= 0.995 && c.late_fixes == 0;
    verdict(
        ok_a && ok_b && ok_c,
        format!(
            "(a) bounded-rate {} within T_max={} (b) mixture no breaker {} min failing rate {:.3} (c) breaker {} late fixes {}",
            pct(a.success_fraction),
            a.t_max,
            pct(b.success_fraction),
            b.min_failed_rate.unwrap_or(f64::NAN),
            pct(c.success_fraction),
            c.late_fixes
        ),
    )
}

fn false_quarantine() -> Outcome {
    let bound = independence_bound(0.02, 0.011);
    let corrected = corrected_bound(0.02, 0.011, 0.2);
    let ind = validate_false_quarantine(&FalseQuarantineConfig::default());
    let range = validate_false_quarantine(&FalseQuarantineConfig {
        rho_min: 0.0,
        rho_max: 0.4,
        ..FalseQuarantineConfig::default()
    });
    verdict(
        bound == 0.03078
            && corrected == 0.036936
            && ind.batch == 10_000
            && ind.independence_success_fraction >= 0.99
            && range.corrected_success_fraction >= 0.93,
        format!(
            "bound {bound} held in {}; corrected bound at rho=0.2 {corrected}; rho<=0.4 corrected held in {}",
            pct(ind.independence_success_fraction),
            pct(range.corrected_success_fraction)
        ),
    )
}

fn audit_count_matches(r: &MetricsReport) -> bool {
    r.per_run.iter().all(|x| x.audit_records == x.events)
}

fn vpr_accounting() -> Outcome {
    let mut c = ScenarioConfig::default();
    c.noise_epsilon = 0.0;
    let pack = default_rule_pack();
    let mut reports = Vec::new();
    for mode in [
        EnforcementMode::Full,
        EnforcementMode::BoundaryOnly,
        EnforcementMode::ObserveOnly,
    ] {
        c.mode = mode;
        reports.push(run_scenario_with(&c, &pack).map_err(|e| e.to_string())?);
    }
    let (full, boundary, observe) = (&reports[0], &reports[1], &reports[2]);
    let per_run_ok = full.per_run.iter().all(|r| r.injected() == 25);
    let full_vpr = full.vpr.unwrap_or(0.0);
    let boundary_vpr = boundary.vpr.unwrap_or(0.0);
    let gap_only_residency = ViolationType::ALL.into_iter().all(|k| {
        let f = full.vpr_by_kind[&k];
        let b = boundary.vpr_by_kind[&k];
        if k == ViolationType::DataResidency {
            b.prevented < f.prevented
        } else {
            b.prevented == f.prevented
        }
    });
    verdict(
        per_run_ok
            && full_vpr == 1.0
            && full.fpr <= 0.01
            && full_vpr > boundary_vpr
            && gap_only_residency
            && observe.vpr == Some(0.0)
            && reports.iter().all(audit_count_matches),
        format!(
            "FULL VPR {} FPR {}; BOUNDARY VPR {} (residency {}/{}); OBSERVE VPR {}",
            pct(full_vpr),
            pct(full.fpr),
            pct(boundary_vpr),
            boundary.vpr_by_kind[&ViolationType::DataResidency].prevented,
            boundary.vpr_by_kind[&ViolationType::DataResidency].injected,
            pct(observe.vpr.unwrap_or(f64::NAN))
        ),
    )
}

fn sensitivity() -> Outcome {
    let mut c = ScenarioConfig::default();
    c.flows_per_run = 1000;
    let t = sensitivity_sweep(&c, &[0.001, 0.01, 0.05, 0.075, 0.10]).map_err(|e| e.to_string())?;
    let levels: Vec<String> = t
        .rows
        .iter()
        .map(|r| format!("{:.3}", r.avg_level))
        .collect();
    verdict(
        t.level_strictly_increasing() && t.rows.iter().all(|r| (1.0..=4.0).contains(&r.avg_level)),
        format!("avg level {}", levels.join(" < ")),
    )
}

fn replay() -> Outcome {
    let mut filter = ReplayFilter::new(ReplayConfig::default());
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let sources: Vec<_> = (0..16).map(|i| agent(&format!("agent_{i}"))).collect();
    let n = 1_000_000usize;
    let window = ReplayConfig::default().rotation_seconds;
    // (time, source, nonce, is_replay) over 500 s, crossing a rotation.
    let mut events = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = 500.0 * i as f64 / n as f64;
        let s = rng.gen_range(0..sources.len());
        let nonce: u64 = rng.gen();
        events.push((t, s, nonce, false));
        events.push((t + rng.gen_range(1.0..window - 1.0), s, nonce, true));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut missed = 0usize;
    let mut last = 0.0;
    for (t, s, nonce, is_replay) in events {
        let v = filter.check(&sources[s], nonce, t);
        if is_replay && v != ReplayVerdict::Replay {
            missed += 1;
        }
        last = t;
    }
    let mut false_positives = 0usize;
    for _ in 0..n {
        let s = rng.gen_range(0..sources.len());
        if filter.check(&sources[s], rng.gen(), last) == ReplayVerdict::Replay {
            false_positives += 1;
        }
    }
    let fp = false_positives as f64 / n as f64;
    verdict(
        missed == 0 && fp <= 0.0002,
        format!(
            "{n} in-window replays, {missed} missed; held-out FP {false_positives}/{n} = {}",
            pct(fp)
        ),
    )
}

fn forgery() -> Outcome {
    let mut campaign = CampaignConfig::default();
    campaign.scenario.runs = 4;
    let closed =
        forgery_campaign(&campaign, Some(FailMode::FailClosed)).map_err(|e| e.to_string())?;
    let open = forgery_campaign(&campaign, Some(FailMode::FailOpen)).map_err(|e| e.to_string())?;
    verdict(
        closed.detection_rate == 1.0
            && open.detection_rate == 1.0
            && closed.high_tier_availability_reduction > 0.0
            && open.availability_reduction == 0.0
            && open.bypass_rate > 0.0,
        format!(
            "{} forged events rejected; fail-closed HIGH-tier availability -{}; fail-open availability -{} bypass {}",
            pct(closed.detection_rate),
            pct(closed.high_tier_availability_reduction),
            pct(open.availability_reduction),
            pct(open.bypass_rate)
        ),
    )
}

fn omission() -> Outcome {
    let settings = OmissionSettings::default();
    let r = omission_campaign(&settings).map_err(|e| e.to_string())?;
    let o = r.omission.as_ref().expect("omission breakdown");
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let gap = common::forward_oracle_gap(&mut rng, 200);
    let mut monotone = o.loglik_non_decreasing;
    for seed in 0..5u64 {
        let mut s = settings.clone();
        s.seed = seed;
        s.training_traces = 500;
        s.held_out_traces = 50;
        let t = omission_campaign(&s).map_err(|e| e.to_string())?;
        monotone &= common::non_decreasing(&t.omission.unwrap().loglik_trace);
    }
    verdict(
        o.training_traces >= 500 && r.detection_rate >= 0.85 && o.false_alert_rate <= 0.08 && gap <= 1e-9 && monotone,
        format!(
            "detection {} false alerts {} on {} held-out traces; forward vs enumeration max rel gap {gap:.2e}; Baum-Welch non-decreasing: {monotone}",
            pct(r.detection_rate),
            pct(o.false_alert_rate),
            o.held_out_traces
        ),
    )
}

mod common;

fn audit() -> Outcome {
    let n = 1000usize;
    let mut log = AuditLog::in_memory(&[]);
    for i in 0..n {
        log.append(format!("record-{i:06}").as_bytes(), &[])
            .unwrap();
    }
    let clean = log.bytes().unwrap().to_vec();
    if !verify_chain(&clean).is_ok() {
        return Err("untouched log did not verify".into());
    }
    // Header 14 bytes; frame = 8 + 4 + 13 + 2 + 0 + 32.
    let frame = 8 + 4 + 13 + 2 + 32;
    let mut detected = 0;
    let targets = [0usize, 1, 499, 500, 998, 999];
    for &i in &targets {
        let mut bytes = clean.clone();
        bytes[14 + i * frame + 12 + 7] ^= 0x01;
        if matches!(verify_chain(&bytes), ChainReport::Tampered { index, .. } if index == i as u64)
        {
            detected += 1;
        }
    }
    let mut c = ScenarioConfig::default();
    c.runs = 3;
    c.injection_rate = 0.1;
    let r = run_scenario(&c).map_err(|e| e.to_string())?;
    let counts_equal = audit_count_matches(&r);
    verdict(
        detected == targets.len() && counts_equal,
        format!(
            "{detected}/{} tamper fixtures located at the altered record; audit records == events on every run: {counts_equal}",
            targets.len()
        ),
    )
}

fn latency() -> Outcome {
    let mut c = ScenarioConfig::default();
    c.runs = 2;
    c.report_latency = true;
    let r = run_scenario(&c).map_err(|e| e.to_string())?;
    let l = r.latency_e2e.ok_or("no latency samples")?;
    verdict(
        l.p99_ms < 200.0,
        format!(
            "{} events, P50 {:.3} ms, P99 {:.3} ms, max {:.3} ms",
            l.samples, l.p50_ms, l.p99_ms, l.max_ms
        ),
    )
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn reproducibility() -> Outcome {
    let mut c = ScenarioConfig::default();
    c.runs = 3;
    c.flows_per_run = 200;
    let run = || serde_json::to_vec(&run_scenario(&c).unwrap()).unwrap();
    let suite = SuiteConfig {
        trials: 300,
        ..SuiteConfig::default()
    };
    let mc = || serde_json::to_vec(&run_suite(&suite)).unwrap();
    let mut om = OmissionSettings::default();
    om.training_traces = 100;
    om.held_out_traces = 100;
    let attack = || serde_json::to_vec(&omission_campaign(&om).unwrap()).unwrap();
    let pairs = [
        ("scenario", digest(&run()), digest(&run())),
        ("monte_carlo", digest(&mc()), digest(&mc())),
        ("omission", digest(&attack()), digest(&attack())),
    ];
    let same = pairs.iter().all(|(_, a, b)| a == b);
    verdict(
        same,
        pairs
            .iter()
            .map(|(n, a, _)| format!("{n} {}", &a[..16]))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

fn main() -> ExitCode {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "conflict resolution determinism", policy_determinism),
        (2, "policy monotonicity", monotonicity),
        (3, "escalation termination", escalation),
        (4, "false-quarantine bound", false_quarantine),
        (5, "violation prevention accounting", vpr_accounting),
        (6, "sensitivity sweep monotonicity", sensitivity),
        (7, "replay prevention", replay),
        (8, "forgery handling", forgery),
        (9, "omission detection", omission),
        (10, "audit integrity", audit),
        (11, "latency budget", latency),
        (12, "reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if filter.as_deref().is_some_and(|s| !name.contains(s)) {
            continue;
        }
        let start = Instant::now();
        let (status, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "acceptance {id:>2} {name}: {status} ({detail}) [{:.1}s]",
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
