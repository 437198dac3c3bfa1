//! Per-run counters and the aggregated scenario report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bus::EnforcementMode;
use crate::model::ViolationType;
use crate::stats::{bootstrap_ci, mean, quantile, ConfidenceInterval};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub injected: u64,
    pub prevented: u64,
}

impl KindCounts {
    pub fn rate(&self) -> Option<f64> {
        (self.injected > 0).then(|| self.prevented as f64 / self.injected as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub run: usize,
    pub flows: u64,
    pub legitimate_flows: u64,
    pub false_positive_flows: u64,
    pub events: u64,
    pub blocked_events: u64,
    pub redirected_events: u64,
    pub escalated_events: u64,
    pub level_sum: u64,
    pub alerts: u64,
    pub quarantined_agents: Vec<String>,
    pub by_kind: BTreeMap<ViolationType, KindCounts>,
    pub audit_records: u64,
    pub audit_root: String,
}

impl RunCounts {
    pub fn injected(&self) -> u64 {
        self.by_kind.values().map(|k| k.injected).sum()
    }

    pub fn prevented(&self) -> u64 {
        self.by_kind.values().map(|k| k.prevented).sum()
    }

    pub fn vpr(&self) -> Option<f64> {
        let n = self.injected();
        (n > 0).then(|| self.prevented() as f64 / n as f64)
    }

    pub fn fpr(&self) -> f64 {
        if self.legitimate_flows == 0 {
            0.0
        } else {
            self.false_positive_flows as f64 / self.legitimate_flows as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    pub fn from_samples(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        Some(Self {
            samples: xs.len(),
            mean_ms: mean(xs),
            p50_ms: quantile(xs, 0.5).ok()?,
            p99_ms: quantile(xs, 0.99).ok()?,
            max_ms: xs.iter().copied().fold(f64::MIN, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub mode: EnforcementMode,
    pub injection_rate: f64,
    pub noise_epsilon: f64,
    pub runs: usize,
    pub flows_per_run: usize,
    /// Prevented / injected over all runs; absent when nothing was injected.
    pub vpr: Option<f64>,
    pub vpr_ci95: Option<ConfidenceInterval>,
    pub fpr: f64,
    pub fpr_ci95: Option<ConfidenceInterval>,
    /// Mean applied level over events that escalated (level ≥ 1).
    pub avg_level: f64,
    pub vpr_by_kind: BTreeMap<ViolationType, KindCounts>,
    pub per_run: Vec<RunCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_detection: Option<LatencySummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_e2e: Option<LatencySummary>,
}

impl MetricsReport {
    pub fn injected(&self) -> u64 {
        self.vpr_by_kind.values().map(|k| k.injected).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header() -> &'static str {
        "run,flows,injected,prevented,vpr,legitimate,false_positive,fpr,escalated,avg_level,blocked,redirected"
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::csv_header());
        s.push('\n');
        for r in &self.per_run {
            let avg = if r.escalated_events == 0 {
                0.0
            } else {
                r.level_sum as f64 / r.escalated_events as f64
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.run,
                r.flows,
                r.injected(),
                r.prevented(),
                r.vpr().map(|v| v.to_string()).unwrap_or_default(),
                r.legitimate_flows,
                r.false_positive_flows,
                r.fpr(),
                r.escalated_events,
                avg,
                r.blocked_events,
                r.redirected_events,
            ));
        }
        s
    }
}

/// Folds per-run counters into the report. Latency samples are only
/// attached when non-empty.
#[allow(clippy::too_many_arguments)]
pub fn aggregate(
    seed: u64,
    mode: EnforcementMode,
    injection_rate: f64,
    noise_epsilon: f64,
    flows_per_run: usize,
    per_run: Vec<RunCounts>,
    resamples: usize,
    detection_ms: &[f64],
    e2e_ms: &[f64],
) -> MetricsReport {
    let mut by_kind: BTreeMap<ViolationType, KindCounts> = BTreeMap::new();
    let mut level_sum = 0u64;
    let mut escalated = 0u64;
    let mut legit = 0u64;
    let mut fp = 0u64;
    for r in &per_run {
        for (k, c) in &r.by_kind {
            let e = by_kind.entry(*k).or_default();
            e.injected += c.injected;
            e.prevented += c.prevented;
        }
        level_sum += r.level_sum;
        escalated += r.escalated_events;
        legit += r.legitimate_flows;
        fp += r.false_positive_flows;
    }
    let injected: u64 = by_kind.values().map(|k| k.injected).sum();
    let prevented: u64 = by_kind.values().map(|k| k.prevented).sum();
    let vpr = (injected > 0).then(|| prevented as f64 / injected as f64);
    let run_vprs: Vec<f64> = per_run.iter().filter_map(RunCounts::vpr).collect();
    let run_fprs: Vec<f64> = per_run.iter().map(RunCounts::fpr).collect();
    let ci_seed = seed ^ 0x005e_edc1;
    MetricsReport {
        seed,
        mode,
        injection_rate,
        noise_epsilon,
        runs: per_run.len(),
        flows_per_run,
        vpr,
        vpr_ci95: bootstrap_ci(&run_vprs, resamples, 0.95, ci_seed).ok(),
        fpr: if legit == 0 {
            0.0
        } else {
            fp as f64 / legit as f64
        },
        fpr_ci95: bootstrap_ci(&run_fprs, resamples, 0.95, ci_seed.wrapping_add(1)).ok(),
        avg_level: if escalated == 0 {
            0.0
        } else {
            level_sum as f64 / escalated as f64
        },
        vpr_by_kind: by_kind,
        per_run,
        latency_detection: LatencySummary::from_samples(detection_ms),
        latency_e2e: LatencySummary::from_samples(e2e_ms),
    }
}
