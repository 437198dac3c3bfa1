//! Synthetic order-agent telemetry traces for omission detection.
//!
//! Each trace is a few order cycles. A cycle walks INIT → VALIDATE →
//! ROUTE → CONFIRM, each phase emitting its own symbols, with heartbeats
//! interleaved at random.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const ALPHABET: [&str; 7] = [
    "recv_order",
    "check_stock",
    "check_credit",
    "route_payment",
    "route_shipping",
    "confirm",
    "heartbeat",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Init,
    Validate,
    Route,
    Confirm,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Init, Phase::Validate, Phase::Route, Phase::Confirm];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "INIT",
            Phase::Validate => "VALIDATE",
            Phase::Route => "ROUTE",
            Phase::Confirm => "CONFIRM",
        }
    }

    fn symbols(self) -> &'static [&'static str] {
        match self {
            Phase::Init => &["recv_order"],
            Phase::Validate => &["check_stock", "check_credit"],
            Phase::Route => &["route_payment", "route_shipping"],
            Phase::Confirm => &["confirm"],
        }
    }

    fn burst(self) -> (usize, usize) {
        match self {
            Phase::Init | Phase::Confirm => (1, 1),
            Phase::Validate | Phase::Route => (1, 2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceShape {
    pub min_cycles: usize,
    pub max_cycles: usize,
    pub heartbeat_probability: f64,
}

impl Default for TraceShape {
    fn default() -> Self {
        Self {
            min_cycles: 2,
            max_cycles: 4,
            heartbeat_probability: 0.1,
        }
    }
}

/// One emitted symbol and the phase (and cycle) it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emission {
    pub cycle: usize,
    pub phase: Phase,
    pub symbol: &'static str,
}

pub fn generate_trace<R: Rng>(rng: &mut R, shape: &TraceShape) -> Vec<Emission> {
    let cycles = rng.gen_range(shape.min_cycles..=shape.max_cycles);
    let mut out = Vec::new();
    for cycle in 0..cycles {
        for phase in Phase::ALL {
            let (lo, hi) = phase.burst();
            for _ in 0..rng.gen_range(lo..=hi) {
                let syms = phase.symbols();
                out.push(Emission {
                    cycle,
                    phase,
                    symbol: syms[rng.gen_range(0..syms.len())],
                });
                if rng.gen::<f64>() < shape.heartbeat_probability {
                    out.push(Emission {
                        cycle,
                        phase,
                        symbol: "heartbeat",
                    });
                }
            }
        }
    }
    out
}

pub fn symbols(trace: &[Emission]) -> Vec<&'static str> {
    trace.iter().map(|e| e.symbol).collect()
}

/// Drops every emission of `phase` in one randomly chosen cycle, the
/// heartbeats emitted during it included.
pub fn delete_phase<R: Rng>(rng: &mut R, trace: &[Emission], phase: Phase) -> Vec<Emission> {
    let cycles = trace.iter().map(|e| e.cycle + 1).max().unwrap_or(0);
    if cycles == 0 {
        return Vec::new();
    }
    let victim = rng.gen_range(0..cycles);
    trace
        .iter()
        .filter(|e| !(e.cycle == victim && e.phase == phase))
        .cloned()
        .collect()
}
