//! Deterministic multi-agent e-commerce simulation: flow generation with
//! violation injection, enforcement under a chosen mode, metrics, and attack
//! campaigns against the trusted plane.

pub mod attack;
pub mod config;
pub mod metrics;
pub mod runner;
pub mod scenario;
pub mod traces;

pub use config::{AgentSpec, Role, ScenarioConfig};
pub use metrics::{KindCounts, MetricsReport, RunCounts};
pub use runner::{run_scenario, sensitivity_sweep, SweepRow, SweepTable};
pub use scenario::{generate_run, Flow};
