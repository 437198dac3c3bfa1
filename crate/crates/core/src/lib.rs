//! Closed-loop governance enforcement for signed multi-agent telemetry.
//!
//! The crate is organised along the enforcement pipeline: domain types in
//! [`model`], the policy algebra in [`policy`] and its declarative rule
//! format in [`rules`], graduated escalation in [`escalation`], telemetry
//! integrity in [`plane`], omission detection in [`hmm`], the pipeline
//! itself in [`bus`], and the simulation and validation harnesses in
//! [`sim`] and [`montecarlo`].

pub mod bus;
pub mod escalation;
pub mod hmm;
pub mod io;
pub mod model;
pub mod montecarlo;
pub mod plane;
pub mod policy;
pub mod rules;
pub mod sim;
pub mod stats;

pub use model::{
    AgentId, Capability, Classification, ContextValue, GovernanceMetadata, Jurisdiction,
    MultiAgentSystem, Sensitivity, TelemetryEvent, Verified, ViolationType,
};
pub use policy::{Decision, EnforcementActionKind, Policy};
