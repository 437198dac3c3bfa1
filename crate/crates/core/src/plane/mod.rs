//! Telemetry integrity: canonical encoding, signatures, replay detection and
//! the tamper-evident audit log.

pub mod audit;
pub mod canonical;
pub mod replay;
pub mod signing;

pub use audit::{AuditLog, ChainReport, InclusionProof};
pub use canonical::{canonical_serialize, parse_canonical, CanonicalError};
pub use replay::{ReplayConfig, ReplayFilter, ReplayVerdict};
pub use signing::{sign_event, verify_event, KeyRegistry, KeyRing, SigningError};
