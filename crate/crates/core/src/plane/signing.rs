//! Event signatures and the key registry.
//!
//! Signing and verification go through the [`EventSigner`] and
//! [`SignatureVerifier`] traits; the default implementation is ECDSA over
//! P-256 with SHA-256 message digests and deterministic (RFC 6979) nonces.

use std::collections::BTreeMap;
use std::sync::Arc;

use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::model::{AgentId, TelemetryEvent, Verified};
use crate::plane::canonical::{canonical_serialize, CanonicalError};

#[derive(Debug, Error, PartialEq)]
pub enum SigningError {
    #[error("no signing key for agent {0}")]
    MissingKey(String),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("malformed public key")]
    BadPublicKey,
}

pub trait EventSigner: Send + Sync {
    fn sign(&self, message: &[u8]) -> Vec<u8>;
    fn verifier(&self) -> Arc<dyn SignatureVerifier>;
}

pub trait SignatureVerifier: Send + Sync {
    fn verify(&self, message: &[u8], signature: &[u8]) -> bool;
    /// Encoded public key, for persistence.
    fn public_key(&self) -> Vec<u8>;
}

#[derive(Clone)]
pub struct P256Signer(SigningKey);

impl P256Signer {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self(SigningKey::random(rng))
    }
}

impl EventSigner for P256Signer {
    fn sign(&self, message: &[u8]) -> Vec<u8> {
        let sig: Signature = self.0.sign(message);
        sig.to_bytes().to_vec()
    }

    fn verifier(&self) -> Arc<dyn SignatureVerifier> {
        Arc::new(P256Verifier(*self.0.verifying_key()))
    }
}

#[derive(Clone)]
pub struct P256Verifier(VerifyingKey);

impl P256Verifier {
    /// SEC1-encoded point, compressed or not.
    pub fn from_sec1(bytes: &[u8]) -> Result<Self, SigningError> {
        VerifyingKey::from_sec1_bytes(bytes)
            .map(Self)
            .map_err(|_| SigningError::BadPublicKey)
    }
}

impl SignatureVerifier for P256Verifier {
    fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        match Signature::from_slice(signature) {
            Ok(sig) => self.0.verify(message, &sig).is_ok(),
            Err(_) => false,
        }
    }

    fn public_key(&self) -> Vec<u8> {
        self.0.to_encoded_point(true).as_bytes().to_vec()
    }
}

/// Signing keys held by the simulated agents.
#[derive(Default, Clone)]
pub struct KeyRing {
    keys: BTreeMap<AgentId, Arc<dyn EventSigner>>,
}

impl KeyRing {
    pub fn insert(&mut self, agent: AgentId, signer: Arc<dyn EventSigner>) {
        self.keys.insert(agent, signer);
    }

    pub fn get(&self, agent: &AgentId) -> Option<&Arc<dyn EventSigner>> {
        self.keys.get(agent)
    }

    /// Registers every held key as a public key in a fresh registry.
    pub fn registry(&self) -> KeyRegistry {
        let mut r = KeyRegistry::default();
        for (a, s) in &self.keys {
            r.register(a.clone(), s.verifier());
        }
        r
    }
}

struct RegistryEntry {
    verifier: Arc<dyn SignatureVerifier>,
    revoked: bool,
}

#[derive(Default)]
pub struct KeyRegistry {
    entries: BTreeMap<AgentId, RegistryEntry>,
}

impl KeyRegistry {
    pub fn register(&mut self, agent: AgentId, verifier: Arc<dyn SignatureVerifier>) {
        self.entries.insert(
            agent,
            RegistryEntry {
                verifier,
                revoked: false,
            },
        );
    }

    /// Returns false when the agent has no registered key.
    pub fn set_revoked(&mut self, agent: &AgentId, revoked: bool) -> bool {
        match self.entries.get_mut(agent) {
            Some(e) => {
                e.revoked = revoked;
                true
            }
            None => false,
        }
    }

    fn active(&self, agent: &AgentId) -> Option<&dyn SignatureVerifier> {
        self.entries
            .get(agent)
            .filter(|e| !e.revoked)
            .map(|e| e.verifier.as_ref())
    }
}

/// Signs the canonical form with the source agent's key. The verification
/// state is left as is.
pub fn sign_event(event: &TelemetryEvent, keys: &KeyRing) -> Result<TelemetryEvent, SigningError> {
    let signer = keys
        .get(&event.source)
        .ok_or_else(|| SigningError::MissingKey(event.source.to_string()))?;
    sign_with(event, signer.as_ref())
}

pub fn sign_with(
    event: &TelemetryEvent,
    signer: &dyn EventSigner,
) -> Result<TelemetryEvent, SigningError> {
    let bytes = canonical_serialize(event)?;
    let mut out = event.clone();
    out.signature = Some(signer.sign(&bytes));
    Ok(out)
}

/// TRUE iff the signature checks under the source's active key; FALSE iff
/// the key is active and the signature does not check; UNKNOWN otherwise.
pub fn verify_event(event: &TelemetryEvent, registry: &KeyRegistry) -> Verified {
    let Some(sig) = event.signature.as_deref() else {
        return Verified::Unknown;
    };
    let Some(verifier) = registry.active(&event.source) else {
        return Verified::Unknown;
    };
    match canonical_serialize(event) {
        Ok(bytes) if verifier.verify(&bytes, sig) => Verified::True,
        _ => Verified::False,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn event() -> TelemetryEvent {
        TelemetryEvent {
            timestamp: 2.0,
            source: agent("order_agent"),
            receiver: agent("payment_agent"),
            operation: "authorize_payment".into(),
            context: Context::new(),
            governance: GovernanceMetadata::new(
                Classification::Pii,
                Jurisdiction::Eu,
                Sensitivity::High,
                vec![agent("order_agent")],
            ),
            nonce: 42,
            signature: None,
        }
    }

    fn ring(seed: u64) -> KeyRing {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut r = KeyRing::default();
        r.insert(
            agent("order_agent"),
            Arc::new(P256Signer::generate(&mut rng)),
        );
        r
    }

    #[test]
    fn tri_state_verification() {
        let keys = ring(1);
        let mut reg = keys.registry();
        let signed = sign_event(&event(), &keys).unwrap();
        assert_eq!(signed.governance.verified, Verified::Unknown);
        assert_eq!(verify_event(&signed, &reg), Verified::True);

        let mut tampered = signed.clone();
        tampered.operation.push('x');
        assert_eq!(verify_event(&tampered, &reg), Verified::False);

        let mut forged = signed.clone();
        forged.signature = Some(vec![7u8; 64]);
        assert_eq!(verify_event(&forged, &reg), Verified::False);

        let other = sign_event(&event(), &ring(2)).unwrap();
        assert_eq!(verify_event(&other, &reg), Verified::False);
        assert_eq!(
            verify_event(&other, &KeyRegistry::default()),
            Verified::Unknown
        );

        assert!(reg.set_revoked(&agent("order_agent"), true));
        assert_eq!(verify_event(&signed, &reg), Verified::Unknown);
        assert!(!reg.set_revoked(&agent("nobody"), true));

        let mut unsigned = signed;
        unsigned.signature = None;
        assert_eq!(verify_event(&unsigned, &keys.registry()), Verified::Unknown);
    }

    #[test]
    fn missing_key_is_an_error() {
        let mut e = event();
        e.source = agent("payment_agent");
        assert_eq!(
            sign_event(&e, &ring(1)),
            Err(SigningError::MissingKey("payment_agent".into()))
        );
    }

    #[test]
    fn signatures_are_deterministic() {
        let a = sign_event(&event(), &ring(5)).unwrap();
        let b = sign_event(&event(), &ring(5)).unwrap();
        assert_eq!(a.signature, b.signature);
    }

    #[test]
    fn public_key_round_trip() {
        let keys = ring(3);
        let v = keys.get(&agent("order_agent")).unwrap().verifier();
        let restored = P256Verifier::from_sec1(&v.public_key()).unwrap();
        let signed = sign_event(&event(), &keys).unwrap();
        let bytes = canonical_serialize(&signed).unwrap();
        assert!(restored.verify(&bytes, signed.signature.as_ref().unwrap()));
        assert!(P256Verifier::from_sec1(&[1, 2, 3]).is_err());
    }
}
