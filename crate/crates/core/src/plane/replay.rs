//! Nonce replay detection with a two-generation rotating Bloom filter.
//!
//! Inserts go to the current generation; queries consult both. The current
//! generation becomes the previous one every `rotation_seconds` of event
//! time, so a key stays detectable for between one and two rotation periods.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::AgentId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: u64,
    pub false_positive_rate: f64,
    pub rotation_seconds: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 10_000_000,
            false_positive_rate: 1e-4,
            rotation_seconds: 300.0,
        }
    }
}

impl ReplayConfig {
    /// Optimal bit count m = −n ln p / (ln 2)².
    pub fn bits(&self) -> u64 {
        let n = self.capacity as f64;
        let ln2 = std::f64::consts::LN_2;
        (-(n * self.false_positive_rate.ln()) / (ln2 * ln2)).ceil() as u64
    }

    /// Optimal hash count k = (m / n) ln 2.
    pub fn hashes(&self) -> u32 {
        let k = (self.bits() as f64 / self.capacity as f64) * std::f64::consts::LN_2;
        (k.round() as u32).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ReplayVerdict {
    Fresh,
    Replay,
}

#[derive(Clone)]
pub struct Bloom {
    words: Vec<u64>,
    bits: u64,
    hashes: u32,
}

impl Bloom {
    pub fn new(bits: u64, hashes: u32) -> Self {
        Self {
            words: vec![0; bits.div_ceil(64) as usize],
            bits,
            hashes,
        }
    }

    fn positions(&self, key: &[u8; 32]) -> impl Iterator<Item = u64> + '_ {
        // Kirsch–Mitzenmacher double hashing from two halves of one digest.
        let h1 = u64::from_be_bytes(key[0..8].try_into().unwrap());
        let h2 = u64::from_be_bytes(key[8..16].try_into().unwrap()) | 1;
        (0..self.hashes as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % self.bits)
    }

    pub fn contains(&self, key: &[u8; 32]) -> bool {
        self.positions(key)
            .all(|p| self.words[(p / 64) as usize] & (1 << (p % 64)) != 0)
    }

    pub fn insert(&mut self, key: &[u8; 32]) {
        let bits = self.bits;
        let hashes = self.hashes;
        let h1 = u64::from_be_bytes(key[0..8].try_into().unwrap());
        let h2 = u64::from_be_bytes(key[8..16].try_into().unwrap()) | 1;
        for i in 0..hashes as u64 {
            let p = h1.wrapping_add(i.wrapping_mul(h2)) % bits;
            self.words[(p / 64) as usize] |= 1 << (p % 64);
        }
    }

    pub fn clear(&mut self) {
        self.words.fill(0);
    }
}

pub fn replay_key(source: &AgentId, nonce: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((source.as_str().len() as u32).to_be_bytes());
    h.update(source.as_str().as_bytes());
    h.update(nonce.to_be_bytes());
    h.finalize().into()
}

pub struct ReplayFilter {
    config: ReplayConfig,
    current: Bloom,
    previous: Bloom,
    generation_start: Option<f64>,
}

impl ReplayFilter {
    pub fn new(config: ReplayConfig) -> Self {
        let bits = config.bits();
        let hashes = config.hashes();
        Self {
            config,
            current: Bloom::new(bits, hashes),
            previous: Bloom::new(bits, hashes),
            generation_start: None,
        }
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    fn rotate_to(&mut self, now: f64) {
        let period = self.config.rotation_seconds;
        let start = *self.generation_start.get_or_insert(now);
        let elapsed = now - start;
        if elapsed < period {
            return;
        }
        let steps = (elapsed / period).floor();
        if steps >= 2.0 {
            self.current.clear();
            self.previous.clear();
        } else {
            std::mem::swap(&mut self.current, &mut self.previous);
            self.current.clear();
        }
        self.generation_start = Some(start + steps * period);
    }

    pub fn contains(&self, source: &AgentId, nonce: u64) -> bool {
        let key = replay_key(source, nonce);
        self.current.contains(&key) || self.previous.contains(&key)
    }

    /// REPLAY if (source, nonce) is probably in the window; otherwise records
    /// it and answers FRESH. `now` is event time and must not go backwards.
    pub fn check(&mut self, source: &AgentId, nonce: u64, now: f64) -> ReplayVerdict {
        self.rotate_to(now);
        let key = replay_key(source, nonce);
        if self.current.contains(&key) || self.previous.contains(&key) {
            return ReplayVerdict::Replay;
        }
        self.current.insert(&key);
        ReplayVerdict::Fresh
    }
}
