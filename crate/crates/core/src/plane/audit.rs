//! Append-only Merkle audit log.
//!
//! File layout (integers big-endian):
//!
//! ```text
//! header: b"TGAUDLOG" | u16 version = 1 | u16 flags = 0 | u16 key_len | key (SEC1)
//! frame:  u64 index | u32 record_len | record | u16 sig_len | sig | [u8; 32] root_after
//! ```
//!
//! Leaves hash the frame fields before `root_after` with a 0x00 prefix;
//! interior nodes hash `0x01 | left | right`. A level with an odd number of
//! nodes pairs its last node with itself. The empty log's root is
//! SHA-256 of the empty string.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::plane::signing::{P256Verifier, SignatureVerifier};

pub const MAGIC: &[u8; 8] = b"TGAUDLOG";
pub const VERSION: u16 = 1;

pub type Hash = [u8; 32];

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit storage failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("record too large ({0} bytes)")]
    TooLarge(usize),
    #[error("existing log is not intact: {0:?}")]
    NotIntact(ChainReport),
}

pub fn empty_root() -> Hash {
    Sha256::digest([]).into()
}

pub fn node_hash(l: &Hash, r: &Hash) -> Hash {
    let mut h = Sha256::new();
    h.update([0x01]);
    h.update(l);
    h.update(r);
    h.finalize().into()
}

fn frame_body(index: u64, record: &[u8], sig: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(14 + record.len() + sig.len());
    b.extend_from_slice(&index.to_be_bytes());
    b.extend_from_slice(&(record.len() as u32).to_be_bytes());
    b.extend_from_slice(record);
    b.extend_from_slice(&(sig.len() as u16).to_be_bytes());
    b.extend_from_slice(sig);
    b
}

pub fn leaf_hash(frame_body: &[u8]) -> Hash {
    let mut h = Sha256::new();
    h.update([0x00]);
    h.update(frame_body);
    h.finalize().into()
}

/// Root over a full leaf list, level by level. Used as the reference
/// computation and for inclusion proofs.
pub fn root_of(leaves: &[Hash]) -> Hash {
    if leaves.is_empty() {
        return empty_root();
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|p| node_hash(&p[0], p.get(1).unwrap_or(&p[0])))
            .collect();
    }
    level[0]
}

/// Incremental Merkle accumulator. `levels[i]` holds the nodes of level i
/// built from complete pairs only; the root folds in the unpaired tails.
#[derive(Debug, Clone, Default)]
pub struct MerkleAccumulator {
    levels: Vec<Vec<Hash>>,
}

impl MerkleAccumulator {
    pub fn len(&self) -> usize {
        self.levels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaves(&self) -> &[Hash] {
        self.levels.first().map_or(&[], Vec::as_slice)
    }

    pub fn push(&mut self, leaf: Hash) {
        let mut node = leaf;
        let mut i = 0;
        loop {
            if self.levels.len() == i {
                self.levels.push(Vec::new());
            }
            self.levels[i].push(node);
            let n = self.levels[i].len();
            if n % 2 == 1 {
                break;
            }
            node = node_hash(&self.levels[i][n - 2], &self.levels[i][n - 1]);
            i += 1;
        }
    }

    pub fn root(&self) -> Hash {
        if self.is_empty() {
            return empty_root();
        }
        let mut carry: Option<Hash> = None;
        for (i, level) in self.levels.iter().enumerate() {
            let total = level.len() + carry.is_some() as usize;
            let is_top = i + 1 == self.levels.len();
            if total == 1 && is_top {
                return carry.unwrap_or(level[0]);
            }
            carry = match (level.len() % 2 == 1, carry) {
                (true, Some(c)) => Some(node_hash(level.last().unwrap(), &c)),
                (true, None) => {
                    let x = level.last().unwrap();
                    Some(node_hash(x, x))
                }
                (false, Some(c)) => Some(node_hash(&c, &c)),
                (false, None) => None,
            };
        }
        // Top level had one complete node plus a carry from below.
        carry.expect("non-empty tree always yields a root")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclusionProof {
    pub index: u64,
    /// Sibling hashes bottom-up, with whether the sibling sits on the left.
    pub path: Vec<(Hash, bool)>,
}

pub fn prove(leaves: &[Hash], index: usize) -> Option<InclusionProof> {
    if index >= leaves.len() {
        return None;
    }
    let mut path = Vec::new();
    let mut level = leaves.to_vec();
    let mut i = index;
    while level.len() > 1 {
        let sib = if i % 2 == 0 {
            (i + 1).min(level.len() - 1)
        } else {
            i - 1
        };
        path.push((level[sib], i % 2 == 1));
        level = level
            .chunks(2)
            .map(|p| node_hash(&p[0], p.get(1).unwrap_or(&p[0])))
            .collect();
        i /= 2;
    }
    Some(InclusionProof {
        index: index as u64,
        path,
    })
}

pub fn verify_inclusion(leaf: &Hash, proof: &InclusionProof, root: &Hash) -> bool {
    let mut h = *leaf;
    for (sib, left) in &proof.path {
        h = if *left {
            node_hash(sib, &h)
        } else {
            node_hash(&h, sib)
        };
    }
    h == *root
}

enum Sink {
    Memory(Vec<u8>),
    File(BufWriter<File>),
}

pub struct AuditLog {
    tree: MerkleAccumulator,
    sink: Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AppendReceipt {
    pub index: u64,
    pub leaf: Hash,
    pub root: Hash,
}

fn header(key: &[u8]) -> Vec<u8> {
    let mut h = Vec::with_capacity(14 + key.len());
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&VERSION.to_be_bytes());
    h.extend_from_slice(&0u16.to_be_bytes());
    h.extend_from_slice(&(key.len() as u16).to_be_bytes());
    h.extend_from_slice(key);
    h
}

impl AuditLog {
    /// Log kept in memory. `key` is the SEC1 public key of the record
    /// signer, or empty for unsigned records.
    pub fn in_memory(key: &[u8]) -> Self {
        Self {
            tree: MerkleAccumulator::default(),
            sink: Sink::Memory(header(key)),
        }
    }

    /// Creates (or truncates) a log file.
    pub fn create(path: &Path, key: &[u8]) -> Result<Self, AuditError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&header(key))?;
        Ok(Self {
            tree: MerkleAccumulator::default(),
            sink: Sink::File(w),
        })
    }

    /// Opens an existing intact log for further appends.
    pub fn open_append(path: &Path) -> Result<Self, AuditError> {
        let bytes = std::fs::read(path)?;
        let (report, leaves) = scan(&bytes);
        if !matches!(report, ChainReport::Ok { .. }) {
            return Err(AuditError::NotIntact(report));
        }
        let mut tree = MerkleAccumulator::default();
        for l in leaves {
            tree.push(l);
        }
        let f = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            tree,
            sink: Sink::File(BufWriter::new(f)),
        })
    }

    pub fn len(&self) -> u64 {
        self.tree.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn root(&self) -> Hash {
        self.tree.root()
    }

    pub fn append(&mut self, record: &[u8], signature: &[u8]) -> Result<AppendReceipt, AuditError> {
        if record.len() > u32::MAX as usize {
            return Err(AuditError::TooLarge(record.len()));
        }
        if signature.len() > u16::MAX as usize {
            return Err(AuditError::TooLarge(signature.len()));
        }
        let index = self.len();
        let body = frame_body(index, record, signature);
        let leaf = leaf_hash(&body);
        let mut next = self.tree.clone_for_append();
        next.push(leaf);
        let root = next.root();
        match &mut self.sink {
            Sink::Memory(buf) => {
                buf.extend_from_slice(&body);
                buf.extend_from_slice(&root);
            }
            Sink::File(w) => {
                w.write_all(&body)?;
                w.write_all(&root)?;
            }
        }
        self.tree = next;
        Ok(AppendReceipt { index, leaf, root })
    }

    pub fn prove(&self, index: u64) -> Option<InclusionProof> {
        prove(self.tree.leaves(), index as usize)
    }

    pub fn leaf(&self, index: u64) -> Option<Hash> {
        self.tree.leaves().get(index as usize).copied()
    }

    /// Serialized log for in-memory logs.
    pub fn bytes(&self) -> Option<&[u8]> {
        match &self.sink {
            Sink::Memory(b) => Some(b),
            Sink::File(_) => None,
        }
    }

    pub fn flush(&mut self) -> Result<(), AuditError> {
        if let Sink::File(w) = &mut self.sink {
            w.flush()?;
        }
        Ok(())
    }
}

impl MerkleAccumulator {
    fn clone_for_append(&self) -> Self {
        // Appends touch only the tail of each level; cloning the whole tree
        // keeps the log unchanged if the write fails.
        self.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainReport {
    Ok { records: u64, root: String },
    Tampered { index: u64, reason: String },
    Truncated { index: u64, offset: u64 },
    BadHeader { reason: String },
}

impl ChainReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainReport::Ok { .. })
    }
}

pub fn verify_chain(bytes: &[u8]) -> ChainReport {
    scan(bytes).0
}

pub fn verify_file(path: &Path) -> Result<ChainReport, std::io::Error> {
    Ok(verify_chain(&std::fs::read(path)?))
}

/// Record-signer key stored in a log header; empty for unsigned logs.
pub fn header_key(bytes: &[u8]) -> Option<&[u8]> {
    if bytes.len() < 14 || &bytes[..8] != MAGIC {
        return None;
    }
    let key_len = u16::from_be_bytes([bytes[12], bytes[13]]) as usize;
    bytes.get(14..14 + key_len)
}

fn scan(bytes: &[u8]) -> (ChainReport, Vec<Hash>) {
    let bad = |reason: &str| {
        (
            ChainReport::BadHeader {
                reason: reason.to_string(),
            },
            Vec::new(),
        )
    };
    if bytes.len() < 14 || &bytes[..8] != MAGIC {
        return bad("missing magic");
    }
    let version = u16::from_be_bytes([bytes[8], bytes[9]]);
    if version != VERSION {
        return bad("unsupported version");
    }
    if bytes[10] != 0 || bytes[11] != 0 {
        return bad("unknown flags");
    }
    let key_len = u16::from_be_bytes([bytes[12], bytes[13]]) as usize;
    let Some(key) = bytes.get(14..14 + key_len) else {
        return bad("truncated key");
    };
    let verifier = if key.is_empty() {
        None
    } else {
        match P256Verifier::from_sec1(key) {
            Ok(v) => Some(v),
            Err(_) => return bad("malformed key"),
        }
    };

    let mut tree = MerkleAccumulator::default();
    let mut pos = 14 + key_len;
    let mut index = 0u64;
    while pos < bytes.len() {
        let start = pos;
        let truncated = (
            ChainReport::Truncated {
                index,
                offset: start as u64,
            },
            Vec::new(),
        );
        let rest = &bytes[pos..];
        if rest.len() < 12 {
            return truncated;
        }
        let stored_index = u64::from_be_bytes(rest[0..8].try_into().unwrap());
        let rec_len = u32::from_be_bytes(rest[8..12].try_into().unwrap()) as usize;
        let Some(after_rec) = 12usize
            .checked_add(rec_len)
            .filter(|&e| e + 2 <= rest.len())
        else {
            return truncated;
        };
        let sig_len = u16::from_be_bytes([rest[after_rec], rest[after_rec + 1]]) as usize;
        let body_end = after_rec + 2 + sig_len;
        if body_end + 32 > rest.len() {
            return truncated;
        }
        let body = &rest[..body_end];
        let stored_root: Hash = rest[body_end..body_end + 32].try_into().unwrap();
        let tampered = |reason: &str| {
            (
                ChainReport::Tampered {
                    index,
                    reason: reason.to_string(),
                },
                Vec::new(),
            )
        };
        if stored_index != index {
            return tampered("index mismatch");
        }
        tree.push(leaf_hash(body));
        if tree.root() != stored_root {
            return tampered("root mismatch");
        }
        if let Some(v) = &verifier {
            let record = &rest[12..12 + rec_len];
            let sig = &rest[after_rec + 2..body_end];
            if !v.verify(record, sig) {
                return tampered("bad record signature");
            }
        }
        pos += body_end + 32;
        index += 1;
    }
    let root = hex::encode(tree.root());
    let leaves = tree.leaves().to_vec();
    (
        ChainReport::Ok {
            records: index,
            root,
        },
        leaves,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaves(n: usize) -> Vec<Hash> {
        (0..n)
            .map(|i| leaf_hash(&frame_body(i as u64, &[i as u8], &[])))
            .collect()
    }

    #[test]
    fn incremental_root_matches_reference() {
        let all = leaves(70);
        let mut acc = MerkleAccumulator::default();
        assert_eq!(acc.root(), empty_root());
        for (n, l) in all.iter().enumerate() {
            acc.push(*l);
            assert_eq!(acc.root(), root_of(&all[..=n]), "n={}", n + 1);
        }
    }

    #[test]
    fn single_leaf_root_is_leaf() {
        let all = leaves(1);
        assert_eq!(root_of(&all), all[0]);
        let mut log = AuditLog::in_memory(&[]);
        let r = log.append(b"x", b"").unwrap();
        assert_eq!(r.root, r.leaf);
    }

    #[test]
    fn proofs_verify_on_eight_leaves() {
        let all = leaves(8);
        let root = root_of(&all);
        for i in 0..8 {
            let p = prove(&all, i).unwrap();
            assert!(verify_inclusion(&all[i], &p, &root));
            assert!(!verify_inclusion(&all[(i + 1) % 8], &p, &root));
        }
        let odd = leaves(5);
        let root = root_of(&odd);
        for i in 0..5 {
            assert!(verify_inclusion(&odd[i], &prove(&odd, i).unwrap(), &root));
        }
        assert!(prove(&odd, 5).is_none());
    }

    #[test]
    fn every_byte_flip_is_detected() {
        let mut log = AuditLog::in_memory(&[]);
        for i in 0..6u8 {
            log.append(&[b'r', i, i, i], &[i; 3]).unwrap();
        }
        let clean = log.bytes().unwrap().to_vec();
        assert!(verify_chain(&clean).is_ok());
        for pos in 0..clean.len() {
            let mut t = clean.clone();
            t[pos] ^= 0x01;
            assert!(!verify_chain(&t).is_ok(), "flip at {pos} undetected");
        }
    }

    #[test]
    fn truncation_and_empty() {
        let log = AuditLog::in_memory(&[]);
        let empty = log.bytes().unwrap().to_vec();
        assert_eq!(
            verify_chain(&empty),
            ChainReport::Ok {
                records: 0,
                root: hex::encode(empty_root())
            }
        );
        let mut log = AuditLog::in_memory(&[]);
        log.append(b"abc", b"").unwrap();
        log.append(b"def", b"").unwrap();
        let b = log.bytes().unwrap();
        match verify_chain(&b[..b.len() - 5]) {
            ChainReport::Truncated { index, .. } => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            verify_chain(b"nope"),
            ChainReport::BadHeader { .. }
        ));
    }
}
