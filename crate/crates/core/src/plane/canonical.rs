//! Deterministic byte encoding of telemetry events, the input to signing.
//!
//! Layout (all integers big-endian, strings as u32 length + UTF-8):
//!
//! ```text
//! u8   version (1)
//! str  timestamp, shortest round-trip decimal
//! str  source
//! str  receiver
//! str  operation
//! u32  context entry count, then per entry in key order:
//!        str key, u8 tag, value
//!        tag 1 = string (str), 2 = integer (i64), 3 = real (str, shortest round-trip)
//! u8   classification code
//! u8   jurisdiction code
//! u8   sensitivity code
//! u32  lineage length, then one str per agent
//! u64  nonce
//! ```
//!
//! The verification state, flag annotations and the signature itself are not
//! part of the encoding.

use thiserror::Error;

use crate::model::{
    AgentId, Classification, Context, ContextValue, GovernanceMetadata, Jurisdiction, Sensitivity,
    TelemetryEvent,
};

pub const CANONICAL_VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CanonicalError {
    #[error("non-finite real in field {0}")]
    NonFinite(String),
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("unsupported encoding version {0}")]
    Version(u8),
    #[error("malformed field {field} at offset {offset}")]
    Malformed { field: &'static str, offset: usize },
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn real_repr(x: f64, field: &str) -> Result<String, CanonicalError> {
    if !x.is_finite() {
        return Err(CanonicalError::NonFinite(field.to_string()));
    }
    // Debug formatting of f64 is the shortest string that parses back to the
    // same value.
    Ok(format!("{x:?}"))
}

pub fn canonical_serialize(e: &TelemetryEvent) -> Result<Vec<u8>, CanonicalError> {
    let mut out = Vec::with_capacity(256);
    out.push(CANONICAL_VERSION);
    put_str(&mut out, &real_repr(e.timestamp, "timestamp")?);
    put_str(&mut out, e.source.as_str());
    put_str(&mut out, e.receiver.as_str());
    put_str(&mut out, &e.operation);
    out.extend_from_slice(&(e.context.len() as u32).to_be_bytes());
    for (k, v) in &e.context {
        put_str(&mut out, k);
        match v {
            ContextValue::Str(s) => {
                out.push(1);
                put_str(&mut out, s);
            }
            ContextValue::Int(i) => {
                out.push(2);
                out.extend_from_slice(&i.to_be_bytes());
            }
            ContextValue::Real(r) => {
                out.push(3);
                put_str(&mut out, &real_repr(*r, &format!("context.{k}"))?);
            }
        }
    }
    let g = &e.governance;
    out.push(g.classification.code());
    out.push(g.jurisdiction.code());
    out.push(g.sensitivity.code());
    out.extend_from_slice(&(g.lineage.len() as u32).to_be_bytes());
    for a in &g.lineage {
        put_str(&mut out, a.as_str());
    }
    out.extend_from_slice(&e.nonce.to_be_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CanonicalError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CanonicalError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CanonicalError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CanonicalError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CanonicalError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, field: &'static str) -> Result<String, CanonicalError> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CanonicalError::Malformed { field, offset: at })
    }

    fn real(&mut self, field: &'static str) -> Result<f64, CanonicalError> {
        let at = self.pos;
        let s = self.string(field)?;
        s.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or(CanonicalError::Malformed { field, offset: at })
    }

    fn agent(&mut self, field: &'static str) -> Result<AgentId, CanonicalError> {
        let at = self.pos;
        AgentId::new(self.string(field)?)
            .map_err(|_| CanonicalError::Malformed { field, offset: at })
    }
}

fn decode<T: Copy>(
    all: &[T],
    code: u8,
    field: &'static str,
    at: usize,
) -> Result<T, CanonicalError> {
    all.get(code as usize)
        .copied()
        .ok_or(CanonicalError::Malformed { field, offset: at })
}

/// Inverse of [`canonical_serialize`]. Verification state defaults to
/// UNKNOWN and the signature to absent.
pub fn parse_canonical(buf: &[u8]) -> Result<TelemetryEvent, CanonicalError> {
    let mut r = Reader { buf, pos: 0 };
    let v = r.u8()?;
    if v != CANONICAL_VERSION {
        return Err(CanonicalError::Version(v));
    }
    let timestamp = r.real("timestamp")?;
    let source = r.agent("source")?;
    let receiver = r.agent("receiver")?;
    let operation = r.string("operation")?;
    let n = r.u32()?;
    let mut context = Context::new();
    let mut last: Option<String> = None;
    for _ in 0..n {
        let at = r.pos;
        let key = r.string("context key")?;
        if last.as_ref().is_some_and(|l| *l >= key) {
            return Err(CanonicalError::Malformed {
                field: "context key order",
                offset: at,
            });
        }
        let tag_at = r.pos;
        let value = match r.u8()? {
            1 => ContextValue::Str(r.string("context value")?),
            2 => ContextValue::Int(i64::from_be_bytes(r.take(8)?.try_into().unwrap())),
            3 => ContextValue::Real(r.real("context value")?),
            _ => {
                return Err(CanonicalError::Malformed {
                    field: "context tag",
                    offset: tag_at,
                })
            }
        };
        last = Some(key.clone());
        context.insert(key, value);
    }
    let at = r.pos;
    let classification = decode(&Classification::ALL, r.u8()?, "classification", at)?;
    let jurisdiction = decode(&Jurisdiction::ALL, r.u8()?, "jurisdiction", at + 1)?;
    let sensitivity = decode(&Sensitivity::ALL, r.u8()?, "sensitivity", at + 2)?;
    let n = r.u32()?;
    let lineage = (0..n)
        .map(|_| r.agent("lineage"))
        .collect::<Result<Vec<_>, _>>()?;
    let nonce = r.u64()?;
    if r.pos != buf.len() {
        return Err(CanonicalError::Trailing(buf.len() - r.pos));
    }
    Ok(TelemetryEvent {
        timestamp,
        source,
        receiver,
        operation,
        context,
        governance: GovernanceMetadata::new(classification, jurisdiction, sensitivity, lineage),
        nonce,
        signature: None,
    })
}
