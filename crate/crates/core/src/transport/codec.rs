use std::io::{self, Read};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{Envelope, Message, MessageKind, Peer, PROTOCOL_VERSION};

/// Upper bound on a single frame body.
pub const MAX_FRAME: usize = 256 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("truncated frame: header says {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("frame body is not JSON: {0}")]
    NotJson(String),
    #[error("frame body is not in canonical form")]
    NonCanonical,
    #[error("unsupported protocol version {0}")]
    Version(u64),
    #[error("schema violation: {0}")]
    Schema(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    version: u32,
    correlation: u64,
    kind: MessageKind,
    sender: Peer,
    payload: Value,
}

/// Canonical body bytes: keys sorted, no whitespace.
pub(crate) fn canonical(value: &Value) -> Vec<u8> {
    serde_json::to_vec(value).expect("Value always serializes")
}

pub fn encode(envelope: &Envelope) -> Result<Vec<u8>, DecodeError> {
    let payload = envelope.message.payload().map_err(|e| DecodeError::Schema(e.to_string()))?;
    let wire = Wire {
        version: envelope.version,
        correlation: envelope.correlation,
        kind: envelope.message.kind(),
        sender: envelope.sender.clone(),
        payload,
    };
    let body = canonical(&serde_json::to_value(&wire).map_err(|e| DecodeError::Schema(e.to_string()))?);
    if body.len() > MAX_FRAME {
        return Err(DecodeError::TooLarge(body.len()));
    }
    let mut frame = Vec::with_capacity(body.len() + 4);
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

pub fn decode(frame: &[u8]) -> Result<Envelope, DecodeError> {
    if frame.len() < 4 {
        return Err(DecodeError::Truncated { expected: 4, got: frame.len() });
    }
    let len = u32::from_be_bytes(frame[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(DecodeError::TooLarge(len));
    }
    let body = &frame[4..];
    if body.len() != len {
        return Err(DecodeError::Truncated { expected: len, got: body.len() });
    }
    let value: Value = serde_json::from_slice(body).map_err(|e| DecodeError::NotJson(e.to_string()))?;
    match value.get("version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        Some(v) => return Err(DecodeError::Version(v)),
        None => return Err(DecodeError::Schema("missing protocol version".into())),
    }
    if canonical(&value) != body {
        return Err(DecodeError::NonCanonical);
    }
    let wire: Wire = serde_json::from_value(value).map_err(|e| DecodeError::Schema(e.to_string()))?;
    let message = Message::from_payload(wire.kind, wire.payload)
        .map_err(|e| DecodeError::Schema(format!("{}: {e}", wire.kind.as_str())))?;
    Ok(Envelope { version: wire.version, correlation: wire.correlation, sender: wire.sender, message })
}

/// Reads one whole frame (prefix included). `Ok(None)` on a clean EOF
/// between frames.
pub(crate) fn read_frame<R: Read>(reader: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; 4];
    match reader.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "oversized frame"));
    }
    let mut frame = vec![0u8; len + 4];
    frame[..4].copy_from_slice(&header);
    reader.read_exact(&mut frame[4..])?;
    Ok(Some(frame))
}
