//! Message passing between executor, governors, conductors, workers and
//! environments.
//!
//! Wire format: a 4-byte big-endian length followed by a canonical JSON
//! envelope (sorted keys, shortest round-trip floats, no whitespace). Two
//! backends share it: an in-process loopback (`loop://N`) and TCP
//! (`tcp://host:port`).

mod codec;
mod link;
mod loopback;
mod messages;
mod socket;

use std::sync::atomic::{AtomicU16, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{decode, encode, DecodeError, MAX_FRAME};
pub use link::{Channel, Publisher, ServerHandle, Subscriber};
pub use messages::*;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerRole {
    Executor,
    Governor,
    Conductor,
    Worker,
    Environment,
    Bus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Peer {
    pub role: PeerRole,
    pub id: String,
}

impl Peer {
    pub fn new(role: PeerRole, id: impl Into<String>) -> Self {
        Self { role, id: id.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub version: u32,
    pub correlation: u64,
    pub sender: Peer,
    pub message: Message,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("peer closed the connection")]
    Closed,
    #[error("no endpoint at {0}")]
    UnknownEndpoint(String),
    #[error("bad endpoint {0}")]
    BadEndpoint(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("remote error {}: {}", .0.code, .0.message)]
    Remote(ErrorReply),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl TransportError {
    /// Timeouts may succeed on retry; everything else means the peer or
    /// the conversation is unusable.
    pub fn is_retriable(&self) -> bool {
        matches!(self, TransportError::Timeout(_))
    }
}

/// Request handler behind an endpoint. Replies of the wrong kind are
/// replaced by an `Error` reply before they reach the wire.
pub trait Service: Send + Sync + 'static {
    fn handle(&self, request: &Envelope) -> Message;
}

/// Where services and buses get bound.
#[derive(Debug, Clone)]
pub enum Transport {
    Loopback,
    Socket { hosts: Vec<(String, u16)>, offset: Arc<AtomicU16> },
}

impl Transport {
    pub fn loopback() -> Self {
        Transport::Loopback
    }

    /// Binds round-robin over `endpoints` (`tcp://host:port`). Port 0 picks
    /// an ephemeral port; a fixed port is used as the base of a
    /// sequential range.
    pub fn socket(endpoints: &[String]) -> Result<Self, TransportError> {
        if endpoints.is_empty() {
            return Err(TransportError::BadEndpoint("socket transport needs at least one endpoint".into()));
        }
        let hosts = endpoints
            .iter()
            .map(|e| {
                let rest = e.strip_prefix("tcp://").ok_or_else(|| TransportError::BadEndpoint(e.clone()))?;
                let (host, port) = rest.rsplit_once(':').ok_or_else(|| TransportError::BadEndpoint(e.clone()))?;
                let port = port.parse::<u16>().map_err(|_| TransportError::BadEndpoint(e.clone()))?;
                Ok((host.to_string(), port))
            })
            .collect::<Result<Vec<_>, TransportError>>()?;
        Ok(Transport::Socket { hosts, offset: Arc::new(AtomicU16::new(0)) })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Transport::Loopback => "loopback",
            Transport::Socket { .. } => "socket",
        }
    }

    fn next_bind(&self) -> Option<String> {
        match self {
            Transport::Loopback => None,
            Transport::Socket { hosts, offset } => {
                let k = offset.fetch_add(1, Ordering::Relaxed);
                let (host, base) = &hosts[k as usize % hosts.len()];
                let port = if *base == 0 { 0 } else { base.wrapping_add(k / hosts.len() as u16) };
                Some(format!("{host}:{port}"))
            }
        }
    }

    pub fn serve(&self, service: Arc<dyn Service>, me: Peer) -> Result<ServerHandle, TransportError> {
        match self.next_bind() {
            None => loopback::serve(service, me),
            Some(addr) => socket::serve(&addr, service, me),
        }
    }

    pub fn publisher(&self, me: Peer) -> Result<Publisher, TransportError> {
        match self.next_bind() {
            None => loopback::publisher(me),
            Some(addr) => socket::publisher(&addr, me),
        }
    }
}

/// Opens a request channel to `address`; the scheme picks the backend.
pub fn connect(address: &str, me: Peer, timeout: Duration) -> Result<Channel, TransportError> {
    if address.starts_with("loop://") {
        loopback::connect(address, me, timeout)
    } else if let Some(rest) = address.strip_prefix("tcp://") {
        socket::connect(rest, me, timeout)
    } else {
        Err(TransportError::BadEndpoint(address.to_string()))
    }
}

/// Subscribes to a bus; only messages of `kinds` are delivered.
pub fn subscribe(address: &str, kinds: &[MessageKind]) -> Result<Subscriber, TransportError> {
    if address.starts_with("loop://") {
        loopback::subscribe(address, kinds)
    } else if let Some(rest) = address.strip_prefix("tcp://") {
        socket::subscribe(rest, kinds)
    } else {
        Err(TransportError::BadEndpoint(address.to_string()))
    }
}

#[cfg(test)]
mod tests;
