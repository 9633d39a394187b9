use std::io::Write;
use std::net::{Shutdown, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::codec::{decode, encode, read_frame};
use super::{Envelope, Message, MessageKind, Peer, Service, TransportError, PROTOCOL_VERSION};

/// Outgoing half of a connection.
pub(crate) enum Sink {
    Loop(mpsc::Sender<Vec<u8>>),
    Tcp(TcpStream),
}

impl Sink {
    pub(crate) fn send(&mut self, frame: Vec<u8>) -> Result<(), TransportError> {
        match self {
            Sink::Loop(tx) => tx.send(frame).map_err(|_| TransportError::Closed),
            Sink::Tcp(s) => s.write_all(&frame).map_err(|_| TransportError::Closed),
        }
    }
}

impl Drop for Sink {
    fn drop(&mut self) {
        if let Sink::Tcp(s) = self {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

/// Reads frames off a stream on a background thread.
pub(crate) fn spawn_reader(mut stream: TcpStream) -> Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        while let Ok(Some(frame)) = read_frame(&mut stream) {
            if tx.send(frame).is_err() {
                break;
            }
        }
    });
    rx
}

fn recv(
    rx: &Receiver<Vec<u8>>,
    deadline: Option<Instant>,
    timeout: Option<Duration>,
) -> Result<Vec<u8>, TransportError> {
    match deadline {
        None => rx.recv().map_err(|_| TransportError::Closed),
        Some(d) => {
            let left = d.saturating_duration_since(Instant::now());
            rx.recv_timeout(left).map_err(|e| match e {
                RecvTimeoutError::Timeout => TransportError::Timeout(timeout.unwrap_or_default()),
                RecvTimeoutError::Disconnected => TransportError::Closed,
            })
        }
    }
}

/// Client side of a request/reply connection. One outstanding request at
/// a time; replies are matched by correlation id.
pub struct Channel {
    address: String,
    sink: Sink,
    rx: Receiver<Vec<u8>>,
    me: Peer,
    next: u64,
    timeout: Duration,
}

impl Channel {
    pub(crate) fn new(address: String, sink: Sink, rx: Receiver<Vec<u8>>, me: Peer, timeout: Duration) -> Self {
        Self { address, sink, rx, me, next: 0, timeout }
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn request(&mut self, message: Message) -> Result<Message, TransportError> {
        self.request_with(message, Some(self.timeout))
    }

    /// `timeout = None` waits indefinitely.
    pub fn request_with(&mut self, message: Message, timeout: Option<Duration>) -> Result<Message, TransportError> {
        let expected = message
            .kind()
            .reply_kind()
            .ok_or_else(|| TransportError::Protocol(format!("{} is not a request kind", message.kind().as_str())))?;
        self.next += 1;
        let correlation = self.next;
        let envelope = Envelope { version: PROTOCOL_VERSION, correlation, sender: self.me.clone(), message };
        self.sink.send(encode(&envelope)?)?;
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            let reply = decode(&recv(&self.rx, deadline, timeout)?)?;
            if reply.correlation < correlation {
                // late reply to a request that already timed out
                continue;
            }
            if reply.correlation != correlation {
                return Err(TransportError::Protocol(format!(
                    "reply correlation {} for request {correlation}",
                    reply.correlation
                )));
            }
            return match reply.message {
                Message::Error(e) => Err(TransportError::Remote(e)),
                m if m.kind() == expected => Ok(m),
                m => Err(TransportError::Protocol(format!(
                    "{} answered with {}",
                    envelope.message.kind().as_str(),
                    m.kind().as_str()
                ))),
            };
        }
    }
}

fn dispatch(service: &dyn Service, request: &Envelope) -> Message {
    let kind = request.message.kind();
    let Some(expected) = kind.reply_kind() else {
        return Message::error("not_a_request", format!("{} is not a request kind", kind.as_str()));
    };
    match catch_unwind(AssertUnwindSafe(|| service.handle(request))) {
        Ok(m) if m.kind() == expected || m.kind() == MessageKind::Error => m,
        Ok(m) => Message::error("bad_reply", format!("{} answered with {}", kind.as_str(), m.kind().as_str())),
        Err(panic) => {
            let what = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            Message::error("panic", what)
        }
    }
}

/// Serves one connection until the peer goes away.
pub(crate) fn serve_connection(
    service: Arc<dyn Service>,
    me: Peer,
    mut next_frame: impl FnMut() -> Option<Vec<u8>>,
    mut sink: Sink,
) {
    while let Some(frame) = next_frame() {
        let (correlation, reply) = match decode(&frame) {
            Ok(request) => (request.correlation, dispatch(service.as_ref(), &request)),
            Err(e) => (0, Message::error("decode", e.to_string())),
        };
        let mut envelope = Envelope { version: PROTOCOL_VERSION, correlation, sender: me.clone(), message: reply };
        let frame = match encode(&envelope) {
            Ok(f) => f,
            Err(e) => {
                envelope.message = Message::error("encode", e.to_string());
                encode(&envelope).expect("error replies encode")
            }
        };
        if sink.send(frame).is_err() {
            break;
        }
    }
}

/// A bound endpoint. Dropping it stops accepting new connections.
pub struct ServerHandle {
    address: String,
    shutdown: Option<Box<dyn FnOnce() + Send + Sync>>,
}

impl ServerHandle {
    pub(crate) fn new(address: String, shutdown: Box<dyn FnOnce() + Send + Sync>) -> Self {
        Self { address, shutdown: Some(shutdown) }
    }

    pub fn address(&self) -> &str {
        &self.address
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(f) = self.shutdown.take() {
            f();
        }
    }
}

/// Fan-out side of a bus. Delivery is at-least-once to every live
/// subscriber; consumers must be idempotent.
pub struct Publisher {
    pub(crate) subscribers: Arc<Mutex<Vec<Sink>>>,
    pub(crate) handle: ServerHandle,
    pub(crate) me: Peer,
    pub(crate) next: u64,
}

impl Publisher {
    pub fn address(&self) -> &str {
        self.handle.address()
    }

    /// Returns the number of subscribers reached.
    pub fn publish(&mut self, message: Message) -> Result<usize, TransportError> {
        self.next += 1;
        let frame =
            encode(&Envelope { version: PROTOCOL_VERSION, correlation: self.next, sender: self.me.clone(), message })?;
        let mut subs = self.subscribers.lock().expect("bus lock");
        subs.retain_mut(|s| s.send(frame.clone()).is_ok());
        Ok(subs.len())
    }
}

pub struct Subscriber {
    rx: Receiver<Vec<u8>>,
    kinds: Vec<MessageKind>,
    _keep: Option<Sink>,
}

impl Subscriber {
    pub(crate) fn new(rx: Receiver<Vec<u8>>, kinds: &[MessageKind], keep: Option<Sink>) -> Self {
        Self { rx, kinds: kinds.to_vec(), _keep: keep }
    }

    fn accept(&self, frame: Vec<u8>) -> Result<Option<Envelope>, TransportError> {
        let env = decode(&frame)?;
        Ok(self.kinds.contains(&env.message.kind()).then_some(env))
    }

    /// Next queued message, if any. `Closed` once the publisher is gone
    /// and the queue is drained.
    pub fn try_recv(&mut self) -> Result<Option<Envelope>, TransportError> {
        loop {
            match self.rx.try_recv() {
                Ok(frame) => {
                    if let Some(env) = self.accept(frame)? {
                        return Ok(Some(env));
                    }
                }
                Err(TryRecvError::Empty) => return Ok(None),
                Err(TryRecvError::Disconnected) => return Err(TransportError::Closed),
            }
        }
    }

    pub fn recv_timeout(&mut self, timeout: Duration) -> Result<Envelope, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            let frame = recv(&self.rx, Some(deadline), Some(timeout))?;
            if let Some(env) = self.accept(frame)? {
                return Ok(env);
            }
        }
    }
}
