//! In-process backend. Endpoints live in a process-wide registry under
//! `loop://N`; frames travel over channels but go through the same codec
//! as the socket backend.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, LazyLock, Mutex};
use std::time::Duration;

use super::link::{serve_connection, Channel, Publisher, ServerHandle, Sink, Subscriber};
use super::{MessageKind, Peer, Service, TransportError};

struct Connection {
    incoming: Receiver<Vec<u8>>,
    outgoing: Sender<Vec<u8>>,
}

enum Endpoint {
    Service(Sender<Connection>),
    Bus(Arc<Mutex<Vec<Sink>>>),
}

static REGISTRY: LazyLock<Mutex<HashMap<String, Endpoint>>> = LazyLock::new(Default::default);
static NEXT: AtomicU64 = AtomicU64::new(1);

fn register(endpoint: Endpoint) -> String {
    let address = format!("loop://{}", NEXT.fetch_add(1, Ordering::Relaxed));
    REGISTRY.lock().expect("registry lock").insert(address.clone(), endpoint);
    address
}

fn unregister(address: String) -> Box<dyn FnOnce() + Send + Sync> {
    Box::new(move || {
        REGISTRY.lock().expect("registry lock").remove(&address);
    })
}

pub(crate) fn serve(service: Arc<dyn Service>, me: Peer) -> Result<ServerHandle, TransportError> {
    let (tx, rx) = mpsc::channel::<Connection>();
    let address = register(Endpoint::Service(tx));
    std::thread::spawn(move || {
        for conn in rx {
            let service = service.clone();
            let me = me.clone();
            std::thread::spawn(move || {
                let incoming = conn.incoming;
                serve_connection(service, me, move || incoming.recv().ok(), Sink::Loop(conn.outgoing));
            });
        }
    });
    Ok(ServerHandle::new(address.clone(), unregister(address)))
}

pub(crate) fn connect(address: &str, me: Peer, timeout: Duration) -> Result<Channel, TransportError> {
    let registry = REGISTRY.lock().expect("registry lock");
    let Some(Endpoint::Service(accept)) = registry.get(address) else {
        return Err(TransportError::UnknownEndpoint(address.to_string()));
    };
    let (to_server, incoming) = mpsc::channel();
    let (outgoing, from_server) = mpsc::channel();
    accept.send(Connection { incoming, outgoing }).map_err(|_| TransportError::UnknownEndpoint(address.to_string()))?;
    Ok(Channel::new(address.to_string(), Sink::Loop(to_server), from_server, me, timeout))
}

pub(crate) fn publisher(me: Peer) -> Result<Publisher, TransportError> {
    let subscribers = Arc::new(Mutex::new(Vec::new()));
    let address = register(Endpoint::Bus(subscribers.clone()));
    Ok(Publisher { subscribers, handle: ServerHandle::new(address.clone(), unregister(address)), me, next: 0 })
}

pub(crate) fn subscribe(address: &str, kinds: &[MessageKind]) -> Result<Subscriber, TransportError> {
    let registry = REGISTRY.lock().expect("registry lock");
    let Some(Endpoint::Bus(subs)) = registry.get(address) else {
        return Err(TransportError::UnknownEndpoint(address.to_string()));
    };
    let (tx, rx) = mpsc::channel();
    subs.lock().expect("bus lock").push(Sink::Loop(tx));
    Ok(Subscriber::new(rx, kinds, None))
}
