//! TCP backend: one thread per accepted connection, frames written
//! directly to the stream.

use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::codec::{encode, read_frame};
use super::link::{serve_connection, spawn_reader, Channel, Publisher, ServerHandle, Sink, Subscriber};
use super::{Envelope, Heartbeat, Message, MessageKind, Peer, Service, TransportError, PROTOCOL_VERSION};

type Accepted = Arc<Mutex<Vec<TcpStream>>>;

/// Accept loop shared by services and buses. Dropping the handle stops
/// the loop and shuts every accepted stream.
fn listen(addr: &str, on_accept: impl Fn(TcpStream) + Send + 'static) -> Result<ServerHandle, TransportError> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let accepted: Accepted = Arc::default();
    {
        let stop = stop.clone();
        let accepted = accepted.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let _ = stream.set_nodelay(true);
                if let Ok(clone) = stream.try_clone() {
                    accepted.lock().expect("accept lock").push(clone);
                }
                on_accept(stream);
            }
        });
    }
    let shutdown = Box::new(move || {
        stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(local);
        for s in accepted.lock().expect("accept lock").drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
    });
    Ok(ServerHandle::new(format!("tcp://{local}"), shutdown))
}

pub(crate) fn serve(addr: &str, service: Arc<dyn Service>, me: Peer) -> Result<ServerHandle, TransportError> {
    listen(addr, move |stream| {
        let service = service.clone();
        let me = me.clone();
        std::thread::spawn(move || {
            let Ok(mut reader) = stream.try_clone() else { return };
            serve_connection(service, me, move || read_frame(&mut reader).ok().flatten(), Sink::Tcp(stream));
        });
    })
}

pub(crate) fn connect(addr: &str, me: Peer, timeout: Duration) -> Result<Channel, TransportError> {
    let stream = TcpStream::connect(addr).map_err(|_| TransportError::UnknownEndpoint(format!("tcp://{addr}")))?;
    stream.set_nodelay(true)?;
    let rx = spawn_reader(stream.try_clone()?);
    Ok(Channel::new(format!("tcp://{addr}"), Sink::Tcp(stream), rx, me, timeout))
}

pub(crate) fn publisher(addr: &str, me: Peer) -> Result<Publisher, TransportError> {
    let subscribers: Arc<Mutex<Vec<Sink>>> = Arc::default();
    let subs = subscribers.clone();
    let ack_sender = me.clone();
    let handle = listen(addr, move |stream| {
        let mut sink = Sink::Tcp(stream);
        let ack = Envelope {
            version: PROTOCOL_VERSION,
            correlation: 0,
            sender: ack_sender.clone(),
            message: Message::Heartbeat(Heartbeat {}),
        };
        // acked under the bus lock so no publish falls between ack and registration
        let mut subs = subs.lock().expect("bus lock");
        if sink.send(encode(&ack).expect("heartbeat encodes")).is_ok() {
            subs.push(sink);
        }
    })?;
    Ok(Publisher { subscribers, handle, me, next: 0 })
}

pub(crate) fn subscribe(addr: &str, kinds: &[MessageKind]) -> Result<Subscriber, TransportError> {
    let stream = TcpStream::connect(addr).map_err(|_| TransportError::UnknownEndpoint(format!("tcp://{addr}")))?;
    stream.set_nodelay(true)?;
    let rx = spawn_reader(stream.try_clone()?);
    let ack = rx.recv_timeout(super::DEFAULT_TIMEOUT).map_err(|_| TransportError::Closed)?;
    let env = super::decode(&ack)?;
    if env.message.kind() != MessageKind::Heartbeat {
        return Err(TransportError::Protocol("bus did not acknowledge the subscription".into()));
    }
    Ok(Subscriber::new(rx, kinds, Some(Sink::Tcp(stream))))
}
