use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;

use super::*;
use crate::agents::{ParameterUpdate, Parameters};
use crate::spaces::{ActuatorSetpoint, SensorReading, SpaceValue};

struct Echo {
    calls: AtomicUsize,
}

impl Service for Echo {
    fn handle(&self, request: &Envelope) -> Message {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &request.message {
            Message::Heartbeat(_) => Message::Heartbeat(Heartbeat {}),
            Message::ActRequest(r) => Message::ActResponse(ActResponse {
                actions: r
                    .entries
                    .iter()
                    .map(|e| ActionEntry {
                        env: e.env,
                        agent: "echo".into(),
                        version: r.step,
                        setpoints: vec![ActuatorSetpoint {
                            id: "a000".into(),
                            value: SpaceValue::Discrete(e.env as i64),
                        }],
                    })
                    .collect(),
            }),
            Message::EnvReset(_) => panic!("boom"),
            Message::SpawnWorkers(_) => Message::Heartbeat(Heartbeat {}),
            Message::EnvStepResult(_) => {
                std::thread::sleep(Duration::from_millis(300));
                Message::Heartbeat(Heartbeat {})
            }
            _ => Message::error("unsupported", "echo only handles a few kinds"),
        }
    }
}

fn me() -> Peer {
    Peer::new(PeerRole::Governor, "g")
}

fn envelope(message: Message) -> Envelope {
    Envelope { version: PROTOCOL_VERSION, correlation: 7, sender: me(), message }
}

fn act_request(step: u64) -> Message {
    Message::ActRequest(ActRequest {
        round: 0,
        rounds: 1,
        step,
        interface: None,
        entries: vec![ActEntry {
            env: 2,
            readings: vec![SensorReading { id: "s000".into(), value: SpaceValue::scalar(0.97) }],
        }],
    })
}

fn update(version: u64) -> Message {
    Message::ParameterUpdate(ParameterUpdate {
        agent: "a".into(),
        mutator: "m".into(),
        parameters: Parameters { kind: "random".into(), version, data: serde_json::Value::Null },
    })
}

#[test]
fn heartbeat_is_the_minimal_frame() {
    let frame = encode(&envelope(Message::Heartbeat(Heartbeat {}))).unwrap();
    let body = std::str::from_utf8(&frame[4..]).unwrap();
    assert_eq!(
        body,
        r#"{"correlation":7,"kind":"heartbeat","payload":{},"sender":{"id":"g","role":"governor"},"version":1}"#
    );
    assert_eq!(u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize, body.len());
}

#[test]
fn decode_rejects_bad_frames() {
    let frame = encode(&envelope(act_request(3))).unwrap();
    assert!(matches!(decode(&frame[..frame.len() - 1]), Err(DecodeError::Truncated { .. })));
    assert!(matches!(decode(&frame[..2]), Err(DecodeError::Truncated { .. })));

    let retag = |from: &str, to: &str| {
        let body = std::str::from_utf8(&frame[4..]).unwrap().replace(from, to);
        let mut f = (body.len() as u32).to_be_bytes().to_vec();
        f.extend_from_slice(body.as_bytes());
        f
    };
    assert_eq!(decode(&retag(r#""version":1"#, r#""version":2"#)), Err(DecodeError::Version(2)));
    assert_eq!(decode(&retag(r#""step":3"#, r#""step": 3"#)), Err(DecodeError::NonCanonical));
    assert!(matches!(decode(&retag("act_request", "act_response")), Err(DecodeError::Schema(_))));
    assert!(matches!(decode(&retag(r#""step":3"#, r#""step":-3"#)), Err(DecodeError::Schema(_))));
}

#[test]
fn every_request_kind_has_one_reply_kind() {
    let requests: Vec<_> = MessageKind::ALL.iter().filter(|k| k.reply_kind().is_some()).collect();
    assert_eq!(requests.len(), 8);
    assert_eq!(MessageKind::ActRequest.reply_kind(), Some(MessageKind::ActResponse));
    assert_eq!(MessageKind::Error.reply_kind(), None);
}

proptest! {
    #[test]
    fn frames_round_trip_bit_exactly(step in any::<u64>(), v in -1e6f64..1e6, corr in any::<u64>(), env in any::<u32>()) {
        let msg = Message::ActRequest(ActRequest {
            round: 1,
            rounds: 2,
            step,
            interface: None,
            entries: vec![ActEntry { env, readings: vec![SensorReading { id: "s001".into(), value: SpaceValue::scalar(v) }] }],
        });
        let e = Envelope { version: PROTOCOL_VERSION, correlation: corr, sender: me(), message: msg };
        let frame = encode(&e).unwrap();
        let back = decode(&frame).unwrap();
        prop_assert_eq!(&back, &e);
        prop_assert_eq!(encode(&back).unwrap(), frame);
    }
}

fn exercise(transport: Transport) {
    let service = Arc::new(Echo { calls: AtomicUsize::new(0) });
    let server = transport.serve(service.clone(), Peer::new(PeerRole::Worker, "w0")).unwrap();
    let mut ch = connect(server.address(), me(), Duration::from_secs(5)).unwrap();

    for step in 0..20 {
        match ch.request(act_request(step)).unwrap() {
            Message::ActResponse(r) => {
                assert_eq!(r.actions[0].version, step, "per-pair FIFO");
                assert_eq!(r.actions[0].env, 2);
            }
            other => panic!("{other:?}"),
        }
    }
    assert!(matches!(ch.request(Message::Heartbeat(Heartbeat {})), Ok(Message::Heartbeat(_))));
    match ch.request(Message::EnvReset(EnvReset { round: 0 })) {
        Err(TransportError::Remote(e)) => assert_eq!(e.code, "panic"),
        other => panic!("{other:?}"),
    }
    match ch.request(Message::SpawnWorkers(SpawnWorkers { agent: "a".into(), workers: vec![] })) {
        Err(TransportError::Remote(e)) => assert_eq!(e.code, "bad_reply"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(ch.request(update(1)), Err(TransportError::Protocol(_))));

    let slow = ch.request_with(
        Message::EnvStepResult(EnvStepResult { round: 0, round_complete: false, entries: vec![] }),
        Some(Duration::from_millis(20)),
    );
    assert!(matches!(&slow, Err(e) if e.is_retriable()));
    // the late reply is skipped, not mistaken for the next one
    assert!(matches!(ch.request(act_request(99)), Ok(Message::ActResponse(r)) if r.actions[0].version == 99));

    let mut bus = transport.publisher(Peer::new(PeerRole::Bus, "bus")).unwrap();
    let mut first = subscribe(bus.address(), &[MessageKind::ParameterUpdate]).unwrap();
    let mut again = subscribe(bus.address(), &[MessageKind::ParameterUpdate]).unwrap();
    assert_eq!(bus.publish(Message::Heartbeat(Heartbeat {})).unwrap(), 2);
    assert_eq!(bus.publish(update(1)).unwrap(), 2);
    for sub in [&mut first, &mut again] {
        let got = sub.recv_timeout(Duration::from_secs(5)).unwrap();
        assert_eq!(got.message, update(1));
    }
    assert!(first.try_recv().unwrap().is_none());

    drop(ch);
    drop(server);
}

#[test]
fn loopback_request_reply_and_bus() {
    exercise(Transport::loopback());
    let server = Transport::loopback().serve(Arc::new(Echo { calls: AtomicUsize::new(0) }), me()).unwrap();
    let address = server.address().to_string();
    drop(server);
    assert!(matches!(connect(&address, me(), Duration::from_secs(1)), Err(TransportError::UnknownEndpoint(_))));
}

#[test]
fn socket_request_reply_and_bus() {
    exercise(Transport::socket(&["tcp://127.0.0.1:0".to_string()]).unwrap());
}

#[test]
fn socket_endpoints_are_parsed() {
    assert!(Transport::socket(&[]).is_err());
    assert!(Transport::socket(&["127.0.0.1:0".into()]).is_err());
    assert!(Transport::socket(&["tcp://localhost:x".into()]).is_err());
    assert!(connect("udp://x", me(), Duration::from_secs(1)).is_err());
    assert!(matches!(
        connect("loop://999999999", me(), Duration::from_secs(1)),
        Err(TransportError::UnknownEndpoint(_))
    ));
}
