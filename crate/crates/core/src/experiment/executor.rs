use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tracing::info;

use super::governor::{EnvironmentFactory, GovernorOptions, GovernorService, GridFactory};
use super::store::{RunStore, StoreError};
use super::{RunDescriptor, RunRecord};
use crate::agents::{default_registry, StrategyRegistry};
use crate::transport::{self, Message, Peer, PeerRole, RunAssign, Transport, TransportError};

#[derive(Clone)]
pub struct ExecutorOptions {
    pub parallelism: usize,
    pub transport: Transport,
    pub timeout: Duration,
    pub registry: Arc<StrategyRegistry>,
    pub factory: Arc<dyn EnvironmentFactory>,
}

impl ExecutorOptions {
    pub fn new(parallelism: usize, transport: Transport) -> Self {
        Self {
            parallelism,
            transport,
            timeout: transport::DEFAULT_TIMEOUT,
            registry: Arc::new(default_registry()),
            factory: Arc::new(GridFactory),
        }
    }
}

/// Fans runs out to `parallelism` governors and collects their records,
/// completed and failed, in input order.
pub fn execute(
    runs: &[RunDescriptor],
    options: &ExecutorOptions,
    store: Arc<dyn RunStore>,
) -> Result<Vec<RunRecord>, StoreError> {
    let slots = options.parallelism.max(1).min(runs.len().max(1));
    let governor = GovernorOptions {
        transport: options.transport.clone(),
        timeout: options.timeout,
        registry: options.registry.clone(),
        factory: options.factory.clone(),
    };
    let mut servers = Vec::new();
    for g in 0..slots {
        let service = Arc::new(GovernorService { options: governor.clone(), store: store.clone() });
        let server = options
            .transport
            .serve(service, Peer::new(PeerRole::Governor, format!("governor/{g}")))
            .map_err(|e| StoreError::Io(std::io::Error::other(e.to_string())))?;
        servers.push(server);
    }
    let queue = Mutex::new((0..runs.len()).collect::<VecDeque<_>>());
    let fatal: Mutex<Option<StoreError>> = Mutex::new(None);
    std::thread::scope(|s| {
        for server in &servers {
            let queue = &queue;
            let fatal = &fatal;
            s.spawn(move || {
                let me = Peer::new(PeerRole::Executor, "executor");
                let mut channel = match transport::connect(server.address(), me, options.timeout) {
                    Ok(c) => c,
                    Err(e) => {
                        fatal
                            .lock()
                            .expect("fatal lock")
                            .get_or_insert(StoreError::Io(std::io::Error::other(e.to_string())));
                        return;
                    }
                };
                loop {
                    let Some(i) = queue.lock().expect("queue lock").pop_front() else { break };
                    let d = &runs[i];
                    info!(run = %d.run_id, "assigned");
                    match channel.request_with(Message::RunAssign(RunAssign { descriptor: d.clone() }), None) {
                        Ok(Message::RunComplete(c)) => info!(run = %c.run_id, status = ?c.status, "finished"),
                        Ok(_) => unreachable!("reply kind checked"),
                        Err(TransportError::Remote(e)) if e.code == "store" => {
                            let err = if e.message.contains("integrity") {
                                StoreError::Integrity(d.run_id.clone())
                            } else {
                                StoreError::Io(std::io::Error::other(e.message))
                            };
                            fatal.lock().expect("fatal lock").get_or_insert(err);
                            break;
                        }
                        Err(e) => {
                            fatal
                                .lock()
                                .expect("fatal lock")
                                .get_or_insert(StoreError::Io(std::io::Error::other(e.to_string())));
                            break;
                        }
                    }
                }
            });
        }
    });
    if let Some(e) = fatal.into_inner().expect("fatal lock") {
        return Err(e);
    }
    runs.iter()
        .map(|d| {
            store.load(&d.run_id)?.ok_or_else(|| StoreError::Corrupt {
                path: d.run_id.clone(),
                message: "governor reported completion but the store has no record".into(),
            })
        })
        .collect()
}
