//! Conductor and worker processes of one agent.
//!
//! Workers act and collect experience; at the end of a round each hands
//! its batch to the conductor, which owns the only mutator. In sync mode
//! the conductor waits for all workers, merges their batches in worker-id
//! order and trains once; in async mode it trains on every batch that is
//! built on the current parameters. New parameters go out both as the
//! reply to the batch and on the conductor's bus.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{debug, warn};

use super::{
    mutate, ActContext, AgentError, ExperienceBatch, ParameterUpdate, Parameters, Strategy, StrategyMutator,
    StrategyRegistry, Transition,
};
use crate::environment::AgentInterface;
use crate::experiment::derive_seed;
use crate::spaces::{ActuatorSetpoint, SensorReading};
use crate::transport::{
    self, ActResponse, ActionEntry, Channel, Envelope, Heartbeat, Message, MessageKind, Peer, PeerRole, Publisher,
    ServerHandle, Service, SpawnWorkers, Subscriber, Transport, TransportError, WorkerSlot,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    #[default]
    Sync,
    Async,
}

#[derive(Debug, Clone)]
pub struct ConductorConfig {
    pub agent: String,
    pub kind: String,
    /// Resolved hyperparameters.
    pub hyper: Value,
    pub seed: u64,
    pub workers: u32,
    pub mode: UpdateMode,
    pub timeout: Duration,
}

struct ConductorState {
    params: Parameters,
    mutator: Box<dyn StrategyMutator>,
    publisher: Publisher,
    pending: BTreeMap<u32, ExperienceBatch>,
    /// Bumped whenever a sync barrier releases.
    epoch: u64,
    workers: BTreeMap<u32, Worker>,
    generations: BTreeMap<u32, u32>,
    respawns: u32,
}

struct ConductorShared {
    config: ConductorConfig,
    registry: Arc<StrategyRegistry>,
    transport: Transport,
    address: OnceLock<String>,
    state: Mutex<ConductorState>,
    released: Condvar,
}

pub struct Conductor {
    shared: Arc<ConductorShared>,
    server: ServerHandle,
}

impl Conductor {
    pub fn start(
        config: ConductorConfig,
        registry: Arc<StrategyRegistry>,
        transport: Transport,
    ) -> Result<Self, TransportError> {
        let setup = |e: AgentError| TransportError::Protocol(format!("agent {}: {e}", config.agent));
        if config.workers == 0 {
            return Err(setup(AgentError::Interface("at least one worker is required".into())));
        }
        let entry = registry.get(&config.kind).map_err(setup)?;
        let params = (entry.strategy)(&config.hyper, config.seed).map_err(setup)?.parameters().clone();
        let mutator = (entry.mutator)(&config.hyper).map_err(setup)?;
        let publisher = transport.publisher(Peer::new(PeerRole::Bus, format!("{}/bus", config.agent)))?;
        let me = Peer::new(PeerRole::Conductor, config.agent.clone());
        let shared = Arc::new(ConductorShared {
            config,
            registry,
            transport: transport.clone(),
            address: OnceLock::new(),
            state: Mutex::new(ConductorState {
                params,
                mutator,
                publisher,
                pending: BTreeMap::new(),
                epoch: 0,
                workers: BTreeMap::new(),
                generations: BTreeMap::new(),
                respawns: 0,
            }),
            released: Condvar::new(),
        });
        let server = transport.serve(Arc::new(ConductorService(shared.clone())), me)?;
        shared.address.set(server.address().to_string()).expect("set once");
        Ok(Self { shared, server })
    }

    pub fn address(&self) -> &str {
        self.server.address()
    }

    pub fn parameters(&self) -> Parameters {
        self.shared.state.lock().expect("conductor lock").params.clone()
    }

    /// Number of workers replaced after a crash.
    pub fn respawns(&self) -> u32 {
        self.shared.state.lock().expect("conductor lock").respawns
    }

    /// Parameter version currently held by each live worker.
    pub fn worker_versions(&self) -> BTreeMap<u32, u64> {
        let state = self.shared.state.lock().expect("conductor lock");
        state.workers.iter().map(|(id, w)| (*id, w.version())).collect()
    }
}

impl Drop for Conductor {
    fn drop(&mut self) {
        // workers hold channels back to this conductor; break the cycle
        let workers = std::mem::take(&mut self.shared.state.lock().expect("conductor lock").workers);
        drop(workers);
    }
}

struct ConductorService(Arc<ConductorShared>);

impl ConductorShared {
    fn update_message(&self, params: &Parameters) -> Message {
        Message::ParameterUpdate(ParameterUpdate {
            agent: self.config.agent.clone(),
            mutator: self.config.kind.clone(),
            parameters: params.clone(),
        })
    }

    fn train(&self, state: &mut ConductorState, batches: &[ExperienceBatch]) -> Result<(), AgentError> {
        match mutate(state.mutator.as_mut(), &self.config.kind, batches, &state.params) {
            Ok(update) => {
                state.params = update.parameters;
                let reached = state.publisher.publish(self.update_message(&state.params));
                debug!(agent = %self.config.agent, version = state.params.version, ?reached, "parameters published");
                Ok(())
            }
            // nothing learned this round; versions stay put
            Err(AgentError::EmptyBatch) => Ok(()),
            Err(e) => Err(e),
        }
    }

    fn spawn(&self, request: &SpawnWorkers) -> Message {
        if request.agent != self.config.agent {
            return Message::error("unknown_agent", format!("conductor serves {}", self.config.agent));
        }
        let mut state = self.state.lock().expect("conductor lock");
        let mut slots = Vec::new();
        for slot in &request.workers {
            if slot.id >= self.config.workers {
                return Message::error("bad_worker", format!("worker {} out of range", slot.id));
            }
            let generation = match state.generations.get(&slot.id).copied() {
                Some(g) => {
                    warn!(agent = %self.config.agent, worker = slot.id, "replacing worker");
                    state.respawns += 1;
                    g + 1
                }
                None => 0,
            };
            state.generations.insert(slot.id, generation);
            state.pending.remove(&slot.id);
            let seed = derive_seed(self.config.seed, &format!("worker/{}/{generation}", slot.id));
            let worker = match Worker::start(
                &self.config,
                slot.id,
                seed,
                &state.params,
                &self.registry,
                &self.transport,
                self.address.get().expect("serving"),
                state.publisher.address(),
            ) {
                Ok(w) => w,
                Err(e) => return Message::error("spawn_failed", e.to_string()),
            };
            slots.push(WorkerSlot { id: slot.id, endpoint: Some(worker.address().to_string()) });
            state.workers.insert(slot.id, worker);
        }
        Message::SpawnWorkers(SpawnWorkers { agent: self.config.agent.clone(), workers: slots })
    }

    fn batch(&self, batch: &ExperienceBatch) -> Message {
        if batch.agent != self.config.agent {
            return Message::error("unknown_agent", format!("conductor serves {}", self.config.agent));
        }
        let mut state = self.state.lock().expect("conductor lock");
        if batch.base_version != state.params.version {
            // stale base: resend what is current instead of training on it
            debug!(agent = %self.config.agent, worker = batch.worker, "stale batch");
            return self.update_message(&state.params);
        }
        match self.config.mode {
            UpdateMode::Async => {
                if let Err(e) = self.train(&mut state, std::slice::from_ref(batch)) {
                    return Message::error("mutator", e.to_string());
                }
                self.update_message(&state.params)
            }
            UpdateMode::Sync => {
                state.pending.insert(batch.worker, batch.clone());
                if state.pending.len() as u32 >= self.config.workers {
                    let batches: Vec<_> = std::mem::take(&mut state.pending).into_values().collect();
                    let result = self.train(&mut state, &batches);
                    state.epoch += 1;
                    self.released.notify_all();
                    return match result {
                        Ok(()) => self.update_message(&state.params),
                        Err(e) => Message::error("mutator", e.to_string()),
                    };
                }
                let epoch = state.epoch;
                let (mut state, timeout) = self
                    .released
                    .wait_timeout_while(state, self.config.timeout, |s| s.epoch == epoch)
                    .expect("conductor lock");
                if timeout.timed_out() {
                    state.pending.remove(&batch.worker);
                    return Message::error("sync_timeout", "not all workers delivered their batch");
                }
                self.update_message(&state.params)
            }
        }
    }
}

impl Service for ConductorService {
    fn handle(&self, request: &Envelope) -> Message {
        match &request.message {
            Message::SpawnWorkers(s) => self.0.spawn(s),
            Message::ExperienceBatch(b) => self.0.batch(b),
            Message::Heartbeat(_) => Message::Heartbeat(Heartbeat {}),
            other => Message::error("unsupported", format!("conductor does not handle {}", other.kind().as_str())),
        }
    }
}

struct WorkerState {
    strategy: Box<dyn Strategy>,
    conductor: Channel,
    updates: Subscriber,
    interface: Option<AgentInterface>,
    in_flight: BTreeMap<u32, (Vec<SensorReading>, Vec<ActuatorSetpoint>)>,
    transitions: Vec<Transition>,
}

struct WorkerShared {
    agent: String,
    id: u32,
    state: Mutex<WorkerState>,
}

/// One acting replica of an agent's strategy.
pub struct Worker {
    shared: Arc<WorkerShared>,
    server: ServerHandle,
}

impl Worker {
    #[allow(clippy::too_many_arguments)]
    fn start(
        config: &ConductorConfig,
        id: u32,
        seed: u64,
        params: &Parameters,
        registry: &StrategyRegistry,
        transport: &Transport,
        conductor: &str,
        bus: &str,
    ) -> Result<Self, TransportError> {
        let entry = registry.get(&config.kind).map_err(|e| TransportError::Protocol(e.to_string()))?;
        let mut strategy =
            (entry.strategy)(&config.hyper, seed).map_err(|e| TransportError::Protocol(e.to_string()))?;
        strategy
            .apply_update(&ParameterUpdate {
                agent: config.agent.clone(),
                mutator: config.kind.clone(),
                parameters: params.clone(),
            })
            .map_err(|e| TransportError::Protocol(e.to_string()))?;
        let me = Peer::new(PeerRole::Worker, format!("{}/{id}", config.agent));
        let updates = transport::subscribe(bus, &[MessageKind::ParameterUpdate])?;
        let conductor = transport::connect(conductor, me.clone(), config.timeout)?;
        let shared = Arc::new(WorkerShared {
            agent: config.agent.clone(),
            id,
            state: Mutex::new(WorkerState {
                strategy,
                conductor,
                updates,
                interface: None,
                in_flight: BTreeMap::new(),
                transitions: Vec::new(),
            }),
        });
        let server = transport.serve(Arc::new(WorkerService(shared.clone())), me)?;
        Ok(Self { shared, server })
    }

    pub fn address(&self) -> &str {
        self.server.address()
    }

    pub fn version(&self) -> u64 {
        match self.shared.state.lock() {
            Ok(s) => s.strategy.parameters().version,
            Err(poisoned) => poisoned.into_inner().strategy.parameters().version,
        }
    }
}

struct WorkerService(Arc<WorkerShared>);

impl WorkerShared {
    fn adopt(&self, state: &mut WorkerState, update: &ParameterUpdate) -> Result<(), AgentError> {
        if update.agent == self.agent {
            state.strategy.apply_update(update)?;
        }
        Ok(())
    }

    fn drain_updates(&self, state: &mut WorkerState) -> Result<(), AgentError> {
        while let Ok(Some(env)) = state.updates.try_recv() {
            if let Message::ParameterUpdate(u) = env.message {
                self.adopt(state, &u)?;
            }
        }
        Ok(())
    }

    fn act(&self, request: &transport::ActRequest) -> Result<Message, AgentError> {
        let mut state = self.state.lock().expect("worker lock");
        self.drain_updates(&mut state)?;
        if let Some(i) = &request.interface {
            state.interface = Some(i.clone());
        }
        let interface =
            state.interface.clone().ok_or_else(|| AgentError::Interface("no interface received yet".into()))?;
        let ctx = ActContext { round: request.round, rounds: request.rounds, step: request.step };
        let mut actions = Vec::with_capacity(request.entries.len());
        for entry in &request.entries {
            let setpoints = state.strategy.propose_actions(&ctx, &entry.readings, &interface)?;
            state.in_flight.insert(entry.env, (entry.readings.clone(), setpoints.clone()));
            actions.push(ActionEntry {
                env: entry.env,
                agent: self.agent.clone(),
                version: state.strategy.parameters().version,
                setpoints,
            });
        }
        Ok(Message::ActResponse(ActResponse { actions }))
    }

    fn observe(&self, result: &transport::EnvStepResult) -> Result<Message, String> {
        let mut state = self.state.lock().expect("worker lock");
        for entry in &result.entries {
            let (readings, setpoints) = state
                .in_flight
                .remove(&entry.env)
                .ok_or_else(|| format!("no action in flight for env {}", entry.env))?;
            let reward = *entry.outcome.rewards.get(&self.agent).ok_or("reward missing")?;
            let next_readings = entry.outcome.readings.get(&self.agent).cloned().ok_or("readings missing")?;
            state.transitions.push(Transition {
                env: entry.env,
                step: entry.outcome.step,
                readings,
                setpoints,
                reward,
                next_readings,
                terminal: entry.outcome.terminated,
            });
        }
        if result.round_complete {
            let mut transitions = std::mem::take(&mut state.transitions);
            transitions.sort_by_key(|t| (t.env, t.step));
            state.in_flight.clear();
            let batch = ExperienceBatch {
                agent: self.agent.clone(),
                worker: self.id,
                round: result.round,
                base_version: state.strategy.parameters().version,
                interface: state.interface.clone().ok_or("no interface received yet")?,
                transitions,
            };
            let reply = state.conductor.request(Message::ExperienceBatch(batch)).map_err(|e| e.to_string())?;
            if let Message::ParameterUpdate(u) = reply {
                self.adopt(&mut state, &u).map_err(|e| e.to_string())?;
            }
        }
        Ok(Message::Heartbeat(Heartbeat {}))
    }
}

impl Service for WorkerService {
    fn handle(&self, request: &Envelope) -> Message {
        match &request.message {
            Message::ActRequest(r) => self.0.act(r).unwrap_or_else(|e| {
                let m = Message::error("strategy", e.to_string());
                if let (Message::Error(mut reply), AgentError::Capability { id, .. } | AgentError::Reading { id }) =
                    (m.clone(), &e)
                {
                    reply.detail.insert("id".into(), id.clone());
                    return Message::Error(reply);
                }
                m
            }),
            Message::EnvStepResult(r) => self.0.observe(r).unwrap_or_else(|e| Message::error("worker", e)),
            Message::Heartbeat(_) => Message::Heartbeat(Heartbeat {}),
            other => Message::error("unsupported", format!("worker does not handle {}", other.kind().as_str())),
        }
    }
}
