//! The run governor: instantiates environments, conductors and workers for
//! one descriptor, paces the tournament and persists every step.
//!
//! Episodes of all environment instances advance in lock-step. Instance
//! `e` is served by worker `e mod n` of an agent with `n` workers.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use tracing::{info, warn};

use super::plan::ExperimentPlan;
use super::record::{EpisodeOutcome, RecordFooter, RecordHeader, RunRecord, RunStatus, StepRecord};
use super::store::{RunStore, StoreError};
use super::RunDescriptor;
use crate::agents::{Conductor, ConductorConfig, StrategyRegistry};
use crate::ctf::LedgerSnapshot;
use crate::environment::{
    AgentInterface, AgentReadings, EnvError, Environment, GridEnvConfig, GridEnvironment, JointActions, Role,
    StepOutcome,
};
use crate::protection::EventLog;
use crate::transport::{
    self, ActEntry, ActRequest, ActResponse, Channel, EnvReset, EnvResetResult, EnvStepEntry, EnvStepResult, Envelope,
    ErrorReply, Heartbeat, Message, Peer, PeerRole, RunComplete, Service, SpawnWorkers, Transport, TransportError,
    WorkerSlot,
};

/// Builds the environment instances of a run.
pub trait EnvironmentFactory: Send + Sync {
    fn create(&self, descriptor: &RunDescriptor) -> Result<Box<dyn Environment>, EnvError>;
}

/// The simulated grid, as described by the descriptor.
pub struct GridFactory;

impl EnvironmentFactory for GridFactory {
    fn create(&self, d: &RunDescriptor) -> Result<Box<dyn Environment>, EnvError> {
        let grid = ExperimentPlan::load_grid(&d.environment.grid, None, d.seeds["grid"]).map_err(EnvError::Config)?;
        let config = GridEnvConfig {
            grid,
            constraints: d.environment.constraints,
            power_flow: d.environment.power_flow,
            horizon: d.environment.horizon,
        };
        let specs: Vec<_> = d.agents.iter().map(|a| a.wiring_spec()).collect();
        Ok(Box::new(GridEnvironment::new(config, &specs)?))
    }
}

#[derive(Clone)]
pub struct GovernorOptions {
    pub transport: Transport,
    pub timeout: Duration,
    pub registry: Arc<StrategyRegistry>,
    pub factory: Arc<dyn EnvironmentFactory>,
}

struct EnvService {
    index: u32,
    env: Mutex<Box<dyn Environment>>,
    round: Mutex<u32>,
}

impl EnvService {
    fn error(e: &EnvError) -> Message {
        let mut reply = ErrorReply::new("environment", e.to_string());
        if let EnvError::InvalidSetpoint { agent, actuator, .. } = e {
            reply = reply.with("agent", agent.clone()).with("actuator", actuator.clone());
        }
        Message::Error(reply)
    }
}

impl Service for EnvService {
    fn handle(&self, request: &Envelope) -> Message {
        let mut env = self.env.lock().expect("env lock");
        match &request.message {
            Message::EnvReset(r) => {
                *self.round.lock().expect("round lock") = r.round;
                match env.reset() {
                    Ok(outcome) => Message::EnvResetResult(EnvResetResult { env: self.index, outcome }),
                    Err(e) => Self::error(&e),
                }
            }
            Message::ActResponse(r) => {
                let mut joint = JointActions::new();
                for a in &r.actions {
                    if a.env != self.index {
                        return Message::error(
                            "environment",
                            format!("action for env {} sent to env {}", a.env, self.index),
                        );
                    }
                    if joint.insert(a.agent.clone(), a.setpoints.clone()).is_some() {
                        return Message::error("environment", format!("two action sets for agent {}", a.agent));
                    }
                }
                match env.step(&joint) {
                    Ok(outcome) => Message::EnvStepResult(EnvStepResult {
                        round: *self.round.lock().expect("round lock"),
                        round_complete: false,
                        entries: vec![EnvStepEntry { env: self.index, outcome }],
                    }),
                    Err(e) => Self::error(&e),
                }
            }
            Message::Heartbeat(_) => Message::Heartbeat(Heartbeat {}),
            other => Message::error("unsupported", format!("environment does not handle {}", other.kind().as_str())),
        }
    }
}

struct AgentRuntime {
    name: String,
    conductor: Conductor,
    control: Channel,
    workers: Vec<Channel>,
    needs_interface: Vec<bool>,
    respawns: u32,
}

struct RunFailure(String);

/// Setpoints per agent with the parameter version that produced them.
type StepActions = (JointActions, BTreeMap<String, u64>);
type Setup = (Vec<Channel>, Vec<AgentRuntime>, Vec<crate::environment::AgentWiring>);

impl From<TransportError> for RunFailure {
    fn from(e: TransportError) -> Self {
        RunFailure(e.to_string())
    }
}

impl From<StoreError> for RunFailure {
    fn from(e: StoreError) -> Self {
        RunFailure(e.to_string())
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Sends one request per channel, concurrently when there are several.
fn fan_out(requests: Vec<(&mut Channel, Message)>) -> Vec<Result<Message, TransportError>> {
    if requests.len() <= 1 {
        return requests.into_iter().map(|(ch, m)| ch.request(m)).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = requests.into_iter().map(|(ch, m)| s.spawn(move || ch.request(m))).collect();
        handles.into_iter().map(|h| h.join().expect("request thread")).collect()
    })
}

/// Agent-private slice of a step outcome; events stay with the governor.
fn slice_for(agent: &str, outcome: &StepOutcome) -> StepOutcome {
    let pick = |m: &AgentReadings| {
        m.iter().filter(|(k, _)| k.as_str() == agent).map(|(k, v)| (k.clone(), v.clone())).collect()
    };
    StepOutcome {
        step: outcome.step,
        readings: pick(&outcome.readings),
        rewards: outcome.rewards.iter().filter(|(k, _)| k.as_str() == agent).map(|(k, v)| (k.clone(), *v)).collect(),
        events: EventLog::default(),
        ledger: outcome.ledger,
        terminated: outcome.terminated,
        unclamped: BTreeMap::new(),
    }
}

struct Governor<'a> {
    d: &'a RunDescriptor,
    options: &'a GovernorOptions,
    store: &'a dyn RunStore,
    envs: Vec<Channel>,
    agents: Vec<AgentRuntime>,
    steps: Vec<StepRecord>,
    invalid: bool,
}

impl Governor<'_> {
    fn respawn(&mut self, a: usize, w: usize, why: &str) -> Result<(), RunFailure> {
        let agent = &mut self.agents[a];
        warn!(run = %self.d.run_id, agent = %agent.name, worker = w, %why, "worker lost; requesting a replacement");
        let reply = agent.control.request(Message::SpawnWorkers(SpawnWorkers {
            agent: agent.name.clone(),
            workers: vec![WorkerSlot { id: w as u32, endpoint: None }],
        }))?;
        let Message::SpawnWorkers(s) = reply else { unreachable!("reply kind checked by the channel") };
        let endpoint = s.workers.first().and_then(|s| s.endpoint.clone()).ok_or(RunFailure("no endpoint".into()))?;
        agent.workers[w] =
            transport::connect(&endpoint, Peer::new(PeerRole::Governor, self.d.run_id.clone()), self.options.timeout)?;
        agent.needs_interface[w] = true;
        agent.respawns += 1;
        self.invalid = true;
        Ok(())
    }

    fn heartbeat(&mut self) -> Result<(), RunFailure> {
        let mut all: Vec<&mut Channel> = self.envs.iter_mut().collect();
        for a in &mut self.agents {
            all.push(&mut a.control);
            all.extend(a.workers.iter_mut());
        }
        for ch in all {
            let address = ch.address().to_string();
            ch.request(Message::Heartbeat(Heartbeat {}))
                .map_err(|e| RunFailure(format!("peer {address} unreachable: {e}")))?;
        }
        Ok(())
    }

    /// Collects setpoints for every active environment from every agent.
    fn act(
        &mut self,
        round: u32,
        step: u64,
        active: &[bool],
        readings: &[AgentReadings],
        interfaces: &BTreeMap<String, AgentInterface>,
    ) -> Result<Vec<StepActions>, RunFailure> {
        let rounds = self.d.environment.rounds;
        let mut joint: Vec<StepActions> = vec![Default::default(); active.len()];
        let build = |agent: &AgentRuntime, w: usize| -> Option<ActRequest> {
            let n = agent.workers.len();
            let entries: Vec<ActEntry> = (0..active.len())
                .filter(|e| active[*e] && e % n == w)
                .map(|e| ActEntry { env: e as u32, readings: readings[e][&agent.name].clone() })
                .collect();
            (!entries.is_empty()).then(|| ActRequest {
                round,
                rounds,
                step,
                interface: (step == 0 || agent.needs_interface[w]).then(|| interfaces[&agent.name].clone()),
                entries,
            })
        };
        let mut requests = Vec::new();
        for (a, agent) in self.agents.iter().enumerate() {
            for w in 0..agent.workers.len() {
                if let Some(r) = build(agent, w) {
                    requests.push((a, w, r));
                }
            }
        }
        let replies = {
            let mut by_channel: Vec<Option<&mut Channel>> = Vec::new();
            let mut index = BTreeMap::new();
            for (a, agent) in self.agents.iter_mut().enumerate() {
                for (w, ch) in agent.workers.iter_mut().enumerate() {
                    index.insert((a, w), by_channel.len());
                    by_channel.push(Some(ch));
                }
            }
            let batch: Vec<_> = requests
                .iter()
                .map(|(a, w, r)| {
                    (
                        by_channel[index[&(*a, *w)]].take().expect("one request per worker"),
                        Message::ActRequest(r.clone()),
                    )
                })
                .collect();
            fan_out(batch)
        };
        for ((a, w, request), reply) in requests.into_iter().zip(replies) {
            let reply = match reply {
                Ok(m) => m,
                Err(e) => {
                    // a crashed worker gets one replacement attempt for this request
                    self.respawn(a, w, &e.to_string())?;
                    let mut retry = request.clone();
                    retry.interface = Some(interfaces[&self.agents[a].name].clone());
                    self.agents[a].workers[w].request(Message::ActRequest(retry))?
                }
            };
            self.agents[a].needs_interface[w] = false;
            let Message::ActResponse(ActResponse { actions }) = reply else { unreachable!("reply kind checked") };
            let agent = &self.agents[a];
            let mut expected: Vec<u32> = request.entries.iter().map(|e| e.env).collect();
            for action in actions {
                let slot = expected.iter().position(|e| *e == action.env);
                if action.agent != agent.name || slot.is_none() {
                    return Err(RunFailure(format!(
                        "worker {}/{w} answered for env {} as {}",
                        agent.name, action.env, action.agent
                    )));
                }
                expected.remove(slot.expect("checked"));
                let (j, versions) = &mut joint[action.env as usize];
                j.insert(agent.name.clone(), action.setpoints);
                versions.insert(agent.name.clone(), action.version);
            }
            if !expected.is_empty() {
                return Err(RunFailure(format!("worker {}/{w} skipped envs {expected:?}", agent.name)));
            }
        }
        Ok(joint)
    }

    fn run(&mut self) -> Result<RecordFooter, RunFailure> {
        let n_env = self.envs.len();
        let horizon = self.d.environment.horizon;
        let mut episodes = Vec::new();
        for round in 0..self.d.environment.rounds {
            self.heartbeat()?;
            let mut readings = Vec::with_capacity(n_env);
            let mut interfaces = BTreeMap::new();
            for ch in &mut self.envs {
                let Message::EnvResetResult(r) = ch.request(Message::EnvReset(EnvReset { round }))? else {
                    unreachable!("reply kind checked")
                };
                interfaces = r.outcome.interfaces;
                readings.push(r.outcome.readings);
            }
            let mut active = vec![true; n_env];
            let mut last_ledger =
                vec![
                    LedgerSnapshot { defender: crate::ctf::INITIAL_BALANCE, attacker: crate::ctf::MilliCoins::ZERO };
                    n_env
                ];
            let mut steps_taken = vec![0u64; n_env];
            for step in 0..horizon {
                let joint = self.act(round, step, &active, &readings, &interfaces)?;
                let mut outcomes: Vec<Option<StepOutcome>> = vec![None; n_env];
                for e in (0..n_env).filter(|e| active[*e]) {
                    let (actions, versions) = &joint[e];
                    let message = Message::ActResponse(ActResponse {
                        actions: actions
                            .iter()
                            .map(|(agent, setpoints)| transport::ActionEntry {
                                env: e as u32,
                                agent: agent.clone(),
                                version: versions[agent],
                                setpoints: setpoints.clone(),
                            })
                            .collect(),
                    });
                    let reply = self.envs[e].request(message).map_err(|err| match err {
                        TransportError::Remote(r) => {
                            RunFailure(format!("env {e} rejected step {step}: {} {:?}", r.message, r.detail))
                        }
                        other => other.into(),
                    })?;
                    let Message::EnvStepResult(mut r) = reply else { unreachable!("reply kind checked") };
                    let outcome = r.entries.pop().ok_or(RunFailure("empty step result".into()))?.outcome;
                    let record = StepRecord {
                        round,
                        env: e as u32,
                        step,
                        readings: readings[e].clone(),
                        setpoints: actions.clone(),
                        versions: versions.clone(),
                        rewards: outcome.rewards.clone(),
                        events: outcome.events.clone(),
                        ledger: outcome.ledger,
                        terminated: outcome.terminated,
                        unclamped: outcome.unclamped.clone(),
                    };
                    self.store.append(&self.d.run_id, &record)?;
                    self.steps.push(record);
                    last_ledger[e] = outcome.ledger;
                    steps_taken[e] = step + 1;
                    readings[e] = outcome.readings.clone();
                    outcomes[e] = Some(outcome);
                }
                for e in 0..n_env {
                    if let Some(o) = &outcomes[e] {
                        active[e] = !o.terminated;
                    }
                }
                let round_complete = active.iter().all(|a| !a);
                let mut requests = Vec::new();
                for agent in &mut self.agents {
                    let n = agent.workers.len();
                    let name = agent.name.clone();
                    for (w, ch) in agent.workers.iter_mut().enumerate() {
                        let entries = (0..n_env)
                            .filter(|e| e % n == w)
                            .filter_map(|e| {
                                outcomes[e]
                                    .as_ref()
                                    .map(|o| EnvStepEntry { env: e as u32, outcome: slice_for(&name, o) })
                            })
                            .collect();
                        requests.push((ch, Message::EnvStepResult(EnvStepResult { round, round_complete, entries })));
                    }
                }
                for reply in fan_out(requests) {
                    reply?;
                }
                if round_complete {
                    break;
                }
            }
            for e in 0..n_env {
                let winner = if last_ledger[e].defender.0 == 0 { Role::Attacker } else { Role::Defender };
                episodes.push(EpisodeOutcome {
                    round,
                    env: e as u32,
                    steps: steps_taken[e],
                    ledger: last_ledger[e],
                    winner,
                });
            }
            info!(run = %self.d.run_id, round, "round complete");
        }
        let totals = LedgerSnapshot {
            defender: crate::ctf::MilliCoins(episodes.iter().map(|e| e.ledger.defender.0).sum()),
            attacker: crate::ctf::MilliCoins(episodes.iter().map(|e| e.ledger.attacker.0).sum()),
        };
        let attacker_wins = episodes.iter().filter(|e| e.winner == Role::Attacker).count();
        let winner = if attacker_wins * 2 > episodes.len() { Role::Attacker } else { Role::Defender };
        Ok(RecordFooter {
            status: if self.invalid { RunStatus::Invalid } else { RunStatus::Completed },
            episodes,
            totals,
            winner,
            respawns: self.agents.iter().map(|a| (a.name.clone(), a.respawns)).collect(),
            parameter_versions: self
                .agents
                .iter()
                .map(|a| (a.name.clone(), a.conductor.worker_versions().into_values().collect()))
                .collect(),
        })
    }
}

/// Runs one descriptor to completion and commits its record.
///
/// Store integrity violations are returned as errors; every other failure
/// produces a failed record.
pub fn run_tournament(
    d: &RunDescriptor,
    options: &GovernorOptions,
    store: &dyn RunStore,
) -> Result<RunRecord, StoreError> {
    let started = now_ms();
    let me = Peer::new(PeerRole::Governor, d.run_id.clone());
    let n_env = d.environments();
    let mut servers = Vec::new();
    let mut header = RecordHeader {
        descriptor: d.clone(),
        software: super::SOFTWARE_VERSION.into(),
        environments: n_env,
        wiring: Vec::new(),
        started_ms: Some(started),
        ended_ms: None,
    };

    let mut setup = || -> Result<Setup, RunFailure> {
        let mut envs = Vec::new();
        let mut wiring = Vec::new();
        for e in 0..n_env {
            let env = options.factory.create(d).map_err(|err| RunFailure(err.to_string()))?;
            if e == 0 {
                wiring = env.wiring();
            }
            let service = Arc::new(EnvService { index: e, env: Mutex::new(env), round: Mutex::new(0) });
            let server =
                options.transport.serve(service, Peer::new(PeerRole::Environment, format!("{}/{e}", d.run_id)))?;
            envs.push(transport::connect(server.address(), me.clone(), options.timeout)?);
            servers.push(server);
        }
        let mut agents = Vec::new();
        for a in &d.agents {
            let conductor = Conductor::start(
                ConductorConfig {
                    agent: a.name.clone(),
                    kind: a.strategy.kind.clone(),
                    hyper: a.strategy.params.clone(),
                    seed: d.agent_seed(&a.name),
                    workers: a.workers,
                    mode: a.update,
                    timeout: options.timeout,
                },
                options.registry.clone(),
                options.transport.clone(),
            )?;
            let mut control = transport::connect(conductor.address(), me.clone(), options.timeout)?;
            let reply = control.request(Message::SpawnWorkers(SpawnWorkers {
                agent: a.name.clone(),
                workers: (0..a.workers).map(|id| WorkerSlot { id, endpoint: None }).collect(),
            }))?;
            let Message::SpawnWorkers(s) = reply else { unreachable!("reply kind checked") };
            let workers = s
                .workers
                .iter()
                .map(|slot| {
                    let ep = slot.endpoint.as_deref().ok_or(RunFailure("worker without endpoint".into()))?;
                    Ok(transport::connect(ep, me.clone(), options.timeout)?)
                })
                .collect::<Result<Vec<_>, RunFailure>>()?;
            agents.push(AgentRuntime {
                name: a.name.clone(),
                conductor,
                control,
                needs_interface: vec![true; workers.len()],
                workers,
                respawns: 0,
            });
        }
        Ok((envs, agents, wiring))
    };

    let outcome = match setup() {
        Ok((envs, agents, wiring)) => {
            header.wiring = wiring;
            store.begin(&header)?;
            let mut g = Governor { d, options, store, envs, agents, steps: Vec::new(), invalid: false };
            let result = g.run();
            let steps = std::mem::take(&mut g.steps);
            // channels first, then conductors and their workers, then servers
            drop(g);
            (result, steps)
        }
        Err(f) => {
            store.begin(&header)?;
            (Err(f), Vec::new())
        }
    };
    drop(servers);
    header.ended_ms = Some(now_ms());
    let record = match outcome {
        (Ok(footer), steps) => RunRecord { header, steps, footer: Some(footer), failure: None },
        (Err(RunFailure(reason)), steps) => {
            warn!(run = %d.run_id, %reason, "run failed");
            RunRecord { header, steps, footer: None, failure: Some(reason) }
        }
    };
    store.commit(&record)?;
    Ok(record)
}

/// Governor endpoint: serves `RunAssign` requests from the executor.
pub struct GovernorService {
    pub options: GovernorOptions,
    pub store: Arc<dyn RunStore>,
}

impl Service for GovernorService {
    fn handle(&self, request: &Envelope) -> Message {
        match &request.message {
            Message::RunAssign(r) => match run_tournament(&r.descriptor, &self.options, self.store.as_ref()) {
                Ok(record) => Message::RunComplete(RunComplete {
                    run_id: record.run_id().to_string(),
                    status: record.status(),
                    reason: record.failure.clone(),
                }),
                Err(e) => {
                    Message::Error(ErrorReply::new("store", e.to_string()).with("run_id", r.descriptor.run_id.clone()))
                }
            },
            Message::Heartbeat(_) => Message::Heartbeat(Heartbeat {}),
            other => Message::error("unsupported", format!("governor does not handle {}", other.kind().as_str())),
        }
    }
}
