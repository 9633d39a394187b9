//! Strategies, strategy mutators and the conductor/worker runtime.
//!
//! A new algorithm plugs in by implementing [`Strategy`] and
//! [`StrategyMutator`] and registering both under a kind tag.

mod conductor;
mod fixed;
mod random;
mod registry;
mod tabular;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::environment::AgentInterface;
use crate::spaces::{ActuatorSetpoint, SensorReading};

pub use conductor::{Conductor, ConductorConfig, UpdateMode, Worker};
pub use fixed::{FixedParams, FixedStrategy};
pub use random::RandomStrategy;
pub use registry::{default_registry, IdentityMutator, StrategyEntry, StrategyRegistry};
pub use tabular::{TabularQ, TabularQMutator, TabularQParams};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("reading {id} does not fit its sensor space")]
    Reading { id: String },
    #[error("readings do not match the sensor list: {0}")]
    Interface(String),
    #[error("strategy cannot drive actuator {id}: {reason}")]
    Capability { id: String, reason: String },
    #[error("stale parameters: batch built on version {batch}, current is {current}")]
    StaleBase { batch: u64, current: u64 },
    #[error("empty experience batch")]
    EmptyBatch,
    #[error("parameter blob for {kind}: {message}")]
    Parameters { kind: String, message: String },
    #[error("unknown strategy kind {0}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    DiscreteOnly,
    Continuous,
}

/// Versioned, opaque learned state of a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    pub kind: String,
    pub version: u64,
    pub data: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub env: u32,
    pub step: u64,
    pub readings: Vec<SensorReading>,
    pub setpoints: Vec<ActuatorSetpoint>,
    pub reward: f64,
    pub next_readings: Vec<SensorReading>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperienceBatch {
    pub agent: String,
    pub worker: u32,
    pub round: u32,
    /// Parameter version the worker acted with.
    pub base_version: u64,
    pub interface: AgentInterface,
    /// Ordered by (env, step).
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterUpdate {
    pub agent: String,
    pub mutator: String,
    pub parameters: Parameters,
}

/// Where in the tournament a decision is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActContext {
    pub round: u32,
    pub rounds: u32,
    pub step: u64,
}

pub trait Strategy: Send {
    fn kind(&self) -> &str;
    fn capability(&self) -> Capability;

    /// One setpoint per actuator, each inside its space.
    fn propose_actions(
        &mut self,
        ctx: &ActContext,
        readings: &[SensorReading],
        interface: &AgentInterface,
    ) -> Result<Vec<ActuatorSetpoint>, AgentError>;

    fn parameters(&self) -> &Parameters;

    /// Adopts `update` if it is newer than the current parameters.
    /// Returns whether anything changed.
    fn apply_update(&mut self, update: &ParameterUpdate) -> Result<bool, AgentError>;
}

pub trait StrategyMutator: Send {
    /// Produces new parameter data from a batch. The caller owns
    /// versioning; see [`mutate`].
    fn train(&mut self, batch: &[ExperienceBatch], current: &Parameters) -> Result<Value, AgentError>;
}

/// Runs one training step with the version guard applied.
///
/// All batches must be built on `current.version`; the result carries
/// `current.version + 1`.
pub fn mutate(
    mutator: &mut dyn StrategyMutator,
    name: &str,
    batches: &[ExperienceBatch],
    current: &Parameters,
) -> Result<ParameterUpdate, AgentError> {
    if batches.iter().all(|b| b.transitions.is_empty()) {
        return Err(AgentError::EmptyBatch);
    }
    if let Some(b) = batches.iter().find(|b| b.base_version != current.version) {
        return Err(AgentError::StaleBase { batch: b.base_version, current: current.version });
    }
    let data = mutator.train(batches, current)?;
    Ok(ParameterUpdate {
        agent: batches[0].agent.clone(),
        mutator: name.to_string(),
        parameters: Parameters { kind: current.kind.clone(), version: current.version + 1, data },
    })
}

/// Checks readings against the sensor list of an interface.
pub fn check_readings(readings: &[SensorReading], interface: &AgentInterface) -> Result<(), AgentError> {
    if readings.len() != interface.sensors.len() {
        return Err(AgentError::Interface(format!(
            "{} readings for {} sensors",
            readings.len(),
            interface.sensors.len()
        )));
    }
    for (r, port) in readings.iter().zip(&interface.sensors) {
        if r.id != port.id {
            return Err(AgentError::Interface(format!("expected {} got {}", port.id, r.id)));
        }
        if !port.space.admits(&r.value) {
            return Err(AgentError::Reading { id: r.id.clone() });
        }
    }
    Ok(())
}

/// Shared version guard for [`Strategy::apply_update`].
pub(crate) fn adopt(current: &mut Parameters, update: &ParameterUpdate) -> Result<bool, AgentError> {
    if update.parameters.kind != current.kind {
        return Err(AgentError::Parameters {
            kind: current.kind.clone(),
            message: format!("update is for kind {}", update.parameters.kind),
        });
    }
    if update.parameters.version <= current.version {
        return Ok(false);
    }
    *current = update.parameters.clone();
    Ok(true)
}
