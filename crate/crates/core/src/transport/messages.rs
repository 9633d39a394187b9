use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{ExperienceBatch, ParameterUpdate};
use crate::environment::{AgentInterface, ResetOutcome, StepOutcome};
use crate::experiment::{RunDescriptor, RunStatus};
use crate::spaces::{ActuatorSetpoint, SensorReading};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    RunAssign,
    EnvReset,
    EnvResetResult,
    ActRequest,
    ActResponse,
    EnvStepResult,
    ExperienceBatch,
    ParameterUpdate,
    SpawnWorkers,
    RunComplete,
    Heartbeat,
    Error,
}

impl MessageKind {
    pub const ALL: [MessageKind; 12] = [
        MessageKind::RunAssign,
        MessageKind::EnvReset,
        MessageKind::EnvResetResult,
        MessageKind::ActRequest,
        MessageKind::ActResponse,
        MessageKind::EnvStepResult,
        MessageKind::ExperienceBatch,
        MessageKind::ParameterUpdate,
        MessageKind::SpawnWorkers,
        MessageKind::RunComplete,
        MessageKind::Heartbeat,
        MessageKind::Error,
    ];

    /// The one reply kind for a request kind; `None` for kinds that are
    /// never sent as requests. An `Error` reply is allowed for any request.
    pub fn reply_kind(self) -> Option<MessageKind> {
        use MessageKind::*;
        match self {
            RunAssign => Some(RunComplete),
            EnvReset => Some(EnvResetResult),
            ActRequest => Some(ActResponse),
            ActResponse => Some(EnvStepResult),
            EnvStepResult => Some(Heartbeat),
            ExperienceBatch => Some(ParameterUpdate),
            SpawnWorkers => Some(SpawnWorkers),
            Heartbeat => Some(Heartbeat),
            EnvResetResult | ParameterUpdate | RunComplete | Error => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        use MessageKind::*;
        match self {
            RunAssign => "run_assign",
            EnvReset => "env_reset",
            EnvResetResult => "env_reset_result",
            ActRequest => "act_request",
            ActResponse => "act_response",
            EnvStepResult => "env_step_result",
            ExperienceBatch => "experience_batch",
            ParameterUpdate => "parameter_update",
            SpawnWorkers => "spawn_workers",
            RunComplete => "run_complete",
            Heartbeat => "heartbeat",
            Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunAssign {
    pub descriptor: RunDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunComplete {
    pub run_id: String,
    pub status: RunStatus,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvReset {
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvResetResult {
    pub env: u32,
    pub outcome: ResetOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActEntry {
    pub env: u32,
    pub readings: Vec<SensorReading>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActRequest {
    pub round: u32,
    pub rounds: u32,
    pub step: u64,
    /// Sent at the start of every round and to fresh workers.
    pub interface: Option<AgentInterface>,
    pub entries: Vec<ActEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionEntry {
    pub env: u32,
    pub agent: String,
    /// Parameter version the setpoints were computed with.
    pub version: u64,
    pub setpoints: Vec<ActuatorSetpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActResponse {
    pub actions: Vec<ActionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvStepEntry {
    pub env: u32,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvStepResult {
    pub round: u32,
    /// Set on the last message of a round; workers hand in their batch.
    pub round_complete: bool,
    pub entries: Vec<EnvStepEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerSlot {
    pub id: u32,
    /// Empty in the request, filled in the reply.
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnWorkers {
    pub agent: String,
    pub workers: Vec<WorkerSlot>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heartbeat {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReply {
    pub code: String,
    pub message: String,
    pub detail: BTreeMap<String, String>,
}

impl ErrorReply {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into(), detail: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.detail.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    RunAssign(RunAssign),
    EnvReset(EnvReset),
    EnvResetResult(EnvResetResult),
    ActRequest(ActRequest),
    ActResponse(ActResponse),
    EnvStepResult(EnvStepResult),
    ExperienceBatch(ExperienceBatch),
    ParameterUpdate(ParameterUpdate),
    SpawnWorkers(SpawnWorkers),
    RunComplete(RunComplete),
    Heartbeat(Heartbeat),
    Error(ErrorReply),
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::RunAssign(_) => MessageKind::RunAssign,
            Message::EnvReset(_) => MessageKind::EnvReset,
            Message::EnvResetResult(_) => MessageKind::EnvResetResult,
            Message::ActRequest(_) => MessageKind::ActRequest,
            Message::ActResponse(_) => MessageKind::ActResponse,
            Message::EnvStepResult(_) => MessageKind::EnvStepResult,
            Message::ExperienceBatch(_) => MessageKind::ExperienceBatch,
            Message::ParameterUpdate(_) => MessageKind::ParameterUpdate,
            Message::SpawnWorkers(_) => MessageKind::SpawnWorkers,
            Message::RunComplete(_) => MessageKind::RunComplete,
            Message::Heartbeat(_) => MessageKind::Heartbeat,
            Message::Error(_) => MessageKind::Error,
        }
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Message::Error(ErrorReply::new(code, message))
    }

    pub(crate) fn payload(&self) -> serde_json::Result<Value> {
        match self {
            Message::RunAssign(p) => serde_json::to_value(p),
            Message::EnvReset(p) => serde_json::to_value(p),
            Message::EnvResetResult(p) => serde_json::to_value(p),
            Message::ActRequest(p) => serde_json::to_value(p),
            Message::ActResponse(p) => serde_json::to_value(p),
            Message::EnvStepResult(p) => serde_json::to_value(p),
            Message::ExperienceBatch(p) => serde_json::to_value(p),
            Message::ParameterUpdate(p) => serde_json::to_value(p),
            Message::SpawnWorkers(p) => serde_json::to_value(p),
            Message::RunComplete(p) => serde_json::to_value(p),
            Message::Heartbeat(p) => serde_json::to_value(p),
            Message::Error(p) => serde_json::to_value(p),
        }
    }

    pub(crate) fn from_payload(kind: MessageKind, payload: Value) -> serde_json::Result<Self> {
        use serde_json::from_value as f;
        Ok(match kind {
            MessageKind::RunAssign => Message::RunAssign(f(payload)?),
            MessageKind::EnvReset => Message::EnvReset(f(payload)?),
            MessageKind::EnvResetResult => Message::EnvResetResult(f(payload)?),
            MessageKind::ActRequest => Message::ActRequest(f(payload)?),
            MessageKind::ActResponse => Message::ActResponse(f(payload)?),
            MessageKind::EnvStepResult => Message::EnvStepResult(f(payload)?),
            MessageKind::ExperienceBatch => Message::ExperienceBatch(f(payload)?),
            MessageKind::ParameterUpdate => Message::ParameterUpdate(f(payload)?),
            MessageKind::SpawnWorkers => Message::SpawnWorkers(f(payload)?),
            MessageKind::RunComplete => Message::RunComplete(f(payload)?),
            MessageKind::Heartbeat => Message::Heartbeat(f(payload)?),
            MessageKind::Error => Message::Error(f(payload)?),
        })
    }
}
