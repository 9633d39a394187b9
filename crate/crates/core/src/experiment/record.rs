use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RunDescriptor;
use crate::ctf::LedgerSnapshot;
use crate::environment::{AgentReadings, AgentWiring, Role};
use crate::protection::EventLog;
use crate::spaces::ActuatorSetpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Completed, but a worker had to be replaced on the way.
    Invalid,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordHeader {
    pub descriptor: RunDescriptor,
    pub software: String,
    pub environments: u32,
    pub wiring: Vec<AgentWiring>,
    /// Wall-clock bounds in unix milliseconds; excluded from replay comparison.
    pub started_ms: Option<u64>,
    pub ended_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub round: u32,
    pub env: u32,
    pub step: u64,
    /// Readings the agents acted on.
    pub readings: AgentReadings,
    pub setpoints: BTreeMap<String, Vec<ActuatorSetpoint>>,
    /// Parameter version behind each agent's setpoints.
    pub versions: BTreeMap<String, u64>,
    pub rewards: BTreeMap<String, f64>,
    pub events: EventLog,
    pub ledger: LedgerSnapshot,
    pub terminated: bool,
    pub unclamped: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeOutcome {
    pub round: u32,
    pub env: u32,
    pub steps: u64,
    pub ledger: LedgerSnapshot,
    /// The attacker wins an episode by draining the defender's stake.
    pub winner: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordFooter {
    pub status: RunStatus,
    pub episodes: Vec<EpisodeOutcome>,
    /// Summed over episodes.
    pub totals: LedgerSnapshot,
    /// Majority of episode wins; ties go to the defender.
    pub winner: Role,
    pub respawns: BTreeMap<String, u32>,
    /// Final parameter version per agent, indexed by worker id.
    pub parameter_versions: BTreeMap<String, Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RecordLine {
    Header(RecordHeader),
    Step(StepRecord),
    Footer(RecordFooter),
    Failure { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub header: RecordHeader,
    pub steps: Vec<StepRecord>,
    pub footer: Option<RecordFooter>,
    pub failure: Option<String>,
}

pub(crate) fn line(l: &RecordLine) -> String {
    let v = serde_json::to_value(l).expect("record lines serialize");
    serde_json::to_string(&v).expect("value serializes")
}

impl RunRecord {
    pub fn run_id(&self) -> &str {
        &self.header.descriptor.run_id
    }

    pub fn status(&self) -> RunStatus {
        self.footer.as_ref().map(|f| f.status).unwrap_or(RunStatus::Failed)
    }

    pub fn is_completed(&self) -> bool {
        self.footer.is_some()
    }

    /// Newline-delimited canonical JSON.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let mut push = |l: RecordLine| {
            out.push_str(&line(&l));
            out.push('\n');
        };
        push(RecordLine::Header(self.header.clone()));
        for s in &self.steps {
            push(RecordLine::Step(s.clone()));
        }
        if let Some(f) = &self.footer {
            push(RecordLine::Footer(f.clone()));
        }
        if let Some(r) = &self.failure {
            push(RecordLine::Failure { reason: r.clone() });
        }
        out
    }

    /// Serialization with the wall-clock fields blanked; equal for replays.
    pub fn replay_bytes(&self) -> String {
        let mut r = self.clone();
        r.header.started_ms = None;
        r.header.ended_ms = None;
        r.to_ndjson()
    }

    pub fn from_ndjson(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header = match lines.next() {
            Some((_, l)) => match serde_json::from_str(l).map_err(|e| format!("line 1: {e}"))? {
                RecordLine::Header(h) => h,
                _ => return Err("record does not start with a header".into()),
            },
            None => return Err("empty record".into()),
        };
        let mut record = RunRecord { header, steps: Vec::new(), footer: None, failure: None };
        for (i, l) in lines {
            if record.footer.is_some() || record.failure.is_some() {
                return Err(format!("line {}: content after the end of the record", i + 1));
            }
            match serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1))? {
                RecordLine::Header(_) => return Err(format!("line {}: second header", i + 1)),
                RecordLine::Step(s) => record.steps.push(s),
                RecordLine::Footer(f) => record.footer = Some(f),
                RecordLine::Failure { reason } => record.failure = Some(reason),
            }
        }
        Ok(record)
    }
}
