//! Independent tabular Q-learners, one table per actuator, over a binned
//! mean of the observed sensors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    adopt, check_readings, ActContext, AgentError, Capability, ExperienceBatch, ParameterUpdate, Parameters, Strategy,
    StrategyMutator,
};
use crate::environment::AgentInterface;
use crate::spaces::{ActuatorSetpoint, Port, SensorReading, Space, SpaceValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularQParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub bins: u32,
    /// Sensors with exactly this space feed the observation.
    pub observe: Space,
}

impl Default for TabularQParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.95,
            epsilon_start: 0.3,
            epsilon_end: 0.01,
            bins: 16,
            observe: Space::interval(0.85, 1.15).expect("static"),
        }
    }
}

impl TabularQParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Parameters { kind: TabularQ::KIND.into(), message: m.into() });
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.bins == 0 {
            return bad("bins must be positive");
        }
        match &self.observe {
            Space::Box(b) if b.dim() == 1 => Ok(()),
            _ => bad("observe must be a one-dimensional box"),
        }
    }

    /// Exploration rate for a round, linear from start (first round) to end (last round).
    pub fn epsilon(&self, round: u32, rounds: u32) -> f64 {
        if rounds <= 1 {
            return self.epsilon_start;
        }
        let f = f64::from(round.min(rounds - 1)) / f64::from(rounds - 1);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }

    pub fn bin(&self, sensors: &[Port], readings: &[SensorReading]) -> Result<usize, AgentError> {
        let values: Vec<f64> = sensors
            .iter()
            .zip(readings)
            .filter(|(p, _)| p.space == self.observe)
            .map(|(_, r)| r.value.as_scalar())
            .collect();
        if values.is_empty() {
            return Err(AgentError::Interface(format!("no sensor with space {}", self.observe)));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let Space::Box(b) = &self.observe else { unreachable!("validated") };
        let (lo, hi) = (b.low()[0], b.high()[0]);
        let f = ((mean - lo) / (hi - lo)).clamp(0.0, 1.0);
        Ok(((f * f64::from(self.bins)) as usize).min(self.bins as usize - 1))
    }
}

/// Learned state: `tables[actuator][bin][action]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tables {
    tables: BTreeMap<String, Vec<Vec<f64>>>,
}

impl Tables {
    fn decode(params: &Parameters) -> Result<Self, AgentError> {
        if params.data.is_null() {
            return Ok(Self::default());
        }
        serde_json::from_value(params.data.clone())
            .map_err(|e| AgentError::Parameters { kind: TabularQ::KIND.into(), message: e.to_string() })
    }

    fn row(&self, actuator: &str, bin: usize) -> Option<&Vec<f64>> {
        self.tables.get(actuator).and_then(|t| t.get(bin))
    }

    fn row_mut(&mut self, actuator: &str, bins: usize, actions: usize, bin: usize) -> &mut Vec<f64> {
        let t = self.tables.entry(actuator.to_string()).or_insert_with(|| vec![vec![0.0; actions]; bins]);
        &mut t[bin]
    }
}

fn discrete_size(port: &Port) -> Result<usize, AgentError> {
    match port.space {
        Space::Discrete(n) => Ok(n as usize),
        Space::Box(_) => Err(AgentError::Capability {
            id: port.id.clone(),
            reason: "tabular Q-learning needs a discrete action space".into(),
        }),
    }
}

/// First index of the maximum; an absent row counts as all zeros.
fn greedy(row: Option<&Vec<f64>>) -> usize {
    let Some(row) = row else { return 0 };
    let mut best = 0;
    for (i, q) in row.iter().enumerate() {
        if *q > row[best] {
            best = i;
        }
    }
    best
}

pub struct TabularQ {
    hyper: TabularQParams,
    rng: ChaCha8Rng,
    params: Parameters,
    tables: Tables,
}

impl TabularQ {
    pub const KIND: &'static str = "tabular_q";

    pub fn new(hyper: TabularQParams, seed: u64) -> Result<Self, AgentError> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Parameters { kind: Self::KIND.into(), version: 0, data: Value::Null },
            tables: Tables::default(),
        })
    }

    pub fn q(&self, actuator: &str, bin: usize) -> Option<&[f64]> {
        self.tables.row(actuator, bin).map(|r| r.as_slice())
    }
}

impl Strategy for TabularQ {
    fn kind(&self) -> &str {
        Self::KIND
    }

    fn capability(&self) -> Capability {
        Capability::DiscreteOnly
    }

    fn propose_actions(
        &mut self,
        ctx: &ActContext,
        readings: &[SensorReading],
        interface: &AgentInterface,
    ) -> Result<Vec<ActuatorSetpoint>, AgentError> {
        check_readings(readings, interface)?;
        let bin = self.hyper.bin(&interface.sensors, readings)?;
        let eps = self.hyper.epsilon(ctx.round, ctx.rounds);
        let mut out = Vec::with_capacity(interface.actuators.len());
        for port in &interface.actuators {
            let n = discrete_size(port)?;
            let explore = eps > 0.0 && self.rng.gen::<f64>() < eps;
            let index = if explore { self.rng.gen_range(0..n) } else { greedy(self.tables.row(&port.id, bin)) };
            out.push(ActuatorSetpoint { id: port.id.clone(), value: SpaceValue::Discrete(index as i64) });
        }
        Ok(out)
    }

    fn parameters(&self) -> &Parameters {
        &self.params
    }

    fn apply_update(&mut self, update: &ParameterUpdate) -> Result<bool, AgentError> {
        let tables = Tables::decode(&update.parameters)?;
        let changed = adopt(&mut self.params, update)?;
        if changed {
            self.tables = tables;
        }
        Ok(changed)
    }
}

pub struct TabularQMutator {
    hyper: TabularQParams,
}

impl TabularQMutator {
    pub fn new(hyper: TabularQParams) -> Result<Self, AgentError> {
        hyper.validate()?;
        Ok(Self { hyper })
    }
}

impl StrategyMutator for TabularQMutator {
    fn train(&mut self, batches: &[ExperienceBatch], current: &Parameters) -> Result<Value, AgentError> {
        let mut tables = Tables::decode(current)?;
        let bins = self.hyper.bins as usize;
        let (alpha, gamma) = (self.hyper.alpha, self.hyper.gamma);
        for batch in batches {
            let sizes: BTreeMap<&str, usize> = batch
                .interface
                .actuators
                .iter()
                .map(|p| discrete_size(p).map(|n| (p.id.as_str(), n)))
                .collect::<Result<_, _>>()?;
            for t in &batch.transitions {
                let s = self.hyper.bin(&batch.interface.sensors, &t.readings)?;
                let s2 = self.hyper.bin(&batch.interface.sensors, &t.next_readings)?;
                for sp in &t.setpoints {
                    let n = *sizes
                        .get(sp.id.as_str())
                        .ok_or_else(|| AgentError::Interface(format!("unknown actuator {}", sp.id)))?;
                    let a = sp
                        .value
                        .as_index()
                        .filter(|a| (0..n as i64).contains(a))
                        .ok_or_else(|| AgentError::Interface(format!("bad action for {}", sp.id)))?
                        as usize;
                    let future = if t.terminal {
                        0.0
                    } else {
                        let next = tables.row_mut(&sp.id, bins, n, s2);
                        next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    };
                    let row = tables.row_mut(&sp.id, bins, n, s);
                    row[a] += alpha * (t.reward + gamma * future - row[a]);
                }
            }
        }
        serde_json::to_value(&tables)
            .map_err(|e| AgentError::Parameters { kind: TabularQ::KIND.into(), message: e.to_string() })
    }
}
