use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::{adopt, check_readings, ActContext, AgentError, Capability, ParameterUpdate, Parameters, Strategy};
use crate::environment::AgentInterface;
use crate::spaces::{ActuatorSetpoint, SensorReading};

/// Uniform sampling from every actuator space. Nothing to learn.
pub struct RandomStrategy {
    rng: ChaCha8Rng,
    params: Parameters,
}

impl RandomStrategy {
    pub const KIND: &'static str = "random";

    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Parameters { kind: Self::KIND.into(), version: 0, data: Value::Null },
        }
    }
}

impl Strategy for RandomStrategy {
    fn kind(&self) -> &str {
        Self::KIND
    }

    fn capability(&self) -> Capability {
        Capability::Continuous
    }

    fn propose_actions(
        &mut self,
        _ctx: &ActContext,
        readings: &[SensorReading],
        interface: &AgentInterface,
    ) -> Result<Vec<ActuatorSetpoint>, AgentError> {
        check_readings(readings, interface)?;
        Ok(interface
            .actuators
            .iter()
            .map(|a| ActuatorSetpoint { id: a.id.clone(), value: a.space.sample(&mut self.rng) })
            .collect())
    }

    fn parameters(&self) -> &Parameters {
        &self.params
    }

    fn apply_update(&mut self, update: &ParameterUpdate) -> Result<bool, AgentError> {
        adopt(&mut self.params, update)
    }
}
