use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{adopt, check_readings, ActContext, AgentError, Capability, ParameterUpdate, Parameters, Strategy};
use crate::environment::AgentInterface;
use crate::spaces::{ActuatorSetpoint, SensorReading, Space, SpaceValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedParams {
    /// Position inside every actuator range, 0 = lowest, 1 = highest.
    pub fraction: f64,
}

impl Default for FixedParams {
    fn default() -> Self {
        Self { fraction: 1.0 }
    }
}

/// Holds every actuator at the same relative position.
pub struct FixedStrategy {
    fraction: f64,
    params: Parameters,
}

impl FixedStrategy {
    pub const KIND: &'static str = "fixed";

    pub fn new(hyper: &FixedParams) -> Result<Self, AgentError> {
        if !(0.0..=1.0).contains(&hyper.fraction) {
            return Err(AgentError::Parameters {
                kind: Self::KIND.into(),
                message: "fraction must lie in [0, 1]".into(),
            });
        }
        Ok(Self {
            fraction: hyper.fraction,
            params: Parameters { kind: Self::KIND.into(), version: 0, data: Value::Null },
        })
    }

    fn setpoint(&self, space: &Space) -> SpaceValue {
        match space {
            Space::Discrete(n) => SpaceValue::Discrete((self.fraction * f64::from(n - 1)).round() as i64),
            Space::Box(b) => {
                SpaceValue::Box(b.low().iter().zip(b.high()).map(|(l, h)| l + self.fraction * (h - l)).collect())
            }
        }
    }
}

impl Strategy for FixedStrategy {
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
            .map(|a| ActuatorSetpoint { id: a.id.clone(), value: self.setpoint(&a.space) })
            .collect())
    }

    fn parameters(&self) -> &Parameters {
        &self.params
    }

    fn apply_update(&mut self, update: &ParameterUpdate) -> Result<bool, AgentError> {
        adopt(&mut self.params, update)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::testing::{interface, readings};

    #[test]
    fn positions_scale_with_the_range() {
        let i =
            interface(&[Space::discrete(11).unwrap(), Space::interval(0.0, 2.0).unwrap(), Space::discrete(5).unwrap()]);
        let mut s = FixedStrategy::new(&FixedParams { fraction: 0.3 }).unwrap();
        let ctx = ActContext { round: 0, rounds: 1, step: 0 };
        let out = s.propose_actions(&ctx, &readings(1.0), &i).unwrap();
        assert_eq!(out[0].value, SpaceValue::Discrete(3));
        assert_eq!(out[1].value, SpaceValue::scalar(0.6));
        assert_eq!(out[2].value, SpaceValue::Discrete(1));
        assert!(FixedStrategy::new(&FixedParams { fraction: 1.5 }).is_err());
    }
}
