//! Unit-less Gaussian performance function.
//!
//! `p = (-1)^[attacker] · exp(-(mean(ψ) - μ)² / (2σ²)) - c`, where ψ picks the
//! readings of the agent's voltage-like sensors, identified purely by their
//! space (by default `Box(0.85, 1.15)`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spaces::{Port, SensorReading, Space, SpaceValue};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("reward width sigma must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("no sensor matches the reward's selection space {0}")]
    EmptySelection(Space),
    #[error("reading {0} has no declared sensor")]
    UnknownSensor(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    pub c: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Sensors whose space equals this one feed the mean.
    pub select: Space,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { c: 0.0, mu: 1.0, sigma: 0.05, select: voltage_space() }
    }
}

pub fn voltage_space() -> Space {
    Space::interval(0.85, 1.15).expect("static bounds")
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.sigma > 0.0 && self.sigma.is_finite() {
            Ok(())
        } else {
            Err(RewardError::Sigma(self.sigma))
        }
    }
}

/// The selected sensor values of one agent at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSnapshot {
    values: Vec<f64>,
}

impl SensorSnapshot {
    /// Extracts the readings whose sensor space equals `select`.
    pub fn extract(sensors: &[Port], readings: &[SensorReading], select: &Space) -> Result<Self, RewardError> {
        let mut values = Vec::new();
        for reading in readings {
            let port = sensors
                .iter()
                .find(|p| p.id == reading.id)
                .ok_or_else(|| RewardError::UnknownSensor(reading.id.clone()))?;
            if &port.space == select {
                if let SpaceValue::Box(v) = &reading.value {
                    values.extend_from_slice(v);
                }
            }
        }
        if values.is_empty() {
            return Err(RewardError::EmptySelection(select.clone()));
        }
        Ok(Self { values })
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }
}

pub fn performance(params: &RewardParams, attacker: bool, snapshot: &SensorSnapshot) -> Result<f64, RewardError> {
    params.validate()?;
    let mean = snapshot.mean().ok_or_else(|| RewardError::EmptySelection(params.select.clone()))?;
    let z = mean - params.mu;
    let peak = (-(z * z) / (2.0 * params.sigma * params.sigma)).exp();
    let signed = if attacker { -peak } else { peak };
    Ok(signed - params.c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(attacker: bool, c: f64, mean: f64) -> f64 {
        let params = RewardParams { c, ..Default::default() };
        performance(&params, attacker, &SensorSnapshot::from_values(vec![mean])).unwrap()
    }

    #[test]
    fn peak_and_sign() {
        assert_eq!(p(false, 0.0, 1.0), 1.0);
        assert_eq!(p(true, 0.0, 1.0), -1.0);
        assert_eq!(p(false, 0.25, 1.0), 0.75);
    }

    #[test]
    fn one_sigma_off_centre() {
        // exp(-1/2) to 19 digits from an arbitrary-precision evaluation.
        let expected = 0.606_530_659_712_633_4;
        assert!((p(false, 0.0, 1.05) - expected).abs() < 1e-12);
        assert!((p(false, 0.0, 0.95) - expected).abs() < 1e-12);
    }

    #[test]
    fn tail_does_not_distinguish_deep_sags() {
        // Deviations of 0.8 pu and 0.5 pu from the centre both sit at -c.
        assert!((p(false, 0.0, 0.2) - 0.0).abs() < 1e-10);
        assert!((p(false, 0.0, 0.5) - 0.0).abs() < 1e-10);
        assert!((p(false, 0.0, 0.2) - p(false, 0.0, 0.5)).abs() < 1e-10);
        // A mean of 0.8 pu is four sigma out: exp(-8), small but far from 1e-10.
        assert!((p(false, 0.0, 0.8) - (-8.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let params = RewardParams { sigma: 0.0, ..Default::default() };
        assert_eq!(performance(&params, false, &SensorSnapshot::from_values(vec![1.0])), Err(RewardError::Sigma(0.0)));
        let sensors = vec![Port { id: "s0".into(), space: Space::interval(0.0, 1.0).unwrap() }];
        let readings = vec![SensorReading { id: "s0".into(), value: SpaceValue::scalar(0.5) }];
        assert!(matches!(
            SensorSnapshot::extract(&sensors, &readings, &voltage_space()),
            Err(RewardError::EmptySelection(_))
        ));
        let stray = vec![SensorReading { id: "nope".into(), value: SpaceValue::scalar(0.5) }];
        assert!(matches!(
            SensorSnapshot::extract(&sensors, &stray, &voltage_space()),
            Err(RewardError::UnknownSensor(_))
        ));
    }

    #[test]
    fn extraction_picks_voltage_sensors_only() {
        let sensors = vec![
            Port { id: "s0".into(), space: voltage_space() },
            Port { id: "s1".into(), space: Space::interval(0.0, 1.0).unwrap() },
            Port { id: "s2".into(), space: voltage_space() },
        ];
        let readings = vec![
            SensorReading { id: "s0".into(), value: SpaceValue::scalar(0.9) },
            SensorReading { id: "s1".into(), value: SpaceValue::scalar(0.1) },
            SensorReading { id: "s2".into(), value: SpaceValue::scalar(1.1) },
        ];
        let snap = SensorSnapshot::extract(&sensors, &readings, &voltage_space()).unwrap();
        assert!((snap.mean().unwrap() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn range_and_symmetry(c in -2.0f64..2.0, d in 0.0f64..0.2, sigma in 0.05f64..1.0) {
            let params = RewardParams { c, sigma, ..Default::default() };
            let at = |attacker, m: f64| performance(&params, attacker, &SensorSnapshot::from_values(vec![m])).unwrap();
            let def = at(false, 1.0 + d);
            prop_assert!(def > -c && def <= 1.0 - c);
            let att = at(true, 1.0 + d);
            prop_assert!(att >= -1.0 - c && att < -c);
            let centred = RewardParams { mu: 0.0, ..params.clone() };
            let at0 = |m: f64| performance(&centred, false, &SensorSnapshot::from_values(vec![m])).unwrap();
            prop_assert_eq!(at0(d), at0(-d));
        }

        #[test]
        fn order_of_sensors_does_not_matter(mut values in prop::collection::vec(0.85f64..1.15, 1..40), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let params = RewardParams::default();
            let a = performance(&params, false, &SensorSnapshot::from_values(values.clone())).unwrap();
            values.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = performance(&params, false, &SensorSnapshot::from_values(values)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
