//! Value domains for sensors and actuators.
//!
//! A [`Space`] is the only thing an agent learns about a sensor or actuator:
//! either `Discrete(n)` (the integers `0..n`) or a bounded box in `R^d`.
//! Box membership uses closed intervals, so nominal tap positions and 0 % /
//! 100 % scalings that sit on a boundary are valid values.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpaceError {
    #[error("discrete space must have at least one value")]
    EmptyDiscrete,
    #[error("box space must have at least one dimension")]
    EmptyBox,
    #[error("box bounds have different dimensions ({low} low, {high} high)")]
    DimensionMismatch { low: usize, high: usize },
    #[error("box dimension {dim}: bounds must be finite with low < high (got [{low}, {high}])")]
    InvalidBounds { dim: usize, low: f64, high: f64 },
    #[error("value kind does not match space: {0}")]
    KindMismatch(&'static str),
    #[error("index {index} out of range for {steps} steps")]
    IndexOutOfRange { index: i64, steps: u32 },
    #[error("discretization needs at least 2 steps, got {0}")]
    TooFewSteps(u32),
    #[error("discretization requires a one-dimensional box, got {0} dimensions")]
    NotOneDimensional(usize),
}

/// Closed box `[low; high]` in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoxBounds {
    low: Vec<f64>,
    high: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl TryFrom<RawBox> for BoxBounds {
    type Error = SpaceError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        BoxBounds::new(raw.low, raw.high)
    }
}

impl BoxBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self, SpaceError> {
        if low.len() != high.len() {
            return Err(SpaceError::DimensionMismatch { low: low.len(), high: high.len() });
        }
        if low.is_empty() {
            return Err(SpaceError::EmptyBox);
        }
        for (dim, (&l, &h)) in low.iter().zip(&high).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(SpaceError::InvalidBounds { dim, low: l, high: h });
            }
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    /// Clamps each component into the box. Non-finite components map to the lower bound.
    pub fn clamp(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(&v, (&l, &h))| if v.is_finite() { v.clamp(l, h) } else { l })
            .collect()
    }
}

/// Value domain of a sensor or actuator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Space {
    /// The `n` integers `0..n`.
    Discrete(#[serde(deserialize_with = "positive_cardinality")] u32),
    Box(BoxBounds),
}

fn positive_cardinality<'de, D>(deserializer: D) -> Result<u32, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let n = u32::deserialize(deserializer)?;
    if n == 0 {
        return Err(serde::de::Error::custom(SpaceError::EmptyDiscrete));
    }
    Ok(n)
}

impl Space {
    pub fn discrete(n: u32) -> Result<Self, SpaceError> {
        if n == 0 {
            return Err(SpaceError::EmptyDiscrete);
        }
        Ok(Space::Discrete(n))
    }

    pub fn boxed(low: Vec<f64>, high: Vec<f64>) -> Result<Self, SpaceError> {
        BoxBounds::new(low, high).map(Space::Box)
    }

    /// One-dimensional box `[low, high]`.
    pub fn interval(low: f64, high: f64) -> Result<Self, SpaceError> {
        Self::boxed(vec![low], vec![high])
    }

    pub fn contains(&self, value: &SpaceValue) -> Result<bool, SpaceError> {
        match (self, value) {
            (Space::Discrete(n), SpaceValue::Discrete(v)) => Ok(*v >= 0 && *v < i64::from(*n)),
            (Space::Box(b), SpaceValue::Box(v)) => {
                Ok(v.len() == b.dim() && v.iter().zip(b.low.iter().zip(&b.high)).all(|(&x, (&l, &h))| x >= l && x <= h))
            }
            (Space::Discrete(_), SpaceValue::Box(_)) => {
                Err(SpaceError::KindMismatch("vector offered to a discrete space"))
            }
            (Space::Box(_), SpaceValue::Discrete(_)) => Err(SpaceError::KindMismatch("integer offered to a box space")),
        }
    }

    /// Like [`Space::contains`] but treats a kind mismatch as "not contained".
    pub fn admits(&self, value: &SpaceValue) -> bool {
        self.contains(value).unwrap_or(false)
    }

    /// Maps `index` of `steps` evenly spaced points onto a one-dimensional box:
    /// `low + index * (high - low) / (steps - 1)`.
    pub fn discretize_setpoint(&self, index: i64, steps: u32) -> Result<f64, SpaceError> {
        let Space::Box(b) = self else {
            return Err(SpaceError::KindMismatch("discretization needs a box space"));
        };
        if b.dim() != 1 {
            return Err(SpaceError::NotOneDimensional(b.dim()));
        }
        if steps < 2 {
            return Err(SpaceError::TooFewSteps(steps));
        }
        if index < 0 || index >= i64::from(steps) {
            return Err(SpaceError::IndexOutOfRange { index, steps });
        }
        let (l, h) = (b.low[0], b.high[0]);
        let last = i64::from(steps) - 1;
        if index == last {
            return Ok(h);
        }
        // index / last computed first keeps [0, 1] with 11 steps at exact tenths.
        Ok(l + (h - l) * (index as f64 / last as f64))
    }

    /// Uniform draw from the space.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SpaceValue {
        match self {
            Space::Discrete(n) => SpaceValue::Discrete(i64::from(rng.gen_range(0..*n))),
            Space::Box(b) => SpaceValue::Box(b.low.iter().zip(&b.high).map(|(&l, &h)| rng.gen_range(l..=h)).collect()),
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Discrete(n) => write!(f, "Discrete({n})"),
            Space::Box(b) if b.dim() == 1 => write!(f, "Box({}, {})", b.low[0], b.high[0]),
            Space::Box(b) => write!(f, "Box({:?}, {:?})", b.low, b.high),
        }
    }
}

/// A value offered to or read from a [`Space`]: an integer for discrete
/// spaces, a real vector for boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceValue {
    Discrete(i64),
    Box(Vec<f64>),
}

impl SpaceValue {
    pub fn scalar(v: f64) -> Self {
        SpaceValue::Box(vec![v])
    }

    pub fn as_index(&self) -> Option<i64> {
        match self {
            SpaceValue::Discrete(i) => Some(*i),
            SpaceValue::Box(_) => None,
        }
    }

    /// First component of a box value, or the index of a discrete value as a real.
    pub fn as_scalar(&self) -> f64 {
        match self {
            SpaceValue::Discrete(i) => *i as f64,
            SpaceValue::Box(v) => v.first().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorReading {
    pub id: String,
    pub value: SpaceValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorSetpoint {
    pub id: String,
    pub value: SpaceValue,
}

/// An opaque sensor or actuator id together with its domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Port {
    pub id: String,
    pub space: Space,
}
