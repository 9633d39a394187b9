//! Electrical network model and AC power flow.
//!
//! All electrical quantities are per-unit on a 1 MVA system base. Injection
//! elements carry their nominal power in kW (the unit coin scoring works in)
//! and convert to per-unit by dividing by 1000.

mod admittance;
mod powerflow;
mod synthetic;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use powerflow::{energized_buses, solve_power_flow, PowerFlowOptions, PowerFlowSolution};
pub use synthetic::{generate_synthetic_city_grid, BaseCaseReport};

pub const GRID_FORMAT: &str = "arl-grid";
pub const GRID_FORMAT_VERSION: u32 = 1;

/// kW per per-unit on the 1 MVA base.
pub const KW_PER_PU: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid model is invalid: {0}")]
    Invalid(String),
    #[error("slack bus {0} has no in-service connection to the rest of the network")]
    IsolatedSlack(String),
    #[error("unknown element {0}")]
    UnknownElement(String),
    #[error("unsupported grid document (format {format:?}, version {version})")]
    UnsupportedFormat { format: String, version: u32 },
    #[error("grid document could not be parsed: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoltageLevel {
    Hv,
    Mv,
    Lv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: String,
    pub level: VoltageLevel,
    pub in_service: bool,
}

/// Π-model line. `b` is the total shunt susceptance, split evenly between ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub s_max: f64,
    pub in_service: bool,
}

/// Two-winding transformer with an on-load tap changer on the HV side.
///
/// At no load the LV voltage is `ratio() * V_hv`, so raising the tap raises
/// the LV side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transformer {
    pub id: String,
    pub hv_bus: String,
    pub lv_bus: String,
    pub r: f64,
    pub x: f64,
    pub s_max: f64,
    pub tap_min: i32,
    pub tap_max: i32,
    pub tap_neutral: i32,
    /// Voltage-ratio increment per tap position (0.025 = 2.5 %).
    pub tap_step: f64,
    pub tap: i32,
    pub in_service: bool,
}

impl Transformer {
    pub fn ratio(&self) -> f64 {
        1.0 + f64::from(self.tap - self.tap_neutral) * self.tap_step
    }

    pub fn tap_positions(&self) -> u32 {
        (self.tap_max - self.tap_min + 1) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    Load,
    Sgen,
}

/// A load or static generator modelled as a constant PQ injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub id: String,
    pub kind: InjectionKind,
    /// Free-form category ("industry", "pv", ...). Never exposed to agents.
    pub tag: String,
    pub bus: String,
    pub p_nominal_kw: f64,
    pub cos_phi: f64,
    pub scaling: f64,
    pub in_service: bool,
}

impl Injection {
    pub fn p_pu(&self) -> f64 {
        self.p_nominal_kw / KW_PER_PU * self.scaling
    }

    pub fn q_pu(&self) -> f64 {
        self.p_pu() * self.cos_phi.acos().tan()
    }

    /// Complex power injected into the bus (negative for loads).
    pub fn injected(&self) -> (f64, f64) {
        let (p, q) = (self.p_pu(), self.q_pu());
        match self.kind {
            InjectionKind::Load => (-p, -q),
            InjectionKind::Sgen => (p, q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridModel {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub slack_bus: String,
    /// Voltage magnitude held at the slack bus.
    pub slack_voltage: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub transformers: Vec<Transformer>,
    pub injections: Vec<Injection>,
}

/// Reference to any switchable element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementRef {
    Line(usize),
    Transformer(usize),
    Injection(usize),
}

impl GridModel {
    pub fn new(name: impl Into<String>, slack_bus: impl Into<String>) -> Self {
        Self {
            format: GRID_FORMAT.to_string(),
            version: GRID_FORMAT_VERSION,
            name: name.into(),
            slack_bus: slack_bus.into(),
            slack_voltage: 1.0,
            buses: Vec::new(),
            lines: Vec::new(),
            transformers: Vec::new(),
            injections: Vec::new(),
        }
    }

    pub fn bus_index(&self) -> HashMap<&str, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect()
    }

    pub fn slack_index(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.id == self.slack_bus)
    }

    pub fn find(&self, id: &str) -> Option<ElementRef> {
        if let Some(i) = self.injections.iter().position(|e| e.id == id) {
            return Some(ElementRef::Injection(i));
        }
        if let Some(i) = self.transformers.iter().position(|e| e.id == id) {
            return Some(ElementRef::Transformer(i));
        }
        self.lines.iter().position(|e| e.id == id).map(ElementRef::Line)
    }

    pub fn injection(&self, id: &str) -> Option<&Injection> {
        self.injections.iter().find(|e| e.id == id)
    }

    pub fn injection_mut(&mut self, id: &str) -> Option<&mut Injection> {
        self.injections.iter_mut().find(|e| e.id == id)
    }

    pub fn transformer_mut(&mut self, id: &str) -> Option<&mut Transformer> {
        self.transformers.iter_mut().find(|e| e.id == id)
    }

    pub fn line_mut(&mut self, id: &str) -> Option<&mut Line> {
        self.lines.iter_mut().find(|e| e.id == id)
    }

    /// Checks structural invariants; collects every violation.
    pub fn validate(&self) -> Result<(), GridError> {
        let mut problems = Vec::new();
        if self.format != GRID_FORMAT || self.version != GRID_FORMAT_VERSION {
            return Err(GridError::UnsupportedFormat { format: self.format.clone(), version: self.version });
        }
        let mut ids = BTreeSet::new();
        let all_ids = self
            .buses
            .iter()
            .map(|b| &b.id)
            .chain(self.lines.iter().map(|l| &l.id))
            .chain(self.transformers.iter().map(|t| &t.id))
            .chain(self.injections.iter().map(|i| &i.id));
        for id in all_ids {
            if !ids.insert(id.as_str()) {
                problems.push(format!("duplicate id {id}"));
            }
        }
        let buses = self.bus_index();
        let known = |bus: &str, owner: &str, problems: &mut Vec<String>| {
            if !buses.contains_key(bus) {
                problems.push(format!("{owner} references unknown bus {bus}"));
            }
        };
        if !buses.contains_key(self.slack_bus.as_str()) {
            problems.push(format!("slack bus {} does not exist", self.slack_bus));
        }
        if !(self.slack_voltage.is_finite() && self.slack_voltage > 0.0) {
            problems.push("slack voltage must be positive".into());
        }
        for l in &self.lines {
            known(&l.from_bus, &l.id, &mut problems);
            known(&l.to_bus, &l.id, &mut problems);
            if !(l.r >= 0.0) || l.x == 0.0 || !l.x.is_finite() || !(l.s_max > 0.0) || !l.b.is_finite() {
                problems.push(format!("{}: need r >= 0, x != 0, s_max > 0", l.id));
            }
        }
        for t in &self.transformers {
            known(&t.hv_bus, &t.id, &mut problems);
            known(&t.lv_bus, &t.id, &mut problems);
            if !(t.r >= 0.0) || t.x == 0.0 || !t.x.is_finite() || !(t.s_max > 0.0) {
                problems.push(format!("{}: need r >= 0, x != 0, s_max > 0", t.id));
            }
            if t.tap_min > t.tap_max || !(t.tap_min..=t.tap_max).contains(&t.tap) {
                problems.push(format!("{}: tap {} outside [{}, {}]", t.id, t.tap, t.tap_min, t.tap_max));
            }
            if !(t.tap_min..=t.tap_max).contains(&t.tap_neutral) {
                problems.push(format!("{}: neutral tap outside range", t.id));
            }
            let extremes = [t.tap_min, t.tap_max].map(|tap| 1.0 + f64::from(tap - t.tap_neutral) * t.tap_step);
            if extremes.iter().any(|r| !(*r > 0.0)) {
                problems.push(format!("{}: tap ratio must stay positive", t.id));
            }
        }
        for i in &self.injections {
            known(&i.bus, &i.id, &mut problems);
            if !(i.p_nominal_kw > 0.0 && i.p_nominal_kw.is_finite()) {
                problems.push(format!("{}: nominal power must be positive", i.id));
            }
            if !(i.cos_phi > 0.0 && i.cos_phi <= 1.0) {
                problems.push(format!("{}: cos phi must lie in (0, 1]", i.id));
            }
            if !(0.0..=1.0).contains(&i.scaling) {
                problems.push(format!("{}: scaling must lie in [0, 1]", i.id));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GridError::Invalid(problems.join("; ")))
        }
    }

    /// Serializes to the canonical grid document (sorted keys, shortest
    /// round-trip floats). `from_document(to_document(m))` reproduces `m`
    /// exactly and re-serializes to identical bytes.
    pub fn to_document(&self) -> String {
        let value = serde_json::to_value(self).expect("grid model serializes");
        let mut text = serde_json::to_string_pretty(&value).expect("json value serializes");
        text.push('\n');
        text
    }

    pub fn from_document(text: &str) -> Result<Self, GridError> {
        let model: GridModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }
}
