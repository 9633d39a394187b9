//! Domain-free interface between agents and the simulated grid.
//!
//! Agents see opaque sensor and actuator ids (`s000`, `a000`, ...) and their
//! spaces, nothing else. Each step the environment applies defender
//! setpoints, then attacker setpoints (the attacker overrides), runs the
//! protection cascade, settles coins and reports fresh readings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctf::{CoinLedger, LedgerSnapshot, OfflineElement};
use crate::grid::{GridModel, InjectionKind, PowerFlowOptions, PowerFlowSolution};
use crate::protection::{check_and_cascade, ConstraintConfig, ElementKind, EventLog};
use crate::reward::{performance, RewardError, RewardParams, SensorSnapshot};
use crate::spaces::{ActuatorSetpoint, Port, SensorReading, Space, SpaceValue};

/// Number of positions in the discrete view of a scaling actuator (10 % steps).
pub const SCALING_STEPS: u32 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Attacker,
    Defender,
}

/// How scaling actuators are presented to an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorView {
    Continuous,
    Discrete,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("environment is terminated; reset before stepping")]
    Terminated,
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("agent {agent}: setpoint for actuator {actuator} rejected: {reason}")]
    InvalidSetpoint { agent: String, actuator: String, reason: String },
    #[error("base case violates grid constraints ({0} disconnections at reset)")]
    UnhealthyBaseCase(usize),
    #[error("wiring error: {0}")]
    Wiring(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Which elements an agent senses and controls, by glob over element ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentWiringSpec {
    pub name: String,
    pub role: Role,
    pub sensors: Vec<String>,
    pub actuators: Vec<String>,
    pub view: ActuatorView,
    pub reward: RewardParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensorSource {
    BusVoltage { bus: String },
    RelativePower { injection: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorWiring {
    pub id: String,
    /// Element the sensor was derived from.
    pub element: String,
    pub source: SensorSource,
    pub space: Space,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Control {
    /// Scaling in `[0, 1]`; `steps` is set for the discrete view.
    Scaling { steps: Option<u32> },
    /// Discrete index `i` selects tap `tap_min + i`.
    Tap { tap_min: i32, tap_neutral: i32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorWiring {
    pub id: String,
    pub element: String,
    pub element_kind: ElementKind,
    pub control: Control,
    pub space: Space,
}

impl ActuatorWiring {
    /// The setpoint that leaves the element at its base-case state
    /// (full scaling, neutral tap).
    pub fn neutral(&self) -> SpaceValue {
        match (&self.control, &self.space) {
            (Control::Scaling { steps: Some(n) }, _) => SpaceValue::Discrete(i64::from(*n) - 1),
            (Control::Scaling { steps: None }, _) => SpaceValue::scalar(1.0),
            (Control::Tap { tap_min, tap_neutral }, _) => SpaceValue::Discrete(i64::from(tap_neutral - tap_min)),
        }
    }

    /// |setpoint - neutral| in the actuator's physical unit: scaling
    /// fraction for loads and generators, tap positions for transformers.
    pub fn deviation(&self, value: &SpaceValue) -> f64 {
        match &self.control {
            Control::Scaling { steps } => {
                let scaling = match (steps, value) {
                    (Some(n), SpaceValue::Discrete(i)) => *i as f64 / f64::from(n - 1),
                    (_, v) => v.as_scalar(),
                };
                (1.0 - scaling).abs()
            }
            Control::Tap { tap_min, tap_neutral } => (value.as_scalar() - f64::from(tap_neutral - tap_min)).abs(),
        }
    }
}

/// Everything an environment knows about one agent's ports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentWiring {
    pub name: String,
    pub role: Role,
    pub reward: RewardParams,
    pub sensors: Vec<SensorWiring>,
    pub actuators: Vec<ActuatorWiring>,
}

impl AgentWiring {
    /// The agent-visible part: opaque ids and spaces only.
    pub fn interface(&self) -> AgentInterface {
        AgentInterface {
            sensors: self.sensors.iter().map(|s| Port { id: s.id.clone(), space: s.space.clone() }).collect(),
            actuators: self.actuators.iter().map(|a| Port { id: a.id.clone(), space: a.space.clone() }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentInterface {
    pub sensors: Vec<Port>,
    pub actuators: Vec<Port>,
}

pub type JointActions = BTreeMap<String, Vec<ActuatorSetpoint>>;
pub type AgentReadings = BTreeMap<String, Vec<SensorReading>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetOutcome {
    pub interfaces: BTreeMap<String, AgentInterface>,
    pub readings: AgentReadings,
    pub ledger: LedgerSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepOutcome {
    /// Index of the step just executed.
    pub step: u64,
    pub readings: AgentReadings,
    pub rewards: BTreeMap<String, f64>,
    pub events: EventLog,
    pub ledger: LedgerSnapshot,
    pub terminated: bool,
    /// Raw values of readings that were clamped into their space, per agent.
    pub unclamped: BTreeMap<String, BTreeMap<String, f64>>,
}

/// The abstract environment interface; the grid is one implementation.
pub trait Environment: Send {
    fn reset(&mut self) -> Result<ResetOutcome, EnvError>;
    fn step(&mut self, joint: &JointActions) -> Result<StepOutcome, EnvError>;
    fn interfaces(&self) -> BTreeMap<String, AgentInterface>;
    fn wiring(&self) -> Vec<AgentWiring>;
    fn terminated(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEnvConfig {
    pub grid: GridModel,
    pub constraints: ConstraintConfig,
    pub power_flow: PowerFlowOptions,
    pub horizon: u64,
}

pub fn voltage_sensor_space() -> Space {
    Space::interval(0.85, 1.15).expect("static bounds")
}

fn relative_power_space() -> Space {
    Space::interval(0.0, 1.0).expect("static bounds")
}

fn compile(patterns: &[String]) -> Result<Vec<glob::Pattern>, EnvError> {
    patterns
        .iter()
        .map(|p| glob::Pattern::new(p).map_err(|e| EnvError::Wiring(format!("bad selector {p:?}: {e}"))))
        .collect()
}

fn selected(patterns: &[glob::Pattern], id: &str) -> bool {
    patterns.iter().any(|p| p.matches(id))
}

/// Derives one agent's sensors and actuators from its selectors.
pub fn wire_agent(grid: &GridModel, spec: &AgentWiringSpec) -> Result<AgentWiring, EnvError> {
    let sensor_patterns = compile(&spec.sensors)?;
    let actuator_patterns = compile(&spec.actuators)?;
    let mut sensors = Vec::new();
    let mut actuators = Vec::new();

    enum Elem<'a> {
        Injection(&'a crate::grid::Injection),
        Transformer(&'a crate::grid::Transformer),
        Line(&'a crate::grid::Line),
    }
    let mut elements: Vec<(&str, Elem)> = grid
        .injections
        .iter()
        .map(|i| (i.id.as_str(), Elem::Injection(i)))
        .chain(grid.transformers.iter().map(|t| (t.id.as_str(), Elem::Transformer(t))))
        .chain(grid.lines.iter().map(|l| (l.id.as_str(), Elem::Line(l))))
        .collect();
    elements.sort_by(|a, b| a.0.cmp(b.0));

    for (id, elem) in &elements {
        if selected(&sensor_patterns, id) {
            let mut push = |source: SensorSource, space: Space| {
                sensors.push(SensorWiring {
                    id: format!("s{:03}", sensors.len()),
                    element: id.to_string(),
                    source,
                    space,
                })
            };
            match elem {
                Elem::Injection(i) => {
                    push(SensorSource::BusVoltage { bus: i.bus.clone() }, voltage_sensor_space());
                    push(SensorSource::RelativePower { injection: i.id.clone() }, relative_power_space());
                }
                Elem::Transformer(t) => {
                    push(SensorSource::BusVoltage { bus: t.lv_bus.clone() }, voltage_sensor_space())
                }
                Elem::Line(l) => push(SensorSource::BusVoltage { bus: l.to_bus.clone() }, voltage_sensor_space()),
            }
        }
        if selected(&actuator_patterns, id) {
            let next_id = format!("a{:03}", actuators.len());
            match elem {
                Elem::Injection(i) => {
                    let (control, space) = match spec.view {
                        ActuatorView::Continuous => (Control::Scaling { steps: None }, relative_power_space()),
                        ActuatorView::Discrete => (
                            Control::Scaling { steps: Some(SCALING_STEPS) },
                            Space::discrete(SCALING_STEPS).expect("static"),
                        ),
                    };
                    let element_kind = match i.kind {
                        InjectionKind::Load => ElementKind::Load,
                        InjectionKind::Sgen => ElementKind::Sgen,
                    };
                    actuators.push(ActuatorWiring { id: next_id, element: i.id.clone(), element_kind, control, space });
                }
                Elem::Transformer(t) => {
                    let space =
                        Space::discrete(t.tap_positions()).map_err(|e| EnvError::Wiring(format!("{}: {e}", t.id)))?;
                    actuators.push(ActuatorWiring {
                        id: next_id,
                        element: t.id.clone(),
                        element_kind: ElementKind::Transformer,
                        control: Control::Tap { tap_min: t.tap_min, tap_neutral: t.tap_neutral },
                        space,
                    });
                }
                Elem::Line(_) => {}
            }
        }
    }
    if sensors.is_empty() {
        return Err(EnvError::Wiring(format!("agent {}: sensor selectors match no element", spec.name)));
    }
    if actuators.is_empty() {
        return Err(EnvError::Wiring(format!("agent {}: actuator selectors match no element", spec.name)));
    }
    Ok(AgentWiring { name: spec.name.clone(), role: spec.role, reward: spec.reward.clone(), sensors, actuators })
}

/// Checks a joint action against the agents' actuator spaces.
pub fn validate_joint(wiring: &[AgentWiring], joint: &JointActions) -> Result<(), EnvError> {
    for (agent, setpoints) in joint {
        let w = wiring.iter().find(|w| &w.name == agent).ok_or_else(|| EnvError::UnknownAgent(agent.clone()))?;
        let mut seen = BTreeSet::new();
        for sp in setpoints {
            let reject =
                |reason: String| EnvError::InvalidSetpoint { agent: agent.clone(), actuator: sp.id.clone(), reason };
            let Some(act) = w.actuators.iter().find(|a| a.id == sp.id) else {
                return Err(reject("unknown actuator".into()));
            };
            if !seen.insert(&sp.id) {
                return Err(reject("duplicate setpoint".into()));
            }
            match act.space.contains(&sp.value) {
                Ok(true) => {}
                Ok(false) => return Err(reject(format!("value outside {}", act.space))),
                Err(e) => return Err(reject(e.to_string())),
            }
        }
    }
    Ok(())
}

/// Reward of every agent for the given readings.
pub fn rewards_for(wiring: &[AgentWiring], readings: &AgentReadings) -> Result<BTreeMap<String, f64>, EnvError> {
    let mut out = BTreeMap::new();
    for w in wiring {
        let ports = w.interface().sensors;
        let empty = Vec::new();
        let r = readings.get(&w.name).unwrap_or(&empty);
        let snapshot = SensorSnapshot::extract(&ports, r, &w.reward.select)?;
        out.insert(w.name.clone(), performance(&w.reward, w.role == Role::Attacker, &snapshot)?);
    }
    Ok(out)
}

pub struct GridEnvironment {
    config: GridEnvConfig,
    wiring: Vec<AgentWiring>,
    model: GridModel,
    solution: Option<PowerFlowSolution>,
    ledger: CoinLedger,
    step: u64,
    terminated: bool,
}

impl GridEnvironment {
    pub fn new(config: GridEnvConfig, agents: &[AgentWiringSpec]) -> Result<Self, EnvError> {
        if config.horizon == 0 {
            return Err(EnvError::Config("horizon must be positive".into()));
        }
        config.constraints.validate().map_err(|e| EnvError::Config(e.to_string()))?;
        config.grid.validate().map_err(|e| EnvError::Config(e.to_string()))?;
        let mut names = BTreeSet::new();
        for a in agents {
            if !names.insert(a.name.as_str()) {
                return Err(EnvError::Wiring(format!("duplicate agent {}", a.name)));
            }
            a.reward.validate()?;
        }
        let wiring = agents.iter().map(|a| wire_agent(&config.grid, a)).collect::<Result<Vec<_>, _>>()?;
        let model = config.grid.clone();
        let ledger = CoinLedger::new(config.horizon);
        Ok(Self { config, wiring, model, solution: None, ledger, step: 0, terminated: true })
    }

    pub fn model(&self) -> &GridModel {
        &self.model
    }

    pub fn ledger(&self) -> &CoinLedger {
        &self.ledger
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    fn readings(&self) -> (AgentReadings, BTreeMap<String, BTreeMap<String, f64>>) {
        let solution = self.solution.as_ref().expect("solved after reset");
        let bus_index = self.model.bus_index();
        let mut readings = BTreeMap::new();
        let mut unclamped = BTreeMap::new();
        for w in &self.wiring {
            let mut rs = Vec::with_capacity(w.sensors.len());
            let mut raw_values = BTreeMap::new();
            for s in &w.sensors {
                let raw = match &s.source {
                    SensorSource::BusVoltage { bus } => {
                        let b = bus_index[bus.as_str()];
                        if solution.energized[b] {
                            solution.vm[b]
                        } else {
                            0.0
                        }
                    }
                    SensorSource::RelativePower { injection } => {
                        let inj = self.model.injection(injection).expect("wired element exists");
                        if inj.in_service {
                            inj.scaling
                        } else {
                            0.0
                        }
                    }
                };
                let value = match &s.space {
                    Space::Box(b) => b.clamp(&[raw])[0],
                    Space::Discrete(_) => unreachable!("grid sensors are boxes"),
                };
                if value != raw {
                    raw_values.insert(s.id.clone(), if raw.is_finite() { raw } else { 0.0 });
                }
                rs.push(SensorReading { id: s.id.clone(), value: SpaceValue::scalar(value) });
            }
            readings.insert(w.name.clone(), rs);
            if !raw_values.is_empty() {
                unclamped.insert(w.name.clone(), raw_values);
            }
        }
        (readings, unclamped)
    }

    fn apply(&mut self, wiring: &AgentWiring, setpoints: &[ActuatorSetpoint]) {
        for sp in setpoints {
            let act = wiring.actuators.iter().find(|a| a.id == sp.id).expect("validated");
            match &act.control {
                Control::Scaling { steps } => {
                    let Some(inj) = self.model.injection_mut(&act.element) else { continue };
                    if !inj.in_service {
                        continue;
                    }
                    inj.scaling = match (steps, &sp.value) {
                        (Some(n), SpaceValue::Discrete(i)) => Space::interval(0.0, 1.0)
                            .expect("static")
                            .discretize_setpoint(*i, *n)
                            .expect("validated index"),
                        (_, v) => v.as_scalar(),
                    };
                }
                Control::Tap { tap_min, .. } => {
                    let Some(tr) = self.model.transformer_mut(&act.element) else { continue };
                    if !tr.in_service {
                        continue;
                    }
                    tr.tap = tap_min + sp.value.as_index().expect("validated discrete") as i32;
                }
            }
        }
    }
}

impl Environment for GridEnvironment {
    fn reset(&mut self) -> Result<ResetOutcome, EnvError> {
        self.model = self.config.grid.clone();
        for inj in &mut self.model.injections {
            inj.scaling = 1.0;
        }
        for tr in &mut self.model.transformers {
            tr.tap = tr.tap_neutral;
        }
        self.ledger = CoinLedger::new(self.config.horizon);
        self.step = 0;
        let outcome = check_and_cascade(self.model.clone(), &self.config.constraints, &self.config.power_flow, 0);
        if !outcome.log.events.is_empty() || !outcome.solution.converged {
            self.terminated = true;
            return Err(EnvError::UnhealthyBaseCase(outcome.log.events.len()));
        }
        self.solution = Some(outcome.solution);
        self.terminated = false;
        let (readings, _) = self.readings();
        Ok(ResetOutcome { interfaces: self.interfaces(), readings, ledger: self.ledger.snapshot() })
    }

    fn step(&mut self, joint: &JointActions) -> Result<StepOutcome, EnvError> {
        if self.terminated {
            return Err(EnvError::Terminated);
        }
        validate_joint(&self.wiring, joint)?;
        let wiring = self.wiring.clone();
        for role in [Role::Defender, Role::Attacker] {
            for w in wiring.iter().filter(|w| w.role == role) {
                if let Some(setpoints) = joint.get(&w.name) {
                    self.apply(w, setpoints);
                }
            }
        }
        let outcome =
            check_and_cascade(self.model.clone(), &self.config.constraints, &self.config.power_flow, self.step);
        self.model = outcome.model;
        self.solution = Some(outcome.solution);
        let offline: Vec<OfflineElement> = self
            .model
            .injections
            .iter()
            .filter(|i| !i.in_service)
            .map(|i| OfflineElement { id: i.id.clone(), p_nominal_kw: i.p_nominal_kw })
            .collect();
        self.ledger.accrue(&outcome.log.events, &offline, self.step);
        let executed = self.step;
        self.step += 1;
        self.terminated = self.step >= self.config.horizon || self.ledger.attacker_won();
        let (readings, unclamped) = self.readings();
        let rewards = rewards_for(&self.wiring, &readings)?;
        Ok(StepOutcome {
            step: executed,
            readings,
            rewards,
            events: outcome.log,
            ledger: self.ledger.snapshot(),
            terminated: self.terminated,
            unclamped,
        })
    }

    fn interfaces(&self) -> BTreeMap<String, AgentInterface> {
        self.wiring.iter().map(|w| (w.name.clone(), w.interface())).collect()
    }

    fn wiring(&self) -> Vec<AgentWiring> {
        self.wiring.clone()
    }

    fn terminated(&self) -> bool {
        self.terminated
    }
}

/// A small stand-in environment for orchestration tests.
///
/// Each agent has one voltage-like sensor and one `Discrete(3)` actuator.
/// The shared "voltage" moves by 0.02 per unit of net push (index - 1),
/// attacker pushes counting against defender pushes. The attacker collects
/// one coin for every step the level sits outside `[0.95, 1.05]`.
pub struct MockEnvironment {
    agents: Vec<(String, Role)>,
    horizon: u64,
    level: f64,
    step: u64,
    ledger: CoinLedger,
    terminated: bool,
}

impl MockEnvironment {
    pub fn new(agents: Vec<(String, Role)>, horizon: u64) -> Self {
        Self { agents, horizon, level: 1.0, step: 0, ledger: CoinLedger::new(horizon.max(1)), terminated: true }
    }

    fn wiring_for(&self, name: &str, role: Role) -> AgentWiring {
        AgentWiring {
            name: name.to_string(),
            role,
            reward: RewardParams::default(),
            sensors: vec![SensorWiring {
                id: "s000".into(),
                element: "mock/level".into(),
                source: SensorSource::BusVoltage { bus: "mock".into() },
                space: voltage_sensor_space(),
            }],
            actuators: vec![ActuatorWiring {
                id: "a000".into(),
                element: format!("mock/{name}"),
                element_kind: ElementKind::Load,
                control: Control::Tap { tap_min: -1, tap_neutral: 0 },
                space: Space::discrete(3).expect("static"),
            }],
        }
    }

    fn readings(&self) -> AgentReadings {
        let v = self.level.clamp(0.85, 1.15);
        self.agents
            .iter()
            .map(|(n, _)| (n.clone(), vec![SensorReading { id: "s000".into(), value: SpaceValue::scalar(v) }]))
            .collect()
    }
}

impl Environment for MockEnvironment {
    fn reset(&mut self) -> Result<ResetOutcome, EnvError> {
        self.level = 1.0;
        self.step = 0;
        self.ledger = CoinLedger::new(self.horizon.max(1));
        self.terminated = self.horizon == 0;
        Ok(ResetOutcome { interfaces: self.interfaces(), readings: self.readings(), ledger: self.ledger.snapshot() })
    }

    fn step(&mut self, joint: &JointActions) -> Result<StepOutcome, EnvError> {
        if self.terminated {
            return Err(EnvError::Terminated);
        }
        let wiring = self.wiring();
        validate_joint(&wiring, joint)?;
        for (name, role) in &self.agents {
            let push: f64 = joint
                .get(name)
                .into_iter()
                .flatten()
                .filter_map(|sp| sp.value.as_index())
                .map(|i| (i - 1) as f64)
                .sum();
            let sign = if *role == Role::Attacker { -1.0 } else { 1.0 };
            self.level += sign * 0.02 * push;
        }
        let mut events = EventLog::default();
        if !(0.95..=1.05).contains(&self.level) {
            events.events.push(crate::protection::DisconnectionEvent {
                // each excursion trips a distinct element
                element: format!("mock/line/{}", self.step),
                kind: ElementKind::Line,
                step: self.step,
                cause: crate::protection::DisconnectCause::Overload,
            });
        }
        self.ledger.accrue(&events.events, &[], self.step);
        let executed = self.step;
        self.step += 1;
        self.terminated = self.step >= self.horizon || self.ledger.attacker_won();
        let readings = self.readings();
        let rewards = rewards_for(&wiring, &readings)?;
        Ok(StepOutcome {
            step: executed,
            readings,
            rewards,
            events,
            ledger: self.ledger.snapshot(),
            terminated: self.terminated,
            unclamped: BTreeMap::new(),
        })
    }

    fn interfaces(&self) -> BTreeMap<String, AgentInterface> {
        self.wiring().iter().map(|w| (w.name.clone(), w.interface())).collect()
    }

    fn wiring(&self) -> Vec<AgentWiring> {
        self.agents.iter().map(|(n, r)| self.wiring_for(n, *r)).collect()
    }

    fn terminated(&self) -> bool {
        self.terminated
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::generate_synthetic_city_grid;

    fn spec(name: &str, role: Role, selectors: &[&str], view: ActuatorView) -> AgentWiringSpec {
        let s: Vec<String> = selectors.iter().map(|s| s.to_string()).collect();
        AgentWiringSpec {
            name: name.into(),
            role,
            sensors: s.clone(),
            actuators: s,
            view,
            reward: RewardParams::default(),
        }
    }

    fn env(view: ActuatorView) -> GridEnvironment {
        let config = GridEnvConfig {
            grid: generate_synthetic_city_grid(1),
            constraints: ConstraintConfig::default(),
            power_flow: PowerFlowOptions::default(),
            horizon: 5,
        };
        GridEnvironment::new(
            config,
            &[
                spec("attacker", Role::Attacker, &["load/*", "sgen/*"], view),
                spec("defender", Role::Defender, &["load/*", "sgen/*", "trafo/*"], view),
            ],
        )
        .unwrap()
    }

    fn identity(env: &GridEnvironment) -> JointActions {
        env.wiring()
            .iter()
            .map(|w| {
                let sps =
                    w.actuators.iter().map(|a| ActuatorSetpoint { id: a.id.clone(), value: a.neutral() }).collect();
                (w.name.clone(), sps)
            })
            .collect()
    }

    #[test]
    fn wiring_counts_and_opaque_ids() {
        let e = env(ActuatorView::Discrete);
        let w = e.wiring();
        assert_eq!(w[0].actuators.len(), 65);
        assert_eq!(w[1].actuators.len(), 65 + 22);
        assert_eq!(w[1].sensors.len(), 65 * 2 + 22);
        let interface = serde_json::to_string(&e.interfaces()).unwrap();
        for leak in ["load", "sgen", "trafo", "bus"] {
            assert!(!interface.contains(leak), "{leak} leaked into the agent interface");
        }
        let taps: Vec<_> = w[1].actuators.iter().filter(|a| a.element_kind == ElementKind::Transformer).collect();
        assert!(taps.iter().all(|a| a.space == Space::discrete(5).unwrap()));
        assert!(w[0].actuators.iter().all(|a| a.space == Space::discrete(11).unwrap()));
        let c = env(ActuatorView::Continuous);
        assert!(c.wiring()[0].actuators.iter().all(|a| a.space == Space::interval(0.0, 1.0).unwrap()));
    }

    #[test]
    fn reset_is_healthy_and_repeatable() {
        let mut e = env(ActuatorView::Discrete);
        let a = e.reset().unwrap();
        let b = e.reset().unwrap();
        assert_eq!(a, b);
        for (agent, readings) in &a.readings {
            let ports = &a.interfaces[agent].sensors;
            for (r, p) in readings.iter().zip(ports) {
                if p.space == voltage_sensor_space() {
                    let v = r.value.as_scalar();
                    assert!((0.95..=1.05).contains(&v), "{v}");
                }
            }
        }
        assert_eq!(a.ledger.defender, crate::ctf::INITIAL_BALANCE);
    }

    #[test]
    fn identity_actions_are_a_fixed_point_and_horizon_terminates() {
        let mut e = env(ActuatorView::Discrete);
        let start = e.reset().unwrap();
        let joint = identity(&e);
        for t in 0..5 {
            let out = e.step(&joint).unwrap();
            assert!(out.events.events.is_empty());
            assert_eq!(out.step, t);
            assert_eq!(out.terminated, t == 4);
            assert_eq!(out.readings, start.readings);
        }
        assert!(matches!(e.step(&joint), Err(EnvError::Terminated)));
    }

    #[test]
    fn simultaneous_extremes_violate_constraints() {
        let mut e = env(ActuatorView::Discrete);
        e.reset().unwrap();
        let w = e.wiring();
        let attack: Vec<_> = w[0]
            .actuators
            .iter()
            .map(|a| {
                let idx = if a.element_kind == ElementKind::Sgen { 0 } else { 10 };
                ActuatorSetpoint { id: a.id.clone(), value: SpaceValue::Discrete(idx) }
            })
            .collect();
        let joint = BTreeMap::from([("attacker".to_string(), attack)]);
        let out = e.step(&joint).unwrap();
        assert!(!out.events.events.is_empty());
        assert!(out.ledger.attacker.0 > 0);
        assert_eq!(out.ledger.attacker.0 + out.ledger.defender.0, crate::ctf::INITIAL_BALANCE.0);
    }

    #[test]
    fn attacker_overrides_defender() {
        let mut e = env(ActuatorView::Discrete);
        e.reset().unwrap();
        let w = e.wiring();
        let target = &w[0].actuators[0];
        let def_id = w[1].actuators.iter().find(|a| a.element == target.element).unwrap().id.clone();
        let joint = BTreeMap::from([
            ("attacker".to_string(), vec![ActuatorSetpoint { id: target.id.clone(), value: SpaceValue::Discrete(3) }]),
            ("defender".to_string(), vec![ActuatorSetpoint { id: def_id, value: SpaceValue::Discrete(8) }]),
        ]);
        e.step(&joint).unwrap();
        assert_eq!(e.model().injection(&target.element).unwrap().scaling, 0.3);
    }

    #[test]
    fn invalid_setpoints_name_the_actuator() {
        let mut e = env(ActuatorView::Discrete);
        e.reset().unwrap();
        let bad = BTreeMap::from([(
            "attacker".to_string(),
            vec![ActuatorSetpoint { id: "a007".into(), value: SpaceValue::Discrete(11) }],
        )]);
        match e.step(&bad) {
            Err(EnvError::InvalidSetpoint { actuator, .. }) => assert_eq!(actuator, "a007"),
            other => panic!("{other:?}"),
        }
        let unknown = BTreeMap::from([(
            "attacker".to_string(),
            vec![ActuatorSetpoint { id: "a999".into(), value: SpaceValue::Discrete(1) }],
        )]);
        assert!(matches!(e.step(&unknown), Err(EnvError::InvalidSetpoint { .. })));
        assert!(matches!(e.step(&BTreeMap::from([("ghost".to_string(), vec![])])), Err(EnvError::UnknownAgent(_))));
        // rejected steps do not advance time
        assert_eq!(e.current_step(), 0);
    }

    #[test]
    fn dark_buses_read_the_space_minimum() {
        let mut e = env(ActuatorView::Discrete);
        e.reset().unwrap();
        let w = e.wiring();
        let trafo = w[1].actuators.iter().find(|a| a.element == "trafo/mvlv/03").unwrap().element.clone();
        e.model.transformer_mut(&trafo).unwrap().in_service = false;
        let out = e.step(&BTreeMap::new()).unwrap();
        let lv = e.model().transformers.iter().find(|t| t.id == trafo).unwrap().lv_bus.clone();
        let dark_sensor =
            w[1].sensors.iter().find(|s| s.source == SensorSource::BusVoltage { bus: lv.clone() }).unwrap();
        let reading = out.readings["defender"].iter().find(|r| r.id == dark_sensor.id).unwrap();
        assert_eq!(reading.value, SpaceValue::scalar(0.85));
        assert_eq!(out.unclamped["defender"][&dark_sensor.id], 0.0);
    }

    #[test]
    fn readings_always_inside_their_space() {
        use rand::SeedableRng;
        let mut e = env(ActuatorView::Continuous);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let reset = e.reset().unwrap();
        let interfaces = reset.interfaces;
        while !e.terminated() {
            let joint: JointActions = e
                .wiring()
                .iter()
                .map(|w| {
                    let sps = w
                        .actuators
                        .iter()
                        .map(|a| ActuatorSetpoint { id: a.id.clone(), value: a.space.sample(&mut rng) })
                        .collect();
                    (w.name.clone(), sps)
                })
                .collect();
            let out = e.step(&joint).unwrap();
            for (agent, readings) in &out.readings {
                for (r, p) in readings.iter().zip(&interfaces[agent].sensors) {
                    assert!(p.space.contains(&r.value).unwrap());
                }
            }
        }
    }

    #[test]
    fn mock_environment_scores_excursions() {
        let mut m = MockEnvironment::new(vec![("att".into(), Role::Attacker), ("def".into(), Role::Defender)], 10);
        m.reset().unwrap();
        let push = |i| {
            BTreeMap::from([(
                "att".to_string(),
                vec![ActuatorSetpoint { id: "a000".into(), value: SpaceValue::Discrete(i) }],
            )])
        };
        let out = m.step(&push(0)).unwrap();
        assert!(out.events.events.is_empty());
        let out = m.step(&push(0)).unwrap();
        assert!(out.events.events.is_empty());
        let out = m.step(&push(0)).unwrap();
        assert_eq!(out.events.events.len(), 1);
        assert_eq!(out.ledger.attacker, crate::ctf::LINE_PAYOUT);
        assert!(out.rewards["att"] > -1.0);
    }
}
