use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::{Capability, StrategyRegistry, UpdateMode};
use crate::environment::{wire_agent, ActuatorView, AgentWiringSpec, Role};
use crate::grid::{generate_synthetic_city_grid, GridModel, PowerFlowOptions};
use crate::protection::ConstraintConfig;
use crate::reward::RewardParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub schema_version: u32,
    pub name: String,
    pub environment: EnvironmentSection,
    pub agents: Vec<AgentSection>,
    #[serde(default)]
    pub doe: DoeSection,
    #[serde(default)]
    pub execution: ExecutionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSource {
    /// Synthetic city grid from a fixed seed.
    Seed(u64),
    /// Synthetic city grid seeded per run from the run's master seed.
    PerRun,
    /// Grid document on disk, relative to the plan file.
    File(PathBuf),
    /// Inline grid document.
    Model(Box<GridModel>),
}

fn default_rounds() -> u32 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub grid: GridSource,
    pub horizon: u64,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default)]
    pub constraints: ConstraintConfig,
    #[serde(default)]
    pub power_flow: PowerFlowOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub kind: String,
    #[serde(default)]
    pub params: Value,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub name: String,
    pub role: Role,
    pub strategy: StrategySection,
    #[serde(default)]
    pub reward: RewardParams,
    /// Glob patterns over element ids, e.g. `load/*`.
    pub sensors: Vec<String>,
    pub actuators: Vec<String>,
    #[serde(default = "one")]
    pub workers: u32,
    #[serde(default)]
    pub update: UpdateMode,
    /// Defaults to the strategy's capability.
    #[serde(default)]
    pub view: Option<ActuatorView>,
}

impl AgentSection {
    pub fn wiring_spec(&self) -> AgentWiringSpec {
        AgentWiringSpec {
            name: self.name.clone(),
            role: self.role,
            sensors: self.sensors.clone(),
            actuators: self.actuators.clone(),
            view: self.view.unwrap_or(ActuatorView::Discrete),
            reward: self.reward.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoeSection {
    /// Dotted path into the plan (agents addressed by name) → values.
    #[serde(default)]
    pub axes: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub repetitions: Option<u32>,
}

impl DoeSection {
    pub fn seed_list(&self) -> Vec<u64> {
        match (&self.seeds, self.repetitions) {
            (Some(s), _) => s.clone(),
            (None, Some(n)) => (0..u64::from(n)).collect(),
            (None, None) => vec![0],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Loopback,
    Socket,
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionSection {
    #[serde(default = "one_usize")]
    pub parallelism: usize,
    #[serde(default)]
    pub transport: TransportKind,
    #[serde(default)]
    pub endpoints: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn one_usize() -> usize {
    1
}

impl Default for ExecutionSection {
    fn default() -> Self {
        Self { parallelism: 1, transport: TransportKind::Loopback, endpoints: vec![], timeout_ms: default_timeout_ms() }
    }
}

/// Every problem found in a plan, not just the first.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid plan: {}", .0.join("; "))]
pub struct PlanErrors(pub Vec<String>);

impl ExperimentPlan {
    /// Loads the grid a run point refers to. `base` resolves relative file paths.
    pub(crate) fn load_grid(source: &GridSource, base: Option<&Path>, run_seed: u64) -> Result<GridModel, String> {
        match source {
            GridSource::Seed(s) => Ok(generate_synthetic_city_grid(*s)),
            GridSource::PerRun => Ok(generate_synthetic_city_grid(run_seed)),
            GridSource::Model(m) => Ok((**m).clone()),
            GridSource::File(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                let text = std::fs::read_to_string(&path).map_err(|e| format!("grid file {}: {e}", path.display()))?;
                GridModel::from_document(&text).map_err(|e| format!("grid file {}: {e}", path.display()))
            }
        }
    }

    /// Fills strategy hyperparameters and actuator views with their
    /// defaults, so every axis path has something to address.
    pub(crate) fn normalized(&self, registry: &StrategyRegistry, errors: &mut Vec<String>) -> ExperimentPlan {
        let mut plan = self.clone();
        for a in &mut plan.agents {
            match registry.resolve(&a.strategy.kind, &a.strategy.params) {
                Ok(p) => a.strategy.params = p,
                Err(e) => errors.push(format!("agents.{}.strategy: {e}", a.name)),
            }
            if let Ok(entry) = registry.get(&a.strategy.kind) {
                let natural = match entry.capability {
                    Capability::Continuous => ActuatorView::Continuous,
                    Capability::DiscreteOnly => ActuatorView::Discrete,
                };
                match a.view {
                    None => a.view = Some(natural),
                    Some(ActuatorView::Continuous) if entry.capability == Capability::DiscreteOnly => {
                        errors.push(format!(
                            "agents.{}.view: strategy {} cannot drive continuous actuators",
                            a.name, a.strategy.kind
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        plan
    }

    /// Checks one concrete point (no axes involved).
    pub(crate) fn check_point(&self, base: Option<&Path>, errors: &mut Vec<String>) {
        let env = &self.environment;
        if env.horizon == 0 {
            errors.push("environment.horizon must be positive".into());
        }
        if env.rounds == 0 {
            errors.push("environment.rounds must be positive".into());
        }
        if let Err(e) = env.constraints.validate() {
            errors.push(format!("environment.constraints: {e}"));
        }
        if !(env.power_flow.tol > 0.0) || env.power_flow.max_iter == 0 {
            errors.push("environment.power_flow: tolerance and iteration cap must be positive".into());
        }
        let grid = match Self::load_grid(&env.grid, base, 0) {
            Ok(g) => Some(g),
            Err(e) => {
                errors.push(format!("environment.grid: {e}"));
                None
            }
        };
        let mut names = BTreeSet::new();
        for a in &self.agents {
            if a.name.is_empty() || a.name.contains('.') {
                errors.push(format!("agent name {:?} must be non-empty and free of dots", a.name));
            }
            if !names.insert(a.name.as_str()) {
                errors.push(format!("duplicate agent name {}", a.name));
            }
            if a.workers == 0 {
                errors.push(format!("agents.{}.workers must be at least 1", a.name));
            }
            if let Err(e) = a.reward.validate() {
                errors.push(format!("agents.{}.reward: {e}", a.name));
            }
            if let Some(g) = &grid {
                if let Err(e) = wire_agent(g, &a.wiring_spec()) {
                    errors.push(format!("agents.{}: {e}", a.name));
                }
            }
        }
        for role in [Role::Attacker, Role::Defender] {
            if !self.agents.iter().any(|a| a.role == role) {
                errors.push(format!("role coverage: plan needs at least one {role:?}").to_lowercase());
            }
        }
    }
}

fn segment_mut<'a>(value: &'a mut Value, segment: &str, parent: Option<&str>) -> Option<&'a mut Value> {
    match value {
        Value::Array(items) if parent == Some("agents") => {
            items.iter_mut().find(|a| a.get("name").and_then(Value::as_str) == Some(segment))
        }
        Value::Object(map) => map.get_mut(segment),
        _ => None,
    }
}

/// The value an axis path addresses inside a serialized plan.
pub(crate) fn resolve_path<'a>(plan: &'a mut Value, path: &str) -> Option<&'a mut Value> {
    let mut current = plan;
    let mut parent: Option<&str> = None;
    for seg in path.split('.') {
        current = segment_mut(current, seg, parent)?;
        parent = Some(seg);
    }
    Some(current)
}

/// Substitutes axis values into a normalized plan.
pub(crate) fn apply_point(plan: &Value, point: &BTreeMap<String, Value>) -> Result<ExperimentPlan, String> {
    let mut v = plan.clone();
    for (path, value) in point {
        let slot = resolve_path(&mut v, path).ok_or_else(|| format!("axis {path} does not resolve"))?;
        *slot = value.clone();
    }
    serde_json::from_value(v).map_err(|e| format!("axis point {point:?}: {e}"))
}

/// Parses and checks a plan document, collecting every violation.
pub fn validate_plan(
    text: &str,
    base: Option<&Path>,
    registry: &StrategyRegistry,
) -> Result<ExperimentPlan, PlanErrors> {
    let raw: Value = serde_json::from_str(text).map_err(|e| PlanErrors(vec![format!("not a JSON document: {e}")]))?;
    match raw.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => return Err(PlanErrors(vec![format!("unsupported schema_version {v}")])),
        None => return Err(PlanErrors(vec!["missing schema_version".into()])),
    }
    let plan: ExperimentPlan = serde_json::from_value(raw).map_err(|e| PlanErrors(vec![e.to_string()]))?;
    let mut errors = Vec::new();
    if plan.name.is_empty() || !plan.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        errors.push(format!("name {:?} must be non-empty and use only [A-Za-z0-9._-]", plan.name));
    }
    let normalized = plan.normalized(registry, &mut errors);
    normalized.check_point(base, &mut errors);

    let doe = &plan.doe;
    if doe.seeds.is_some() && doe.repetitions.is_some() {
        errors.push("doe: give either seeds or repetitions, not both".into());
    }
    if let Some(s) = &doe.seeds {
        if s.is_empty() {
            errors.push("doe.seeds must not be empty".into());
        }
        if s.iter().collect::<BTreeSet<_>>().len() != s.len() {
            errors.push("doe.seeds must be unique".into());
        }
    }
    if doe.repetitions == Some(0) {
        errors.push("doe.repetitions must be positive".into());
    }
    let base_value = serde_json::to_value(&normalized).expect("plan serializes");
    for (path, values) in &doe.axes {
        if !(path.starts_with("environment.") || path.starts_with("agents.")) {
            errors.push(format!("axis {path}: only environment.* and agents.* fields can vary"));
            continue;
        }
        if values.is_empty() {
            errors.push(format!("axis {path} is empty"));
            continue;
        }
        let mut probe = base_value.clone();
        if resolve_path(&mut probe, path).is_none() {
            errors.push(format!("axis {path} references an unknown field"));
            continue;
        }
        for value in values {
            let point = BTreeMap::from([(path.clone(), value.clone())]);
            match apply_point(&base_value, &point) {
                Ok(p) => {
                    let mut errs = Vec::new();
                    p.normalized(registry, &mut errs).check_point(base, &mut errs);
                    errors.extend(errs.into_iter().map(|e| format!("axis {path} = {value}: {e}")));
                }
                Err(e) => errors.push(e),
            }
        }
    }

    let ex = &plan.execution;
    if ex.parallelism == 0 {
        errors.push("execution.parallelism must be at least 1".into());
    }
    if ex.timeout_ms == 0 {
        errors.push("execution.timeout_ms must be positive".into());
    }
    if ex.transport == TransportKind::Socket {
        if ex.endpoints.is_empty() {
            errors.push("execution: socket transport requires endpoints".into());
        } else if let Err(e) = crate::transport::Transport::socket(&ex.endpoints) {
            errors.push(format!("execution.endpoints: {e}"));
        }
    }
    if errors.is_empty() {
        Ok(plan)
    } else {
        Err(PlanErrors(errors))
    }
}

/// Reads and validates a plan file; relative grid paths resolve against its directory.
pub fn load_plan(path: &Path, registry: &StrategyRegistry) -> Result<ExperimentPlan, PlanErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| PlanErrors(vec![format!("{}: {e}", path.display())]))?;
    let mut plan = validate_plan(&text, path.parent(), registry)?;
    if let GridSource::File(p) = &plan.environment.grid {
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                plan.environment.grid = GridSource::File(dir.join(p));
            }
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::default_registry;
    use serde_json::json;

    pub(crate) fn minimal() -> Value {
        json!({
            "schema_version": 1,
            "name": "mini",
            "environment": {"grid": {"seed": 1}, "horizon": 5, "rounds": 2},
            "agents": [
                {"name": "attacker", "role": "attacker", "strategy": {"kind": "random"},
                 "sensors": ["load/*", "sgen/*"], "actuators": ["load/*", "sgen/*"]},
                {"name": "defender", "role": "defender", "strategy": {"kind": "random"},
                 "sensors": ["load/*", "sgen/*", "trafo/*"], "actuators": ["load/*", "sgen/*", "trafo/*"]}
            ],
            "doe": {"seeds": [1]}
        })
    }

    fn check(v: &Value) -> Result<ExperimentPlan, PlanErrors> {
        validate_plan(&v.to_string(), None, &default_registry())
    }

    #[test]
    fn minimal_plan_is_accepted() {
        let p = check(&minimal()).unwrap();
        assert_eq!(p.environment.rounds, 2);
        assert_eq!(p.doe.seed_list(), vec![1]);
    }

    #[test]
    fn missing_defender_is_a_role_coverage_error() {
        let mut v = minimal();
        v["agents"].as_array_mut().unwrap().pop();
        let e = check(&v).unwrap_err();
        assert!(e.0.iter().any(|m| m.contains("role coverage") && m.contains("defender")), "{e}");
    }

    #[test]
    fn sigma_axis_is_recorded() {
        let mut v = minimal();
        v["doe"]["axes"] = json!({"agents.defender.reward.sigma": [0.03, 0.05]});
        let p = check(&v).unwrap();
        assert_eq!(p.doe.axes["agents.defender.reward.sigma"].len(), 2);
    }

    #[test]
    fn all_violations_are_reported() {
        let mut v = minimal();
        v["environment"]["horizon"] = json!(0);
        v["agents"][0]["strategy"]["kind"] = json!("a3c");
        v["doe"]["axes"] = json!({"agents.defender.reward.nope": [1], "agents.defender.reward.sigma": [-1.0]});
        let e = check(&v).unwrap_err();
        let text = e.to_string();
        assert!(text.contains("horizon"), "{text}");
        assert!(text.contains("a3c"), "{text}");
        assert!(text.contains("unknown field"), "{text}");
        assert!(text.contains("sigma = -1.0"), "{text}");
    }

    #[test]
    fn schema_version_and_transport_are_checked() {
        let mut v = minimal();
        v["schema_version"] = json!(9);
        assert!(check(&v).unwrap_err().0[0].contains("schema_version"));
        let mut v = minimal();
        v["execution"] = json!({"transport": "socket"});
        assert!(check(&v).unwrap_err().to_string().contains("endpoints"));
        let mut v = minimal();
        v["agents"][0]["view"] = json!("continuous");
        v["agents"][0]["strategy"]["kind"] = json!("tabular_q");
        assert!(check(&v).unwrap_err().to_string().contains("continuous"));
    }

    #[test]
    fn hyperparameter_axes_resolve_through_defaults() {
        let mut v = minimal();
        v["agents"][0]["strategy"] = json!({"kind": "tabular_q"});
        v["doe"]["axes"] = json!({"agents.attacker.strategy.params.epsilon_start": [0.1, 0.2, 0.3]});
        check(&v).unwrap();
    }
}
