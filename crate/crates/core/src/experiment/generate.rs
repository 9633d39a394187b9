use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::plan::{apply_point, AgentSection, EnvironmentSection, ExperimentPlan, GridSource, PlanErrors};
use crate::agents::StrategyRegistry;

pub const SOFTWARE_VERSION: &str = concat!("arl-core ", env!("CARGO_PKG_VERSION"));

/// Keyed hash of a master seed and a component name.
pub fn derive_seed(master: u64, component: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_be_bytes());
    h.update(component.as_bytes());
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// One fully concrete run: no axes, no file references left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDescriptor {
    pub run_id: String,
    pub plan: String,
    pub point: BTreeMap<String, Value>,
    pub seed: u64,
    /// Per-component seeds: `grid` and `agent/<name>`.
    pub seeds: BTreeMap<String, u64>,
    pub environment: EnvironmentSection,
    pub agents: Vec<AgentSection>,
    pub software: String,
}

impl RunDescriptor {
    pub fn agent_seed(&self, name: &str) -> u64 {
        self.seeds[&format!("agent/{name}")]
    }

    /// Number of environment instances stepped in lock-step: one per
    /// worker of the widest agent.
    pub fn environments(&self) -> u32 {
        self.agents.iter().map(|a| a.workers).max().unwrap_or(1)
    }
}

fn run_id(plan: &Value, point: &BTreeMap<String, Value>, seed: u64) -> String {
    let doc = json!({"plan": plan, "point": point, "seed": seed});
    let digest = Sha256::digest(serde_json::to_vec(&doc).expect("value serializes"));
    hex::encode(&digest[..8])
}

/// Full cross product of the axes (sorted by path, first axis slowest)
/// times the seed list (fastest).
pub fn generate_runs(
    plan: &ExperimentPlan,
    base: Option<&Path>,
    registry: &StrategyRegistry,
) -> Result<Vec<RunDescriptor>, PlanErrors> {
    let mut errors = Vec::new();
    let normalized = plan.normalized(registry, &mut errors);
    if !errors.is_empty() {
        return Err(PlanErrors(errors));
    }
    let mut identity = normalized.clone();
    identity.execution = Default::default();
    let mut plan_value = serde_json::to_value(&identity).expect("plan serializes");
    if let Some(o) = plan_value.as_object_mut() {
        o.remove("execution");
        o.remove("doe");
    }
    let axes: Vec<(&String, &Vec<Value>)> = plan.doe.axes.iter().collect();
    if let Some((path, _)) = axes.iter().find(|(_, v)| v.is_empty()) {
        return Err(PlanErrors(vec![format!("axis {path} is empty")]));
    }

    let mut points: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
    for (path, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert((*path).clone(), v.clone());
                    q
                })
            })
            .collect();
    }

    let mut runs = Vec::new();
    for point in &points {
        let concrete = apply_point(&plan_value_with_sections(&normalized), point).map_err(|e| PlanErrors(vec![e]))?;
        for &seed in &plan.doe.seed_list() {
            let mut seeds = BTreeMap::new();
            seeds.insert("grid".to_string(), derive_seed(seed, "grid"));
            for a in &concrete.agents {
                seeds.insert(format!("agent/{}", a.name), derive_seed(seed, &format!("agent/{}", a.name)));
            }
            let mut environment = concrete.environment.clone();
            let grid =
                ExperimentPlan::load_grid(&environment.grid, base, seeds["grid"]).map_err(|e| PlanErrors(vec![e]))?;
            environment.grid = match environment.grid {
                GridSource::Seed(s) => GridSource::Seed(s),
                GridSource::PerRun => GridSource::Seed(seeds["grid"]),
                _ => GridSource::Model(Box::new(grid)),
            };
            runs.push(RunDescriptor {
                run_id: run_id(&plan_value, point, seed),
                plan: plan.name.clone(),
                point: point.clone(),
                seed,
                seeds,
                environment,
                agents: concrete.agents.clone(),
                software: SOFTWARE_VERSION.to_string(),
            });
        }
    }
    Ok(runs)
}

fn plan_value_with_sections(plan: &ExperimentPlan) -> Value {
    serde_json::to_value(plan).expect("plan serializes")
}
