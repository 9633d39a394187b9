use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::{
    AgentError, Capability, ExperienceBatch, FixedParams, FixedStrategy, Parameters, RandomStrategy, Strategy,
    StrategyMutator, TabularQ, TabularQMutator, TabularQParams,
};

type StrategyBuilder = dyn Fn(&Value, u64) -> Result<Box<dyn Strategy>, AgentError> + Send + Sync;
type MutatorBuilder = dyn Fn(&Value) -> Result<Box<dyn StrategyMutator>, AgentError> + Send + Sync;

pub struct StrategyEntry {
    pub capability: Capability,
    /// Fully populated hyperparameter object.
    pub defaults: Value,
    pub strategy: Box<StrategyBuilder>,
    pub mutator: Box<MutatorBuilder>,
}

/// Mutator for strategies without learned state.
pub struct IdentityMutator;

impl StrategyMutator for IdentityMutator {
    fn train(&mut self, _batch: &[ExperienceBatch], current: &Parameters) -> Result<Value, AgentError> {
        Ok(current.data.clone())
    }
}

/// Strategy kinds available to plans, keyed by tag.
#[derive(Clone, Default)]
pub struct StrategyRegistry {
    entries: BTreeMap<String, Arc<StrategyEntry>>,
}

impl StrategyRegistry {
    pub fn register(&mut self, kind: &str, entry: StrategyEntry) {
        self.entries.insert(kind.to_string(), Arc::new(entry));
    }

    /// Registers a kind whose hyperparameters deserialize into `P`.
    pub fn register_typed<P, S, M>(&mut self, kind: &str, capability: Capability, strategy: S, mutator: M)
    where
        P: Serialize + DeserializeOwned + Default + 'static,
        S: Fn(P, u64) -> Result<Box<dyn Strategy>, AgentError> + Send + Sync + 'static,
        M: Fn(P) -> Result<Box<dyn StrategyMutator>, AgentError> + Send + Sync + 'static,
    {
        let tag = kind.to_string();
        let parse = move |v: &Value| -> Result<P, AgentError> {
            serde_json::from_value(v.clone())
                .map_err(|e| AgentError::Parameters { kind: tag.clone(), message: e.to_string() })
        };
        let parse2 = parse.clone();
        self.register(
            kind,
            StrategyEntry {
                capability,
                defaults: serde_json::to_value(P::default()).expect("defaults serialize"),
                strategy: Box::new(move |v, seed| strategy(parse(v)?, seed)),
                mutator: Box::new(move |v| mutator(parse2(v)?)),
            },
        );
    }

    pub fn get(&self, kind: &str) -> Result<&StrategyEntry, AgentError> {
        self.entries.get(kind).map(|e| e.as_ref()).ok_or_else(|| AgentError::UnknownKind(kind.to_string()))
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// Overlays `given` on the kind's defaults and checks the result by
    /// building a mutator from it.
    pub fn resolve(&self, kind: &str, given: &Value) -> Result<Value, AgentError> {
        let entry = self.get(kind)?;
        let mut merged = entry.defaults.clone();
        match (given, &mut merged) {
            (Value::Null, _) => {}
            (Value::Object(g), Value::Object(m)) => {
                for (k, v) in g {
                    m.insert(k.clone(), v.clone());
                }
            }
            _ => {
                return Err(AgentError::Parameters {
                    kind: kind.into(),
                    message: "hyperparameters must be an object".into(),
                })
            }
        }
        (entry.mutator)(&merged)?;
        (entry.strategy)(&merged, 0)?;
        Ok(merged)
    }
}

/// Registry with the built-in kinds: `random`, `fixed` and `tabular_q`.
pub fn default_registry() -> StrategyRegistry {
    let mut r = StrategyRegistry::default();
    r.register_typed::<EmptyParams, _, _>(
        RandomStrategy::KIND,
        Capability::Continuous,
        |_, seed| Ok(Box::new(RandomStrategy::new(seed))),
        |_| Ok(Box::new(IdentityMutator)),
    );
    r.register_typed::<FixedParams, _, _>(
        FixedStrategy::KIND,
        Capability::Continuous,
        |p, _| Ok(Box::new(FixedStrategy::new(&p)?)),
        |_| Ok(Box::new(IdentityMutator)),
    );
    r.register_typed::<TabularQParams, _, _>(
        TabularQ::KIND,
        Capability::DiscreteOnly,
        |p, seed| Ok(Box::new(TabularQ::new(p, seed)?)),
        |p| Ok(Box::new(TabularQMutator::new(p)?)),
    );
    r
}

#[derive(Debug, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct EmptyParams {}
