//! Experiment plans, run generation, execution and the run store.
//!
//! A plan names the environment, the competing agents, the parameter
//! axes to sweep and how to execute. [`generate_runs`] expands it into
//! fully concrete [`RunDescriptor`]s; [`execute`] hands each descriptor to
//! a governor that drives one tournament and persists its step records.

mod conformance;
mod executor;
mod generate;
mod governor;
mod plan;
mod record;
mod report;
mod store;

pub use conformance::verify;
pub use executor::{execute, ExecutorOptions};
pub use generate::{derive_seed, generate_runs, RunDescriptor, SOFTWARE_VERSION};
pub use governor::{run_tournament, EnvironmentFactory, GovernorOptions, GovernorService, GridFactory};
pub use plan::{
    load_plan, validate_plan, AgentSection, DoeSection, EnvironmentSection, ExecutionSection, ExperimentPlan,
    GridSource, PlanErrors, StrategySection, TransportKind, SCHEMA_VERSION,
};
pub use record::{EpisodeOutcome, RecordFooter, RecordHeader, RecordLine, RunRecord, RunStatus, StepRecord};
pub use report::{report, ActionMassRow, CoinBalanceRow, Report, ReportError, RewardRow};
pub use store::{DirStore, MemoryStore, RunStore, StoreError};
