//! `arl`: validate, generate, run and report adversarial grid experiments.
//!
//! Data goes to files; progress and errors go to stderr, errors as one JSON
//! object per line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use arl_core::agents::default_registry;
use arl_core::experiment::{
    execute, generate_runs, load_plan, report, DirStore, ExecutorOptions, ExperimentPlan, RunDescriptor, RunStatus,
};
use arl_core::grid::generate_synthetic_city_grid;
use arl_core::transport::Transport;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "arl", version, about = "Attacker/defender tournaments on a simulated power grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a plan; prints nothing and exits 0 when it is valid.
    Validate {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Expand a plan into run descriptors and write their index.
    Generate(PlanArgs),
    /// Execute every run of a plan and persist the records.
    Run {
        #[command(flatten)]
        common: PlanArgs,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long, value_enum)]
        transport: Option<TransportMode>,
        /// `tcp://host:port`; repeatable.
        #[arg(long = "endpoint")]
        endpoints: Vec<String>,
    },
    /// Aggregate stored records of a plan into CSV tables.
    Report {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, env = "ARL_STORE")]
        out: PathBuf,
    },
    /// Write the synthetic city grid for a seed.
    DumpGrid {
        #[arg(long)]
        seed: u64,
        #[arg(long, env = "ARL_STORE")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Store root.
    #[arg(long, env = "ARL_STORE")]
    out: PathBuf,
    /// Replace the plan's seed list with this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportMode {
    Loopback,
    Socket,
}

enum Failure {
    Validation(Vec<String>),
    Execution(String),
    Io(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Execution(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn emit(&self) {
        let line = |class: &str, message: String| eprintln!("{}", json!({"class": class, "message": message}));
        match self {
            Failure::Validation(v) => v.iter().for_each(|m| line("validation", m.clone())),
            Failure::Execution(m) => line("execution", m.clone()),
            Failure::Io(e) => line("io", format!("{e:#}")),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.into())
    }
}

fn plan_with_override(path: &Path, seed: Option<u64>) -> Result<ExperimentPlan, Failure> {
    let mut plan = load_plan(path, &default_registry()).map_err(|e| Failure::Validation(e.0))?;
    if let Some(s) = seed {
        plan.doe.seeds = Some(vec![s]);
        plan.doe.repetitions = None;
    }
    Ok(plan)
}

fn descriptors(path: &Path, seed: Option<u64>) -> Result<(ExperimentPlan, Vec<RunDescriptor>), Failure> {
    let plan = plan_with_override(path, seed)?;
    let runs = generate_runs(&plan, path.parent(), &default_registry()).map_err(|e| Failure::Validation(e.0))?;
    Ok((plan, runs))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string()).map_err(Failure::Io)?;
    }
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    std::fs::write(path, text).with_context(|| path.display().to_string()).map_err(Failure::Io)
}

fn generate(args: &PlanArgs) -> Result<(), Failure> {
    let (plan, runs) = descriptors(&args.plan, args.seed_override)?;
    let index = serde_json::to_value(&runs).expect("descriptors serialize");
    write_json(&args.out.join(&plan.name).join("descriptors.json"), &index)?;
    println!("{}", runs.len());
    Ok(())
}

fn run(
    args: &PlanArgs,
    parallelism: Option<usize>,
    mode: Option<TransportMode>,
    endpoints: &[String],
) -> Result<(), Failure> {
    let (plan, runs) = descriptors(&args.plan, args.seed_override)?;
    let exec = &plan.execution;
    let socket = match mode {
        Some(m) => matches!(m, TransportMode::Socket),
        None => matches!(exec.transport, arl_core::experiment::TransportKind::Socket),
    };
    let endpoints = if endpoints.is_empty() { exec.endpoints.clone() } else { endpoints.to_vec() };
    let transport = if socket {
        Transport::socket(&endpoints).map_err(|e| Failure::Validation(vec![e.to_string()]))?
    } else {
        Transport::loopback()
    };
    let store = Arc::new(DirStore::new(&args.out).map_err(|e| Failure::Io(e.into()))?);
    let mut options = ExecutorOptions::new(parallelism.unwrap_or(exec.parallelism), transport);
    options.timeout = Duration::from_millis(exec.timeout_ms);
    eprintln!("running {} runs of {} over {}", runs.len(), plan.name, options.transport.name());
    let records = execute(&runs, &options, store).map_err(|e| Failure::Execution(e.to_string()))?;
    let bad: Vec<String> = records
        .iter()
        .filter(|r| r.status() != RunStatus::Completed)
        .map(|r| format!("{} {:?}: {}", r.run_id(), r.status(), r.failure.as_deref().unwrap_or("worker respawned")))
        .collect();
    eprintln!("{} of {} runs completed", records.len() - bad.len(), records.len());
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Execution(bad.join("; ")))
    }
}

fn report_cmd(plan_path: &Path, out: &Path) -> Result<(), Failure> {
    let plan = plan_with_override(plan_path, None)?;
    let store = DirStore::new(out).map_err(|e| Failure::Io(e.into()))?;
    let records = store.load_plan(&plan.name).map_err(|e| Failure::Io(e.into()))?;
    let rep = report(&records).map_err(|e| Failure::Execution(e.to_string()))?;
    let dir = store.plan_dir(&plan.name).join("report");
    rep.write_csv(&dir).map_err(|e| Failure::Io(e.into()))?;
    eprintln!("{} runs aggregated into {}", rep.runs, dir.display());
    Ok(())
}

fn dump_grid(seed: u64, out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("grid-{seed}.json"));
    std::fs::write(&path, generate_synthetic_city_grid(seed).to_document())
        .with_context(|| path.display().to_string())
        .map_err(Failure::Io)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("ARL_LOG").unwrap_or_else(|_| "warn".into()))
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { plan } => plan_with_override(plan, None).map(|_| ()),
        Command::Generate(args) => generate(args),
        Command::Run { common, parallelism, transport, endpoints } => run(common, *parallelism, *transport, endpoints),
        Command::Report { plan, out } => report_cmd(plan, out),
        Command::DumpGrid { seed, out } => dump_grid(*seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.emit();
            ExitCode::from(f.code())
        }
    }
}
