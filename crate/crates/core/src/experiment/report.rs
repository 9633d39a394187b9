//! Aggregate tables over completed runs: defender coin balance per round
//! and step, mean reward per round and agent, and action mass per actuator.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use super::RunRecord;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no completed runs to report on")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoinBalanceRow {
    pub round: u32,
    pub step: u64,
    /// Coins, averaged over runs and environment instances.
    pub defender_balance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardRow {
    pub round: u32,
    pub agent: String,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionMassRow {
    pub agent: String,
    pub actuator: String,
    pub element: String,
    /// Σ |setpoint − neutral| over a tournament, averaged over tournaments.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub runs: usize,
    pub coin_balance: Vec<CoinBalanceRow>,
    pub rewards: Vec<RewardRow>,
    pub action_mass: Vec<ActionMassRow>,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: u64,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn get(&self) -> f64 {
        self.sum / self.n as f64
    }
}

pub fn report(records: &[RunRecord]) -> Result<Report, ReportError> {
    let completed: Vec<&RunRecord> = records.iter().filter(|r| r.is_completed()).collect();
    if completed.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut balance: BTreeMap<(u32, u64), Mean> = BTreeMap::new();
    let mut rewards: BTreeMap<(u32, String), Mean> = BTreeMap::new();
    let mut mass: BTreeMap<(String, String), (String, f64)> = BTreeMap::new();

    for r in &completed {
        let horizon = r.header.descriptor.environment.horizon;
        let envs = f64::from(r.header.environments.max(1));
        let mut per_episode: BTreeMap<(u32, u32), Vec<&super::StepRecord>> = BTreeMap::new();
        for s in &r.steps {
            per_episode.entry((s.round, s.env)).or_default().push(s);
        }
        for ((round, _), steps) in &per_episode {
            let mut last = 0.0;
            for s in steps {
                last = s.ledger.defender.as_coins();
                balance.entry((*round, s.step)).or_default().add(last);
            }
            // an episode cut short keeps its final balance to the horizon
            for t in steps.len() as u64..horizon {
                balance.entry((*round, t)).or_default().add(last);
            }
            let mut per_agent: BTreeMap<&str, Mean> = BTreeMap::new();
            for s in steps {
                for (agent, v) in &s.rewards {
                    per_agent.entry(agent).or_default().add(*v);
                }
            }
            for (agent, m) in per_agent {
                rewards.entry((*round, agent.to_string())).or_default().add(m.get());
            }
        }
        for w in &r.header.wiring {
            for a in &w.actuators {
                mass.entry((w.name.clone(), a.id.clone())).or_insert_with(|| (a.element.clone(), 0.0));
            }
        }
        for s in &r.steps {
            for w in &r.header.wiring {
                let Some(setpoints) = s.setpoints.get(&w.name) else { continue };
                for sp in setpoints {
                    if let Some(a) = w.actuators.iter().find(|a| a.id == sp.id) {
                        let entry = mass.get_mut(&(w.name.clone(), a.id.clone())).expect("seeded above");
                        entry.1 += a.deviation(&sp.value) / envs;
                    }
                }
            }
        }
    }
    let runs = completed.len();
    Ok(Report {
        runs,
        coin_balance: balance
            .into_iter()
            .map(|((round, step), m)| CoinBalanceRow { round, step, defender_balance: m.get() })
            .collect(),
        rewards: rewards
            .into_iter()
            .map(|((round, agent), m)| RewardRow { round, agent, mean_reward: m.get() })
            .collect(),
        action_mass: mass
            .into_iter()
            .map(|((agent, actuator), (element, total))| ActionMassRow {
                agent,
                actuator,
                element,
                mass: total / runs as f64,
            })
            .collect(),
    })
}

impl Report {
    /// Writes `coin_balance.csv`, `rewards.csv` and `action_mass.csv`.
    pub fn write_csv(&self, dir: &Path) -> Result<(), ReportError> {
        std::fs::create_dir_all(dir)?;
        fn table<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
            let mut w = csv::Writer::from_path(path)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        }
        table(&dir.join("coin_balance.csv"), &self.coin_balance)?;
        table(&dir.join("rewards.csv"), &self.rewards)?;
        table(&dir.join("action_mass.csv"), &self.action_mass)?;
        Ok(())
    }
}
