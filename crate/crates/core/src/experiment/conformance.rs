//! Protocol conformance of a stored run.

use std::collections::BTreeMap;

use super::{RunRecord, RunStatus};
use crate::ctf::INITIAL_BALANCE;

/// Checks a record against the run protocol and returns every violation.
pub fn verify(record: &RunRecord) -> Result<(), Vec<String>> {
    let mut errors = Vec::new();
    let d = &record.header.descriptor;
    let horizon = d.environment.horizon;
    let envs = record.header.environments;

    match (&record.footer, &record.failure) {
        (Some(_), None) | (None, Some(_)) => {}
        _ => errors.push("exactly one of footer and failure must be present".into()),
    }

    let wiring: BTreeMap<&str, _> = record.header.wiring.iter().map(|w| (w.name.as_str(), w)).collect();
    for a in &d.agents {
        if !wiring.contains_key(a.name.as_str()) {
            errors.push(format!("agent {} has no wiring in the header", a.name));
        }
    }

    let mut expected: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut finished: BTreeMap<(u32, u32), bool> = BTreeMap::new();
    let mut versions: BTreeMap<(u32, &str), u64> = BTreeMap::new();
    let mut last_round = 0;
    for (i, s) in record.steps.iter().enumerate() {
        let at = format!("step line {i} (round {} env {} step {})", s.round, s.env, s.step);
        if s.round < last_round {
            errors.push(format!("{at}: rounds go backwards"));
        }
        last_round = s.round;
        if s.env >= envs {
            errors.push(format!("{at}: unknown environment"));
        }
        let next = expected.entry((s.round, s.env)).or_insert(0);
        if s.step != *next {
            errors.push(format!("{at}: expected step {next}"));
        }
        *next = s.step + 1;
        if finished.get(&(s.round, s.env)).copied().unwrap_or(false) {
            errors.push(format!("{at}: step after termination"));
        }
        let total = s.ledger.defender.0 + s.ledger.attacker.0;
        if total != INITIAL_BALANCE.0 {
            errors.push(format!("{at}: ledger sums to {total} milli-coins"));
        }
        let should_end = s.step + 1 == horizon || s.ledger.defender.0 == 0;
        if s.terminated != should_end {
            errors.push(format!("{at}: terminated = {} but horizon/stake say {should_end}", s.terminated));
        }
        finished.insert((s.round, s.env), s.terminated);
        for (agent, w) in &wiring {
            let Some(readings) = s.readings.get(*agent) else {
                errors.push(format!("{at}: no readings for {agent}"));
                continue;
            };
            if readings.len() != w.sensors.len() {
                errors.push(format!("{at}: {agent} has {} readings for {} sensors", readings.len(), w.sensors.len()));
            }
            for (r, sensor) in readings.iter().zip(&w.sensors) {
                if r.id != sensor.id || !sensor.space.admits(&r.value) {
                    errors.push(format!("{at}: reading {} of {agent} outside its space", r.id));
                }
            }
            let Some(setpoints) = s.setpoints.get(*agent) else {
                errors.push(format!("{at}: no setpoints from {agent}"));
                continue;
            };
            for sp in setpoints {
                match w.actuators.iter().find(|a| a.id == sp.id) {
                    Some(a) if a.space.admits(&sp.value) => {}
                    _ => errors.push(format!("{at}: setpoint {} of {agent} outside its space", sp.id)),
                }
            }
            if !s.rewards.get(*agent).is_some_and(|r| r.is_finite()) {
                errors.push(format!("{at}: missing or non-finite reward for {agent}"));
            }
            if let Some(v) = s.versions.get(*agent) {
                let prev = versions.entry((s.env, agent)).or_insert(*v);
                if v < prev {
                    errors.push(format!("{at}: parameter version of {agent} went back"));
                }
                *prev = *v;
            }
        }
    }

    if let Some(f) = &record.footer {
        let rounds = d.environment.rounds;
        if f.episodes.len() as u64 != u64::from(rounds) * u64::from(envs) {
            errors.push(format!("footer lists {} episodes for {rounds} rounds x {envs} envs", f.episodes.len()));
        }
        for ep in &f.episodes {
            let steps: Vec<_> = record.steps.iter().filter(|s| s.round == ep.round && s.env == ep.env).collect();
            match steps.last() {
                Some(last) if last.terminated && last.ledger == ep.ledger && steps.len() as u64 == ep.steps => {}
                _ => errors
                    .push(format!("footer episode round {} env {} disagrees with the step stream", ep.round, ep.env)),
            }
        }
        let respawned = f.respawns.values().any(|n| *n > 0);
        if respawned != (f.status == RunStatus::Invalid) {
            errors.push("status must be invalid exactly when workers were replaced".into());
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}
