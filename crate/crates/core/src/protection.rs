//! Grid-code checks and cascading disconnection.
//!
//! Each pass solves the power flow and trips every branch loaded above the
//! limit and every injection element whose bus voltage left the band.
//! Elements in de-energized islands are tripped as `islanded`. Passes repeat
//! until one produces no new event. Tripped elements stay out of service.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{energized_buses, solve_power_flow, GridModel, PowerFlowOptions, PowerFlowSolution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("constraint config needs v_cut <= v_min < v_max (got {v_cut}, {v_min}, {v_max})")]
    VoltageBand { v_cut: f64, v_min: f64, v_max: f64 },
    #[error("loading limit must be positive")]
    LoadingLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub v_min: f64,
    pub v_max: f64,
    /// Severity threshold below the band; reported, never a second trip level.
    pub v_cut: f64,
    pub loading_limit: f64,
    pub cascade_cap: usize,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self { v_min: 0.85, v_max: 1.15, v_cut: 0.8, loading_limit: 1.0, cascade_cap: 50 }
    }
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.v_cut <= self.v_min && self.v_min < self.v_max) {
            return Err(ConfigError::VoltageBand { v_cut: self.v_cut, v_min: self.v_min, v_max: self.v_max });
        }
        if !(self.loading_limit > 0.0) {
            return Err(ConfigError::LoadingLimit);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Load,
    Sgen,
    Transformer,
    Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisconnectCause {
    Overvoltage,
    Undervoltage,
    Overload,
    Islanded,
    Nonconvergence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisconnectionEvent {
    pub element: String,
    pub kind: ElementKind,
    pub step: u64,
    pub cause: DisconnectCause,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventLog {
    pub events: Vec<DisconnectionEvent>,
    /// Set when the cascade cap stopped the loop before it settled.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct CascadeOutcome {
    pub model: GridModel,
    pub log: EventLog,
    pub solution: PowerFlowSolution,
    pub passes: usize,
}

fn injection_kind(kind: crate::grid::InjectionKind) -> ElementKind {
    match kind {
        crate::grid::InjectionKind::Load => ElementKind::Load,
        crate::grid::InjectionKind::Sgen => ElementKind::Sgen,
    }
}

/// Runs the protection loop on `model` for simulation step `step`.
pub fn check_and_cascade(
    mut model: GridModel,
    config: &ConstraintConfig,
    options: &PowerFlowOptions,
    step: u64,
) -> CascadeOutcome {
    let mut log = EventLog::default();
    let mut passes = 0;
    let bus_index: std::collections::HashMap<String, usize> =
        model.bus_index().into_iter().map(|(k, v)| (k.to_string(), v)).collect();

    loop {
        if passes >= config.cascade_cap {
            log.truncated = true;
            let solution = solve_power_flow(&model, options);
            return CascadeOutcome { model, log, solution, passes };
        }
        passes += 1;
        let mut pass_events: Vec<DisconnectionEvent> = Vec::new();

        let energized = energized_buses(&model);
        for inj in model.injections.iter().filter(|i| i.in_service) {
            if !energized[bus_index[&inj.bus]] {
                pass_events.push(DisconnectionEvent {
                    element: inj.id.clone(),
                    kind: injection_kind(inj.kind),
                    step,
                    cause: DisconnectCause::Islanded,
                });
            }
        }

        let solution = solve_power_flow(&model, options);
        if !solution.converged {
            for inj in model.injections.iter().filter(|i| i.in_service) {
                if !pass_events.iter().any(|e| e.element == inj.id) {
                    pass_events.push(DisconnectionEvent {
                        element: inj.id.clone(),
                        kind: injection_kind(inj.kind),
                        step,
                        cause: DisconnectCause::Nonconvergence,
                    });
                }
            }
        } else {
            for (line, &loading) in model.lines.iter().zip(&solution.line_loading) {
                if line.in_service && loading > config.loading_limit {
                    pass_events.push(DisconnectionEvent {
                        element: line.id.clone(),
                        kind: ElementKind::Line,
                        step,
                        cause: DisconnectCause::Overload,
                    });
                }
            }
            for (tr, &loading) in model.transformers.iter().zip(&solution.transformer_loading) {
                if tr.in_service && loading > config.loading_limit {
                    pass_events.push(DisconnectionEvent {
                        element: tr.id.clone(),
                        kind: ElementKind::Transformer,
                        step,
                        cause: DisconnectCause::Overload,
                    });
                }
            }
            for inj in model.injections.iter().filter(|i| i.in_service) {
                let b = bus_index[&inj.bus];
                if !solution.energized[b] {
                    continue;
                }
                let v = solution.vm[b];
                let cause = if v < config.v_min {
                    DisconnectCause::Undervoltage
                } else if v > config.v_max {
                    DisconnectCause::Overvoltage
                } else {
                    continue;
                };
                pass_events.push(DisconnectionEvent {
                    element: inj.id.clone(),
                    kind: injection_kind(inj.kind),
                    step,
                    cause,
                });
            }
        }

        if pass_events.is_empty() {
            return CascadeOutcome { model, log, solution, passes };
        }
        pass_events.sort_by(|a, b| a.element.cmp(&b.element));
        for event in &pass_events {
            trip(&mut model, &event.element);
        }
        log.events.extend(pass_events);
    }
}

fn trip(model: &mut GridModel, id: &str) {
    use crate::grid::ElementRef;
    match model.find(id) {
        Some(ElementRef::Injection(i)) => model.injections[i].in_service = false,
        Some(ElementRef::Transformer(i)) => model.transformers[i].in_service = false,
        Some(ElementRef::Line(i)) => model.lines[i].in_service = false,
        None => unreachable!("events only name elements of the model"),
    }
}
