//! Newton-Raphson power flow in polar coordinates.
//!
//! The energized part of the network (buses reachable from the slack over
//! in-service branches) is solved from a flat start; every other bus is
//! reported de-energized at 0 pu. All non-slack buses are PQ buses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{build_admittance, GridModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerFlowOptions {
    /// Largest tolerated |ΔP| or |ΔQ| in pu.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Voltage magnitude per bus (pu); 0 for de-energized buses.
    pub vm: Vec<f64>,
    /// Voltage angle per bus (rad).
    pub va: Vec<f64>,
    pub energized: Vec<bool>,
    /// Apparent-power loading ratio (max of both ends / rating), per line.
    pub line_loading: Vec<f64>,
    pub transformer_loading: Vec<f64>,
    /// Complex power delivered by the slack bus (pu).
    pub slack_injection: Complex64,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn min_energized_vm(&self) -> Option<f64> {
        self.vm.iter().zip(&self.energized).filter(|(_, &e)| e).map(|(&v, _)| v).reduce(f64::min)
    }
}

/// Buses reachable from the slack through in-service branches and buses.
pub fn energized_buses(model: &GridModel) -> Vec<bool> {
    let n = model.buses.len();
    let mut energized = vec![false; n];
    let Some(slack) = model.slack_index() else {
        return energized;
    };
    if !model.buses[slack].in_service {
        return energized;
    }
    let index = model.bus_index();
    let mut adjacency = vec![Vec::new(); n];
    let edges = model
        .lines
        .iter()
        .filter(|l| l.in_service)
        .map(|l| (l.from_bus.as_str(), l.to_bus.as_str()))
        .chain(model.transformers.iter().filter(|t| t.in_service).map(|t| (t.hv_bus.as_str(), t.lv_bus.as_str())));
    for (a, b) in edges {
        if let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) {
            if model.buses[i].in_service && model.buses[j].in_service {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    let mut stack = vec![slack];
    energized[slack] = true;
    while let Some(i) = stack.pop() {
        for &j in &adjacency[i] {
            if !energized[j] {
                energized[j] = true;
                stack.push(j);
            }
        }
    }
    energized
}

/// Net specified injection per bus (pu), counting only in-service elements.
fn specified_injections(model: &GridModel) -> Vec<Complex64> {
    let index = model.bus_index();
    let mut s = vec![Complex64::new(0.0, 0.0); model.buses.len()];
    for inj in model.injections.iter().filter(|i| i.in_service) {
        if let Some(&b) = index.get(inj.bus.as_str()) {
            let (p, q) = inj.injected();
            s[b] += Complex64::new(p, q);
        }
    }
    s
}

pub fn solve_power_flow(model: &GridModel, options: &PowerFlowOptions) -> PowerFlowSolution {
    let n = model.buses.len();
    let energized = energized_buses(model);
    let mut solution = PowerFlowSolution {
        vm: vec![0.0; n],
        va: vec![0.0; n],
        energized: energized.clone(),
        line_loading: vec![0.0; model.lines.len()],
        transformer_loading: vec![0.0; model.transformers.len()],
        slack_injection: Complex64::new(0.0, 0.0),
        converged: false,
        iterations: 0,
        max_mismatch: f64::INFINITY,
    };
    let Some(slack) = model.slack_index().filter(|&s| energized[s]) else {
        // Nothing energized: trivially consistent.
        solution.converged = true;
        solution.max_mismatch = 0.0;
        return solution;
    };
    let pq: Vec<usize> = (0..n).filter(|&i| energized[i] && i != slack).collect();
    if pq.is_empty() {
        solution.vm[slack] = model.slack_voltage;
        solution.converged = true;
        solution.max_mismatch = 0.0;
        return solution;
    }
    let y = match build_admittance(model) {
        Ok(y) => y,
        Err(_) => return solution,
    };
    let spec = specified_injections(model);
    let m = pq.len();

    let mut vm: Vec<f64> = vec![0.0; n];
    let mut va: Vec<f64> = vec![0.0; n];
    for &i in pq.iter().chain(std::iter::once(&slack)) {
        vm[i] = 1.0;
    }
    vm[slack] = model.slack_voltage;

    let mut iterations = 0;
    let mut converged = false;
    let mut max_mismatch;
    loop {
        let (p_calc, q_calc) = calculated_power(&y, &vm, &va, &pq, slack);
        let mut mismatch = DVector::zeros(2 * m);
        for (k, &i) in pq.iter().enumerate() {
            mismatch[k] = spec[i].re - p_calc[i];
            mismatch[m + k] = spec[i].im - q_calc[i];
        }
        max_mismatch = mismatch.amax();
        if !max_mismatch.is_finite() {
            break;
        }
        if max_mismatch < options.tol {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        let jac = jacobian(&y, &vm, &va, &pq, &p_calc, &q_calc);
        let Some(dx) = jac.lu().solve(&mismatch) else {
            break;
        };
        for (k, &i) in pq.iter().enumerate() {
            va[i] += dx[k];
            vm[i] += dx[m + k];
        }
        iterations += 1;
        if pq.iter().any(|&i| !(vm[i] > 0.0) || !va[i].is_finite()) {
            break;
        }
    }

    solution.converged = converged;
    solution.iterations = iterations;
    solution.max_mismatch = max_mismatch;
    solution.vm = vm;
    solution.va = va;
    if converged {
        fill_flows(model, &y, &mut solution);
    }
    solution
}

/// P and Q drawn out of each energized bus by the network.
fn calculated_power(
    y: &DMatrix<Complex64>,
    vm: &[f64],
    va: &[f64],
    pq: &[usize],
    slack: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = vm.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let active: Vec<usize> = pq.iter().copied().chain(std::iter::once(slack)).collect();
    for &i in pq {
        let (mut pi, mut qi) = (0.0, 0.0);
        for &j in &active {
            let yij = y[(i, j)];
            if yij.re == 0.0 && yij.im == 0.0 {
                continue;
            }
            let theta = va[i] - va[j];
            let (s, c) = theta.sin_cos();
            pi += vm[i] * vm[j] * (yij.re * c + yij.im * s);
            qi += vm[i] * vm[j] * (yij.re * s - yij.im * c);
        }
        p[i] = pi;
        q[i] = qi;
    }
    (p, q)
}

/// Jacobian of (P, Q) at PQ buses with respect to (θ, |V|) at PQ buses.
fn jacobian(y: &DMatrix<Complex64>, vm: &[f64], va: &[f64], pq: &[usize], p: &[f64], q: &[f64]) -> DMatrix<f64> {
    let m = pq.len();
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for (r, &i) in pq.iter().enumerate() {
        for (c, &j) in pq.iter().enumerate() {
            let yij = y[(i, j)];
            let (g, b) = (yij.re, yij.im);
            if i == j {
                let vi = vm[i];
                jac[(r, c)] = -q[i] - b * vi * vi;
                jac[(r, m + c)] = p[i] / vi + g * vi;
                jac[(m + r, c)] = p[i] - g * vi * vi;
                jac[(m + r, m + c)] = q[i] / vi - b * vi;
            } else {
                if g == 0.0 && b == 0.0 {
                    continue;
                }
                let (s, co) = (va[i] - va[j]).sin_cos();
                let (vi, vj) = (vm[i], vm[j]);
                jac[(r, c)] = vi * vj * (g * s - b * co);
                jac[(r, m + c)] = vi * (g * co + b * s);
                jac[(m + r, c)] = -vi * vj * (g * co + b * s);
                jac[(m + r, m + c)] = vi * (g * s - b * co);
            }
        }
    }
    jac
}

fn fill_flows(model: &GridModel, y: &DMatrix<Complex64>, solution: &mut PowerFlowSolution) {
    let index = model.bus_index();
    let v: Vec<Complex64> = solution.vm.iter().zip(&solution.va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    let live = |a: usize, b: usize| solution.energized[a] && solution.energized[b];

    for (k, line) in model.lines.iter().enumerate() {
        let (f, t) = (index[line.from_bus.as_str()], index[line.to_bus.as_str()]);
        if !line.in_service || !live(f, t) {
            continue;
        }
        let ys = Complex64::new(line.r, line.x).inv();
        let sh = Complex64::new(0.0, line.b / 2.0);
        let i_f = ys * (v[f] - v[t]) + sh * v[f];
        let i_t = ys * (v[t] - v[f]) + sh * v[t];
        let s = (v[f] * i_f.conj()).norm().max((v[t] * i_t.conj()).norm());
        solution.line_loading[k] = s / line.s_max;
    }
    for (k, tr) in model.transformers.iter().enumerate() {
        let (h, l) = (index[tr.hv_bus.as_str()], index[tr.lv_bus.as_str()]);
        if !tr.in_service || !live(h, l) {
            continue;
        }
        let ys = Complex64::new(tr.r, tr.x).inv();
        let k_ratio = tr.ratio();
        let i_h = ys * (v[h] * (k_ratio * k_ratio) - v[l] * k_ratio);
        let i_l = ys * (v[l] - v[h] * k_ratio);
        let s = (v[h] * i_h.conj()).norm().max((v[l] * i_l.conj()).norm());
        solution.transformer_loading[k] = s / tr.s_max;
    }
    let slack = model.slack_index().expect("slack checked by caller");
    let i_slack: Complex64 = (0..v.len()).map(|j| y[(slack, j)] * v[j]).sum();
    solution.slack_injection = v[slack] * i_slack.conj();
}
