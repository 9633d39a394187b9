//! Reference implementations used by the acceptance checks. Nothing here
//! calls into the library's solvers or learners.

#![allow(dead_code)]

use arl_core::grid::{Bus, GridModel, Injection, InjectionKind, Line, Transformer, VoltageLevel};
use num_complex::Complex64;
use rand::Rng;

/// Connected network of 2..=10 buses: a random spanning tree plus a few
/// extra branches, some of them tapped transformers.
pub fn random_network<R: Rng>(rng: &mut R, index: usize) -> GridModel {
    let n = rng.gen_range(2..=10);
    let mut m = GridModel::new(format!("random-{index}"), "b0");
    m.slack_voltage = rng.gen_range(0.98..1.04);
    for i in 0..n {
        m.buses.push(Bus { id: format!("b{i}"), level: VoltageLevel::Mv, in_service: true });
    }
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..rng.gen_range(0..=2) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            edges.push((a.min(b), a.max(b)));
        }
    }
    for (k, (a, b)) in edges.into_iter().enumerate() {
        if rng.gen_bool(0.2) {
            m.transformers.push(Transformer {
                id: format!("t{k}"),
                hv_bus: format!("b{a}"),
                lv_bus: format!("b{b}"),
                r: rng.gen_range(0.0..0.02),
                x: rng.gen_range(0.04..0.12),
                s_max: 10.0,
                tap_min: -2,
                tap_max: 2,
                tap_neutral: 0,
                tap_step: 0.025,
                tap: rng.gen_range(-2..=2),
                in_service: true,
            });
        } else {
            m.lines.push(Line {
                id: format!("l{k}"),
                from_bus: format!("b{a}"),
                to_bus: format!("b{b}"),
                r: rng.gen_range(0.002..0.04),
                x: rng.gen_range(0.01..0.1),
                b: rng.gen_range(0.0..0.01),
                s_max: 10.0,
                in_service: true,
            });
        }
    }
    for i in 1..n {
        m.injections.push(Injection {
            id: format!("load{i}"),
            kind: InjectionKind::Load,
            tag: "random".into(),
            bus: format!("b{i}"),
            p_nominal_kw: rng.gen_range(10.0..300.0),
            cos_phi: rng.gen_range(0.9..1.0),
            scaling: rng.gen_range(0.0..=1.0),
            in_service: true,
        });
        if rng.gen_bool(0.3) {
            m.injections.push(Injection {
                id: format!("gen{i}"),
                kind: InjectionKind::Sgen,
                tag: "random".into(),
                bus: format!("b{i}"),
                p_nominal_kw: rng.gen_range(10.0..200.0),
                cos_phi: 1.0,
                scaling: rng.gen_range(0.0..=1.0),
                in_service: true,
            });
        }
    }
    m
}

/// Voltage magnitudes by Gauss-Seidel iteration on a bus admittance matrix
/// assembled here from the element data. Every bus must be connected and
/// in service. `None` if the iteration does not settle.
pub fn gauss_seidel_vm(m: &GridModel) -> Option<Vec<f64>> {
    let n = m.buses.len();
    let idx = |id: &str| m.buses.iter().position(|b| b.id == id).expect("bus exists");
    let zero = Complex64::new(0.0, 0.0);
    let mut y = vec![vec![zero; n]; n];
    for l in &m.lines {
        let (a, b) = (idx(&l.from_bus), idx(&l.to_bus));
        let ys = 1.0 / Complex64::new(l.r, l.x);
        let sh = Complex64::new(0.0, l.b * 0.5);
        y[a][a] += ys + sh;
        y[b][b] += ys + sh;
        y[a][b] -= ys;
        y[b][a] -= ys;
    }
    for t in &m.transformers {
        let (h, l) = (idx(&t.hv_bus), idx(&t.lv_bus));
        let ys = 1.0 / Complex64::new(t.r, t.x);
        let k = 1.0 + f64::from(t.tap - t.tap_neutral) * t.tap_step;
        y[h][h] += ys * k * k;
        y[l][l] += ys;
        y[h][l] -= ys * k;
        y[l][h] -= ys * k;
    }
    let mut s = vec![zero; n];
    for inj in &m.injections {
        let p = inj.p_nominal_kw * inj.scaling / 1000.0;
        let q = p * (1.0 - inj.cos_phi * inj.cos_phi).sqrt() / inj.cos_phi;
        let sign = if inj.kind == InjectionKind::Load { -1.0 } else { 1.0 };
        s[idx(&inj.bus)] += Complex64::new(sign * p, sign * q);
    }
    let slack = idx(&m.slack_bus);
    let mut v = vec![Complex64::new(1.0, 0.0); n];
    v[slack] = Complex64::new(m.slack_voltage, 0.0);
    for _ in 0..200_000 {
        let mut delta: f64 = 0.0;
        for i in (0..n).filter(|i| *i != slack) {
            let mut acc = (s[i] / v[i]).conj();
            for j in (0..n).filter(|j| *j != i) {
                acc -= y[i][j] * v[j];
            }
            let next = acc / y[i][i];
            delta = delta.max((next - v[i]).norm());
            v[i] = next;
        }
        if delta < 1e-14 {
            return Some(v.iter().map(|x| x.norm()).collect());
        }
    }
    None
}

/// Optimal action values of a finite deterministic MDP by value iteration.
pub fn value_iteration(next: &[[usize; 2]; 2], reward: &[[f64; 2]; 2], gamma: f64) -> [[f64; 2]; 2] {
    let mut q = [[0.0f64; 2]; 2];
    loop {
        let mut fresh = [[0.0f64; 2]; 2];
        for s in 0..2 {
            for a in 0..2 {
                let s2 = next[s][a];
                fresh[s][a] = reward[s][a] + gamma * q[s2][0].max(q[s2][1]);
            }
        }
        let change = (0..4).map(|k| (fresh[k / 2][k % 2] - q[k / 2][k % 2]).abs()).fold(0.0, f64::max);
        q = fresh;
        if change < 1e-15 {
            return q;
        }
    }
}

/// Exact one-sided Wilcoxon signed-rank test of "differences tend to be
/// positive". Zero differences are dropped, tied magnitudes get mid-ranks.
/// Returns (W+, p).
pub fn wilcoxon_greater(diffs: &[f64]) -> (f64, f64) {
    let mut d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
    d.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let n = d.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    // doubled ranks keep mid-ranks integral
    let mut rank2 = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        for r in rank2.iter_mut().take(j + 1).skip(i) {
            *r = i + j + 2;
        }
        i = j + 1;
    }
    let w2: usize = d.iter().zip(&rank2).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total: usize = rank2.iter().sum();
    let mut ways = vec![0f64; total + 1];
    ways[0] = 1.0;
    for r in &rank2 {
        for sum in (*r..=total).rev() {
            ways[sum] += ways[sum - r];
        }
    }
    let tail: f64 = ways[w2..].iter().sum();
    (w2 as f64 / 2.0, tail / 2f64.powi(n as i32))
}
