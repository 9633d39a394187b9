//! Deterministic synthetic city grid with the published element counts.
//!
//! Topology: an external HV grid (slack) feeds two HV buses over short
//! lines. Each HV bus supplies one MV substation through a parallel pair of
//! HV/MV transformers. Every substation has three radial MV feeders of four
//! buses; three buses per feeder host an MV/LV transformer whose LV bus
//! carries one aggregated-subgrid load and one aggregated PV node.
//! Industry loads, conventional plants and wind farms sit on MV feeder buses.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    solve_power_flow, Bus, GridModel, Injection, InjectionKind, Line, PowerFlowOptions, Transformer, VoltageLevel,
};

const FEEDERS: usize = 6;
const FEEDER_BUSES: usize = 4;
const TOTAL_GENERATION_KW: i64 = 51_000;

const MV_Z_BASE_OHM: f64 = 20.0 * 20.0; // (20 kV)^2 / 1 MVA
const HV_Z_BASE_OHM: f64 = 110.0 * 110.0;
const MV_R_OHM_PER_KM: f64 = 0.12;
const MV_X_OHM_PER_KM: f64 = 0.11;
/// ωC for 0.3 µF/km cable, in siemens per km.
const MV_B_SIEMENS_PER_KM: f64 = 2.0 * std::f64::consts::PI * 50.0 * 0.3e-6;
const MV_LINE_RATING_PU: f64 = 12.0;
const HV_MV_RATING_PU: f64 = 16.0;
/// Loading the generator aims to stay under in the base case.
const BASE_LOADING_TARGET: f64 = 0.7;

/// Base-case health figures for a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseCaseReport {
    pub converged: bool,
    pub max_loading: f64,
    pub min_vm: f64,
    pub max_vm: f64,
}

impl BaseCaseReport {
    pub fn of(model: &GridModel) -> Self {
        let s = solve_power_flow(model, &PowerFlowOptions::default());
        let live = s.vm.iter().zip(&s.energized).filter(|(_, &e)| e).map(|(&v, _)| v);
        let (min_vm, max_vm) = live.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let max_loading = s.line_loading.iter().chain(&s.transformer_loading).copied().fold(0.0, f64::max);
        Self { converged: s.converged, max_loading, min_vm, max_vm }
    }

    pub fn healthy(&self) -> bool {
        self.converged && self.max_loading < 0.8 && self.min_vm >= 0.95 && self.max_vm <= 1.05
    }
}

fn bus(id: String, level: VoltageLevel) -> Bus {
    Bus { id, level, in_service: true }
}

fn injection(id: String, kind: InjectionKind, tag: &str, bus: &str, p_kw: i64, cos_phi: f64) -> Injection {
    Injection {
        id,
        kind,
        tag: tag.into(),
        bus: bus.into(),
        p_nominal_kw: p_kw as f64,
        cos_phi,
        scaling: 1.0,
        in_service: true,
    }
}

fn transformer(id: String, hv: &str, lv: &str, rating_mva: f64, uk: f64, ur: f64) -> Transformer {
    Transformer {
        id,
        hv_bus: hv.into(),
        lv_bus: lv.into(),
        r: ur / rating_mva,
        x: (uk * uk - ur * ur).sqrt() / rating_mva,
        s_max: rating_mva,
        tap_min: -2,
        tap_max: 2,
        tap_neutral: 0,
        tap_step: 0.025,
        tap: 0,
        in_service: true,
    }
}

fn feeder_bus(feeder: usize, position: usize) -> String {
    format!("bus/mv/f{}-{}", feeder + 1, position + 1)
}

/// Splits `total` into `parts` positive integers with weights drawn from `rng`.
fn split_total(rng: &mut ChaCha8Rng, total: i64, parts: usize) -> Vec<i64> {
    let weights: Vec<f64> = (0..parts).map(|_| rng.gen_range(0.8..1.2)).collect();
    let sum: f64 = weights.iter().sum();
    let mut shares: Vec<i64> = weights.iter().map(|w| (total as f64 * w / sum).floor() as i64).collect();
    let rest = total - shares.iter().sum::<i64>();
    *shares.last_mut().expect("parts > 0") += rest;
    shares
}

/// Generates the synthetic city grid for `seed`. Pure function of the seed.
pub fn generate_synthetic_city_grid(seed: u64) -> GridModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = GridModel::new(format!("synthetic-city-{seed}"), "bus/hv/0");

    m.buses.push(bus("bus/hv/0".into(), VoltageLevel::Hv));
    for h in 1..=2 {
        m.buses.push(bus(format!("bus/hv/{h}"), VoltageLevel::Hv));
        m.buses.push(bus(format!("bus/mv/sub{h}"), VoltageLevel::Mv));
        let km = rng.gen_range(3.0..8.0);
        m.lines.push(Line {
            id: format!("line/hv/{h}"),
            from_bus: "bus/hv/0".into(),
            to_bus: format!("bus/hv/{h}"),
            r: 0.06 * km / HV_Z_BASE_OHM,
            x: 0.4 * km / HV_Z_BASE_OHM,
            b: 0.0,
            s_max: 100.0,
            in_service: true,
        });
    }
    // HV/MV transformers in parallel pairs: 1,2 on sub1 and 3,4 on sub2.
    for t in 0..4 {
        let h = t / 2 + 1;
        m.transformers.push(transformer(
            format!("trafo/hvmv/{}", t + 1),
            &format!("bus/hv/{h}"),
            &format!("bus/mv/sub{h}"),
            HV_MV_RATING_PU,
            0.10,
            0.005,
        ));
    }

    for f in 0..FEEDERS {
        let sub = format!("bus/mv/sub{}", f / 3 + 1);
        for p in 0..FEEDER_BUSES {
            let id = feeder_bus(f, p);
            m.buses.push(bus(id.clone(), VoltageLevel::Mv));
            let from = if p == 0 { sub.clone() } else { feeder_bus(f, p - 1) };
            let km: f64 = (rng.gen_range(1.0..3.0) * 100.0f64).round() / 100.0;
            m.lines.push(Line {
                id: format!("line/mv/f{}-{}", f + 1, p + 1),
                from_bus: from,
                to_bus: id,
                r: MV_R_OHM_PER_KM * km / MV_Z_BASE_OHM,
                x: MV_X_OHM_PER_KM * km / MV_Z_BASE_OHM,
                b: MV_B_SIEMENS_PER_KM * km * MV_Z_BASE_OHM,
                s_max: MV_LINE_RATING_PU,
                in_service: true,
            });
        }
    }

    // Generation: two plants, five wind farms, PV makes up the remainder.
    let plants: Vec<i64> = (0..2).map(|_| rng.gen_range(7_000..=9_000)).collect();
    let wind: Vec<i64> = (0..5).map(|_| rng.gen_range(3_000..=4_000)).collect();
    let pv_total = TOTAL_GENERATION_KW - plants.iter().sum::<i64>() - wind.iter().sum::<i64>();
    let pv = split_total(&mut rng, pv_total, 18);

    // MV/LV substations at feeder positions 2..4, one subgrid load and one PV node each.
    let mut lv = 0;
    for f in 0..FEEDERS {
        for p in 1..FEEDER_BUSES {
            lv += 1;
            let lv_bus = format!("bus/lv/{lv:02}");
            m.buses.push(bus(lv_bus.clone(), VoltageLevel::Lv));
            let load_kw: i64 = rng.gen_range(1_500..=2_500);
            let rating = ((load_kw.max(pv[lv - 1]) as f64 * 1.6) / 100.0).ceil() / 10.0;
            m.transformers.push(transformer(
                format!("trafo/mvlv/{lv:02}"),
                &feeder_bus(f, p),
                &lv_bus,
                rating,
                0.06,
                0.01,
            ));
            m.injections.push(injection(
                format!("load/subgrid/{lv:02}"),
                InjectionKind::Load,
                "subgrid",
                &lv_bus,
                load_kw,
                0.97,
            ));
            m.injections.push(injection(
                format!("sgen/pv/{lv:02}"),
                InjectionKind::Sgen,
                "pv",
                &lv_bus,
                pv[lv - 1],
                0.9,
            ));
        }
    }

    let mut feeder_positions: Vec<(usize, usize)> =
        (0..FEEDERS).flat_map(|f| (0..FEEDER_BUSES).map(move |p| (f, p))).collect();
    feeder_positions.shuffle(&mut rng);
    feeder_positions.truncate(22);
    feeder_positions.sort_unstable();
    for (k, &(f, p)) in feeder_positions.iter().enumerate() {
        m.injections.push(injection(
            format!("load/industry/{:02}", k + 1),
            InjectionKind::Load,
            "industry",
            &feeder_bus(f, p),
            rng.gen_range(1_400..=2_200),
            0.97,
        ));
    }
    // One plant near each substation.
    for (k, &kw) in plants.iter().enumerate() {
        m.injections.push(injection(
            format!("sgen/plant/{}", k + 1),
            InjectionKind::Sgen,
            "plant",
            &feeder_bus(k * 3, 0),
            kw,
            0.8,
        ));
    }
    let mut wind_feeders: Vec<usize> = (0..FEEDERS).collect();
    wind_feeders.shuffle(&mut rng);
    wind_feeders.truncate(5);
    wind_feeders.sort_unstable();
    for (k, (&kw, &f)) in wind.iter().zip(&wind_feeders).enumerate() {
        m.injections.push(injection(
            format!("sgen/wind/{}", k + 1),
            InjectionKind::Sgen,
            "wind",
            &feeder_bus(f, FEEDER_BUSES - 1),
            kw,
            0.95,
        ));
    }
    m.injections.sort_by(|a, b| a.id.cmp(&b.id));

    uprate_congested_lines(&mut m);
    debug_assert!(m.validate().is_ok());
    m
}

/// Raises the rating of any MV line loaded above the target in the base case
/// to the next whole MVA that brings it below the target.
fn uprate_congested_lines(m: &mut GridModel) {
    let s = solve_power_flow(m, &PowerFlowOptions::default());
    if !s.converged {
        return;
    }
    for (line, &loading) in m.lines.iter_mut().zip(&s.line_loading) {
        if loading > BASE_LOADING_TARGET {
            let flow = loading * line.s_max;
            line.s_max = (flow / BASE_LOADING_TARGET).ceil() + 1.0;
        }
    }
}
