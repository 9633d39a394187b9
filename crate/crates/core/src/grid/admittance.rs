use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{GridError, GridModel};

/// Dense complex bus-admittance matrix, indexed like `GridModel::buses`.
pub type AdmittanceMatrix = DMatrix<Complex64>;

/// Builds `Y_bus` from in-service branches whose end buses are in service.
///
/// Lines use the symmetric Π-model with half the shunt susceptance at each
/// end. A transformer with voltage ratio `k` and series admittance `y`
/// contributes `k²y` on the HV diagonal, `y` on the LV diagonal and `-k·y`
/// off-diagonal.
pub fn build_admittance(model: &GridModel) -> Result<AdmittanceMatrix, GridError> {
    let n = model.buses.len();
    let slack = model
        .slack_index()
        .ok_or_else(|| GridError::Invalid(format!("slack bus {} does not exist", model.slack_bus)))?;
    let index = model.bus_index();
    let lookup = |id: &str| index.get(id).copied().ok_or_else(|| GridError::UnknownElement(id.to_string()));
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut slack_connected = false;

    for line in model.lines.iter().filter(|l| l.in_service) {
        let (f, t) = (lookup(&line.from_bus)?, lookup(&line.to_bus)?);
        if !(model.buses[f].in_service && model.buses[t].in_service) {
            continue;
        }
        let ys = Complex64::new(line.r, line.x).inv();
        let half_shunt = Complex64::new(0.0, line.b / 2.0);
        y[(f, f)] += ys + half_shunt;
        y[(t, t)] += ys + half_shunt;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
        slack_connected |= f == slack || t == slack;
    }
    for tr in model.transformers.iter().filter(|t| t.in_service) {
        let (h, l) = (lookup(&tr.hv_bus)?, lookup(&tr.lv_bus)?);
        if !(model.buses[h].in_service && model.buses[l].in_service) {
            continue;
        }
        let ys = Complex64::new(tr.r, tr.x).inv();
        let k = tr.ratio();
        y[(h, h)] += ys * (k * k);
        y[(l, l)] += ys;
        y[(h, l)] -= ys * k;
        y[(l, h)] -= ys * k;
        slack_connected |= h == slack || l == slack;
    }
    let others_in_service = model.buses.iter().enumerate().any(|(i, b)| i != slack && b.in_service);
    if !slack_connected && others_in_service {
        return Err(GridError::IsolatedSlack(model.slack_bus.clone()));
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn single_reactance_line() {
        let mut m = GridModel::new("t", "a");
        m.buses = vec![bus("a"), bus("b")];
        m.lines = vec![line("l", "a", "b", 0.0, 0.1)];
        let y = build_admittance(&m).unwrap();
        assert!((y[(0, 1)] - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y[(0, 0)] - Complex64::new(0.0, -10.0)).norm() < 1e-12);
        assert_eq!(y[(0, 1)], y[(1, 0)]);
    }

    #[test]
    fn out_of_service_branches_contribute_nothing() {
        let mut m = GridModel::new("t", "a");
        m.buses = vec![bus("a"), bus("b"), bus("c")];
        m.lines = vec![line("l1", "a", "b", 0.01, 0.1), line("l2", "b", "c", 0.01, 0.1)];
        m.transformers = vec![transformer("t1", "a", "c", 0.05)];
        for l in &mut m.lines {
            l.in_service = false;
        }
        m.transformers[0].in_service = false;
        // every branch out: the slack is isolated.
        assert!(matches!(build_admittance(&m), Err(GridError::IsolatedSlack(_))));
        m.buses.truncate(1);
        m.lines.clear();
        m.transformers.clear();
        let y = build_admittance(&m).unwrap();
        assert_eq!(y[(0, 0)], Complex64::new(0.0, 0.0));

        let mut m = GridModel::new("t", "a");
        m.buses = vec![bus("a"), bus("b"), bus("c")];
        m.lines = vec![line("l1", "a", "b", 0.01, 0.1), line("l2", "b", "c", 0.01, 0.1)];
        m.lines[1].in_service = false;
        let y = build_admittance(&m).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j && (i == 2 || j == 2) {
                    assert_eq!(y[(i, j)], Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn neutral_tap_transformer_matches_plain_impedance() {
        let mut with_trafo = GridModel::new("t", "a");
        with_trafo.buses = vec![bus("a"), bus("b")];
        let mut tr = transformer("t", "a", "b", 0.08);
        tr.r = 0.01;
        with_trafo.transformers = vec![tr];
        let mut with_line = GridModel::new("t", "a");
        with_line.buses = vec![bus("a"), bus("b")];
        with_line.lines = vec![line("l", "a", "b", 0.01, 0.08)];
        let a = build_admittance(&with_trafo).unwrap();
        let b = build_admittance(&with_line).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn off_nominal_ratio_scales_hv_side() {
        let mut m = GridModel::new("t", "a");
        m.buses = vec![bus("a"), bus("b")];
        let mut tr = transformer("t", "a", "b", 0.1);
        tr.tap = 2;
        m.transformers = vec![tr];
        let y = build_admittance(&m).unwrap();
        let ys = Complex64::new(0.0, 0.1).inv();
        assert!((y[(0, 0)] - ys * 1.05 * 1.05).norm() < 1e-12);
        assert!((y[(1, 1)] - ys).norm() < 1e-12);
        assert!((y[(0, 1)] + ys * 1.05).norm() < 1e-12);
    }
}
