//! Characteristic curves `tau = omega_j(xi; x, t)` solving
//! `d omega / d xi = 1 / a_j(xi, omega)`, `omega(x) = t`, traced backward in time
//! from an anchor until they leave the strip or reach a floor time.
//!
//! The curve is parameterised by `xi`; integration is classical RK4 with a
//! fixed number of substeps per unit length, so traces are reproducible.

use serde::{Deserialize, Serialize};

use crate::coeffs::LinearCoeffs;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// RK4 substeps per unit of `xi`.
    pub substeps_per_unit: usize,
    pub max_steps: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions { substeps_per_unit: 64, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    Boundary0,
    Boundary1,
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitPoint {
    pub which: ExitKind,
    /// `xi` where the trace stopped.
    pub location: f64,
    /// `tau` where the trace stopped.
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct CharTrace {
    pub family: usize,
    pub anchor: (f64, f64),
    /// `(xi, tau)` samples from the anchor to the exit, in tracing order.
    pub path: Vec<(f64, f64)>,
    pub exit: ExitPoint,
}

fn slope(coeffs: &LinearCoeffs, j: usize, xi: f64, tau: f64) -> Result<f64> {
    let a = coeffs.speed(j, xi, tau)?;
    let ok = if coeffs.is_rightward(j) { a >= coeffs.min_speed() } else { -a >= coeffs.min_speed() };
    if !ok || a == 0.0 {
        return Err(Error::Trace(format!(
            "speed a_{} = {a} at (x={xi}, t={tau}) violates the sign/size bound {}",
            j + 1,
            coeffs.min_speed()
        )));
    }
    Ok(1.0 / a)
}

fn rk4(coeffs: &LinearCoeffs, j: usize, xi: f64, tau: f64, h: f64) -> Result<f64> {
    let k1 = slope(coeffs, j, xi, tau)?;
    let k2 = slope(coeffs, j, xi + 0.5 * h, tau + 0.5 * h * k1)?;
    let k3 = slope(coeffs, j, xi + 0.5 * h, tau + 0.5 * h * k2)?;
    let k4 = slope(coeffs, j, xi + h, tau + h * k3)?;
    Ok(tau + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Trace family `j` backward in time from `(x, t)`.
pub fn trace_characteristic(
    coeffs: &LinearCoeffs,
    j: usize,
    x: f64,
    t: f64,
    floor_time: f64,
    opts: &TraceOptions,
) -> Result<CharTrace> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Trace(format!("anchor x = {x} outside [0,1]")));
    }
    if floor_time > t {
        return Err(Error::Trace(format!("floor time {floor_time} is after the anchor time {t}")));
    }
    let rightward = coeffs.is_rightward(j);
    let (target, kind) = if rightward { (0.0, ExitKind::Boundary0) } else { (1.0, ExitKind::Boundary1) };
    let h = 1.0 / opts.substeps_per_unit.max(1) as f64;
    let mut path = vec![(x, t)];
    let finish = |path: Vec<(f64, f64)>, which| {
        let (location, time) = *path.last().expect("non-empty");
        Ok(CharTrace { family: j, anchor: (x, t), path, exit: ExitPoint { which, location, time } })
    };
    if x == target {
        return finish(path, kind);
    }
    if t == floor_time {
        return finish(path, ExitKind::Floor);
    }

    let (mut xi, mut tau) = (x, t);
    for _ in 0..opts.max_steps {
        let next = if rightward { (xi - h).max(target) } else { (xi + h).min(target) };
        let tau_next = rk4(coeffs, j, xi, tau, next - xi)?;
        if tau_next < floor_time {
            let xi_star = locate_floor(coeffs, j, (xi, tau), (next, tau_next), floor_time)?;
            path.push((xi_star, floor_time));
            return finish(path, ExitKind::Floor);
        }
        path.push((next, tau_next));
        if next == target {
            return finish(path, kind);
        }
        xi = next;
        tau = tau_next;
    }
    Err(Error::Trace(format!("family {} exceeded {} substeps", j + 1, opts.max_steps)))
}

/// Newton iteration for the `xi` in `(start, end)` where the curve reaches
/// `floor`; each iterate re-integrates one RK4 step from `start`.
fn locate_floor(
    coeffs: &LinearCoeffs,
    j: usize,
    start: (f64, f64),
    end: (f64, f64),
    floor: f64,
) -> Result<f64> {
    let (xi0, tau0) = start;
    let (xi1, tau1) = end;
    let (lo, hi) = if xi0 < xi1 { (xi0, xi1) } else { (xi1, xi0) };
    let mut xi = xi0 + (floor - tau0) / (tau1 - tau0) * (xi1 - xi0);
    let tol = 1e-15 * (1.0 + floor.abs());
    for _ in 0..30 {
        let tau = rk4(coeffs, j, xi0, tau0, xi - xi0)?;
        let residual = floor - tau;
        if residual.abs() <= tol {
            break;
        }
        // d xi / d tau = a along the curve
        let step = residual * coeffs.speed(j, xi, tau)?;
        let next = (xi + step).clamp(lo, hi);
        if next == xi {
            break;
        }
        xi = next;
    }
    Ok(xi)
}

pub fn exit_point(trace: &CharTrace) -> ExitPoint {
    trace.exit
}

/// `c_j = exp ∫ (b_jj / a_j) d eta` from the anchor to the exit, trapezoid
/// rule on the trace samples.
pub fn integrating_factor(coeffs: &LinearCoeffs, trace: &CharTrace) -> Result<f64> {
    let j = trace.family;
    let ratio = |&(xi, tau): &(f64, f64)| -> Result<f64> {
        Ok(coeffs.diagonal_coupling(j, xi, tau)? / coeffs.speed(j, xi, tau)?)
    };
    let mut exponent = 0.0;
    let mut prev = ratio(&trace.path[0])?;
    for w in trace.path.windows(2) {
        let cur = ratio(&w[1])?;
        exponent += 0.5 * (w[1].0 - w[0].0) * (prev + cur);
        prev = cur;
    }
    Ok(exponent.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ProblemConfig, ProblemSpec};
    use proptest::prelude::*;

    fn coeffs(a: &[&str], b_diag: &[&str], m: usize) -> LinearCoeffs {
        let n = a.len();
        let b = (0..n)
            .map(|j| (0..n).map(|k| if j == k { b_diag[j].to_string() } else { "0".into() }).collect())
            .collect();
        let cfg = ProblemConfig {
            n,
            m,
            a: a.iter().map(|s| s.to_string()).collect(),
            b: Some(b),
            f: None,
            p: vec![vec![0.0; n]; n],
            period: 1.0,
            delta0: 0.1,
            lambda0_declared: 0.5,
        };
        LinearCoeffs::linearized(&ProblemSpec::from_config(&cfg).unwrap()).unwrap()
    }

    #[test]
    fn unit_speed_transport() {
        let c = coeffs(&["1", "-1"], &["0", "0"], 1);
        let opts = TraceOptions::default();
        let tr = trace_characteristic(&c, 0, 0.7, 5.0, 0.0, &opts).unwrap();
        assert_eq!(tr.path[0], (0.7, 5.0));
        assert_eq!(tr.exit.which, ExitKind::Boundary0);
        assert_eq!(tr.exit.location, 0.0);
        assert!((tr.exit.time - 4.3).abs() < 1e-14);
        for &(xi, tau) in &tr.path {
            assert!((tau - (5.0 + xi - 0.7)).abs() < 1e-14);
        }
        let tr = trace_characteristic(&c, 1, 0.7, 5.0, 0.0, &opts).unwrap();
        assert_eq!(tr.exit.which, ExitKind::Boundary1);
        assert!((tr.exit.time - 4.7).abs() < 1e-14);
    }

    #[test]
    fn floor_hit() {
        let c = coeffs(&["1", "-1"], &["0", "0"], 1);
        let tr = trace_characteristic(&c, 0, 0.7, 5.0, 4.9, &TraceOptions::default()).unwrap();
        assert_eq!(tr.exit.which, ExitKind::Floor);
        assert_eq!(tr.exit.time, 4.9);
        assert!((tr.exit.location - 0.6).abs() < 1e-14);
        let tr = trace_characteristic(&c, 1, 0.2, 1.0, 0.99, &TraceOptions::default()).unwrap();
        assert_eq!(tr.exit.which, ExitKind::Floor);
        assert!((tr.exit.location - 0.21).abs() < 1e-14);
    }

    // 2 tau - cos tau = xi - x + 2 t - cos t along a_j = 2 + sin(tau)
    fn exact_time(xi: f64, x: f64, t: f64) -> f64 {
        let rhs = xi - x + 2.0 * t - t.cos();
        let mut tau = t + (xi - x) / 2.0;
        for _ in 0..60 {
            tau -= (2.0 * tau - tau.cos() - rhs) / (2.0 + tau.sin());
        }
        tau
    }

    #[test]
    fn time_dependent_speed_matches_closed_form() {
        let c = coeffs(&["2+sin(t)", "-1"], &["0", "0"], 1);
        for &(x, t) in &[(1.0, 0.3), (0.55, 2.0), (0.9, -1.7)] {
            let tr = trace_characteristic(&c, 0, x, t, f64::NEG_INFINITY, &TraceOptions::default()).unwrap();
            for &(xi, tau) in &tr.path {
                assert!((tau - exact_time(xi, x, t)).abs() < 1e-8, "{xi} {tau}");
            }
        }
        // floor location against the closed form as well
        let tr = trace_characteristic(&c, 0, 0.8, 1.0, 0.9, &TraceOptions::default()).unwrap();
        assert!((exact_time(tr.exit.location, 0.8, 1.0) - 0.9).abs() < 1e-10);
    }

    #[test]
    fn slow_speed_is_rejected() {
        let c = coeffs(&["0.1", "-1"], &["0", "0"], 1);
        assert!(matches!(
            trace_characteristic(&c, 0, 0.5, 1.0, 0.0, &TraceOptions::default()),
            Err(Error::Trace(_))
        ));
    }

    #[test]
    fn integrating_factor_examples() {
        let opts = TraceOptions::default();
        let c = coeffs(&["1", "-1"], &["0", "0"], 1);
        let tr = trace_characteristic(&c, 0, 0.5, 1.0, 0.0, &opts).unwrap();
        assert_eq!(integrating_factor(&c, &tr).unwrap(), 1.0);

        let c = coeffs(&["1", "-1"], &["1", "0"], 1);
        let tr = trace_characteristic(&c, 0, 1.0, 3.0, 0.0, &opts).unwrap();
        assert!((integrating_factor(&c, &tr).unwrap() - (-1.0f64).exp()).abs() < 1e-14);

        // b_jj = a_j = const: exponent is the signed path length
        let c = coeffs(&["2", "-3"], &["2", "-3"], 1);
        let tr = trace_characteristic(&c, 0, 0.75, 3.0, 0.0, &opts).unwrap();
        assert!((integrating_factor(&c, &tr).unwrap() - (-0.75f64).exp()).abs() < 1e-14);
        let tr = trace_characteristic(&c, 1, 0.25, 3.0, 0.0, &opts).unwrap();
        assert!((integrating_factor(&c, &tr).unwrap() - (0.75f64).exp()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn semigroup_along_curve(x in 0.3f64..1.0, t in 0.0f64..6.0, d1 in 0.01f64..0.1, d2 in 0.01f64..0.1) {
            let c = coeffs(&["2+sin(t)+0.3*cos(3*x)", "-1-0.2*x"], &["0", "0"], 1);
            let opts = TraceOptions::default();
            let first = trace_characteristic(&c, 0, x, t, t - d1, &opts).unwrap();
            prop_assume!(first.exit.which == ExitKind::Floor);
            let (xi1, tau1) = (first.exit.location, first.exit.time);
            let second = trace_characteristic(&c, 0, xi1, tau1, tau1 - d2, &opts).unwrap();
            let direct = trace_characteristic(&c, 0, x, t, t - d1 - d2, &opts).unwrap();
            prop_assume!(second.exit.which == ExitKind::Floor && direct.exit.which == ExitKind::Floor);
            prop_assert!((second.exit.location - direct.exit.location).abs() < 1e-8);
        }

        #[test]
        fn direction_law(x in 0.0f64..=1.0, t in -5.0f64..5.0, extra in 0.01f64..3.0) {
            // both |speeds| >= 1, so any characteristic crosses within unit time
            let c = coeffs(&["1.5+0.5*sin(t+x)", "-1.5-0.5*cos(2*t)"], &["0", "0"], 1);
            let opts = TraceOptions::default();
            let floor = t - 1.0 - extra;
            let r = trace_characteristic(&c, 0, x, t, floor, &opts).unwrap();
            prop_assert_eq!(r.exit.which, ExitKind::Boundary0);
            let l = trace_characteristic(&c, 1, x, t, floor, &opts).unwrap();
            prop_assert_eq!(l.exit.which, ExitKind::Boundary1);
        }

        #[test]
        fn constant_speed_is_exact(x in 0.0f64..=1.0, t in -3.0f64..3.0, a in 0.6f64..4.0) {
            let src = format!("{a}");
            let c = coeffs(&[&src], &["0"], 1);
            let tr = trace_characteristic(&c, 0, x, t, f64::NEG_INFINITY, &TraceOptions::default()).unwrap();
            prop_assert!((tr.exit.time - (t - x / a)).abs() < 1e-13);
        }
    }
}
