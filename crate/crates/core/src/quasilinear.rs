//! Frozen-coefficient iteration for small periodic solutions of the
//! quasilinear system: `u^0 = 0`, and `u^{k+1}` is the periodic solution of
//! the linear problem with `a = A(x,t,u^k)`, `b = B(x,t,u^k)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coeffs::LinearCoeffs;
use crate::dichotomy::{decompose, monodromy_matrix, periodic_from_start, solve_periodic_with, GridOptions, PeriodicSolution};
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::linear_solver::{step_count, Propagator};
use crate::problem::{validate_h1, ProblemSpec};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50;

/// Consecutive non-contracting steps that count as divergence.
const DIVERGENCE_RUN: usize = 3;

/// Differences below this multiple of the solution scale are rounding noise
/// and are left out of the contraction estimate.
const RATIO_NOISE: f64 = 1e-11;

const RICHARDSON_MAX: usize = 60;
const RICHARDSON_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationOptions {
    pub grid: GridOptions,
    pub s: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub gap: f64,
    /// Keep the first period map and only precondition later solves with it.
    pub reuse_monodromy: bool,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions {
            grid: GridOptions::default(),
            s: 0.0,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            gap: crate::dichotomy::DEFAULT_GAP,
            reuse_monodromy: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IterationStatus {
    Converged,
    MaxIterations,
    Diverged { iterate: usize },
    DichotomyLost { iterate: usize },
    Breakdown { iterate: usize, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationReport {
    pub status: IterationStatus,
    pub converged: bool,
    /// Number of periodic solves performed.
    pub iterates: usize,
    /// `||u^{k+1} - u^k||` in the C^1 grid norm, one per iterate.
    pub differences: Vec<f64>,
    /// `differences[k+1] / differences[k]`.
    pub ratios: Vec<f64>,
    /// Largest ratio whose numerator is above rounding noise.
    pub rho: Option<f64>,
    pub final_residual: f64,
    pub periodicity_defect: f64,
    pub source_sup: f64,
    pub solution_sup: f64,
    pub delta0: f64,
    pub left_delta0_ball: bool,
    pub unstable_dim: usize,
    pub alpha_hat: f64,
    pub dt: f64,
    pub nx: usize,
    pub reused_monodromy: bool,
    #[serde(skip)]
    pub solution: Option<SpaceTimeField>,
}

/// Coefficients `A(x,t,u_k)`, `B(x,t,u_k)` with `u_k` interpolated bilinearly.
pub fn freeze_coefficients(spec: &ProblemSpec, u_k: Arc<SpaceTimeField>) -> Result<LinearCoeffs> {
    LinearCoeffs::frozen(spec, u_k)
}

/// Largest `|A_j|` over sampled `(x, t)` and states in the `delta0` ball.
pub fn speed_bound(spec: &ProblemSpec) -> Result<f64> {
    let samples = [5usize, 3, 2]
        .into_iter()
        .find(|s| (s.pow(spec.n as u32 + 2)) <= 1_000_000)
        .unwrap_or(2);
    Ok(validate_h1(spec, samples)?.max_speed)
}

/// `max(sup |d|, sup |D_x d|, sup |D_t d|)` with forward differences.
pub fn c1_difference(a: &SpaceTimeField, b: &SpaceTimeField) -> f64 {
    let (levels_a, levels_b) = (a.levels(), b.levels());
    let nx = a.nx();
    let dx = 1.0 / nx as f64;
    let dt = a.dt();
    let mut top = 0.0f64;
    let mut prev: Option<Vec<f64>> = None;
    for (la, lb) in levels_a.iter().zip(levels_b) {
        let d: Vec<f64> = la.data().iter().zip(lb.data()).map(|(x, y)| x - y).collect();
        for j in 0..a.n() {
            let c = &d[j * (nx + 1)..(j + 1) * (nx + 1)];
            for i in 0..=nx {
                top = top.max(c[i].abs());
                if i < nx {
                    top = top.max((c[i + 1] - c[i]).abs() / dx);
                }
            }
        }
        if let Some(p) = &prev {
            if dt > 0.0 {
                for (x, y) in d.iter().zip(p) {
                    top = top.max((x - y).abs() / dt);
                }
            }
        }
        prev = Some(d);
    }
    top
}

/// Sup over interior nodes and levels of `|u_t + A(u) u_x + B(u) u - f|`
/// with centered differences.
pub fn pde_residual(spec: &ProblemSpec, u: &SpaceTimeField) -> Result<f64> {
    let n = spec.n;
    let nx = u.nx();
    let levels = u.levels();
    if nx < 2 || levels.len() < 3 {
        return Ok(0.0);
    }
    let dx = 1.0 / nx as f64;
    let dt = u.dt();
    let mut vars = vec![0.0; n + 2];
    let mut top = 0.0f64;
    for l in 1..levels.len() - 1 {
        let (prev, cur, next) = (&levels[l - 1], &levels[l], &levels[l + 1]);
        let t = cur.t;
        for i in 1..nx {
            let x = i as f64 / nx as f64;
            vars[0] = x;
            vars[1] = t;
            for k in 0..n {
                vars[2 + k] = cur.get(k, i);
            }
            for j in 0..n {
                let ut = (next.get(j, i) - prev.get(j, i)) / (2.0 * dt);
                let ux = (cur.get(j, i + 1) - cur.get(j, i - 1)) / (2.0 * dx);
                let a = spec.speed_bound()[j].eval(&vars)?;
                let mut r = ut + a * ux - spec.source_bound()[j].eval(&vars)?;
                for k in 0..n {
                    r += spec.coupling_bound()[j][k].eval(&vars)? * cur.get(k, i);
                }
                top = top.max(r.abs());
            }
        }
    }
    Ok(top)
}

fn source_sup(spec: &ProblemSpec, s: f64) -> Result<f64> {
    let mut vars = vec![0.0; spec.n + 2];
    let mut top = 0.0f64;
    for ix in 0..=32 {
        for it in 0..32 {
            vars[0] = ix as f64 / 32.0;
            vars[1] = s + spec.period * it as f64 / 32.0;
            for f in spec.source_bound() {
                top = top.max(f.eval(&vars)?.abs());
            }
        }
    }
    Ok(top)
}

/// Preconditioned fixed-point solve of `u = P(u)`, `P` the one-period map
/// of `prop` with source, using the LU factors of `I - M_ref`.
fn richardson(prop: &Propagator, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, start: &[f64]) -> Result<Option<Vec<f64>>> {
    let mut u = DVector::from_column_slice(start);
    for _ in 0..RICHARDSON_MAX {
        let pu = DVector::from_vec(prop.apply_data(u.as_slice(), true)?);
        let r = &pu - &u;
        let scale = pu.amax().max(1.0);
        if r.amax() <= RICHARDSON_TOL * scale {
            return Ok(Some(pu.as_slice().to_vec()));
        }
        let corr = lu.solve(&r).ok_or_else(|| Error::Singular("I - M is numerically singular".into()))?;
        u += corr;
        if u.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
    }
    Ok(None)
}

pub fn iterate(spec: &ProblemSpec, opts: &IterationOptions) -> Result<IterationReport> {
    let s = opts.s;
    let period = spec.period;
    let nx = opts.grid.nx;
    let dt = match opts.grid.dt {
        Some(dt) => dt,
        None => opts.grid.cfl / (nx as f64 * speed_bound(spec)?),
    };
    let grid = GridOptions { dt: Some(dt), ..opts.grid };

    let steps = step_count(period, dt);
    let mut current = Arc::new(SpaceTimeField::zeros(spec.n, nx, s, period / steps as f64, steps, true));
    let mut differences = Vec::new();
    let mut ratios = Vec::new();
    let mut status = IterationStatus::MaxIterations;
    let mut reference: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = None;
    let mut unstable_dim = 0;
    let mut alpha_hat = 0.0;
    let mut last_solution: Option<PeriodicSolution> = None;
    let mut non_contracting = 0;
    let mut iterates = 0;

    for k in 0..opts.max_iter.max(1) {
        iterates = k + 1;
        let step = (|| -> Result<Option<PeriodicSolution>> {
            let coeffs = if k == 0 { LinearCoeffs::linearized(spec)? } else { freeze_coefficients(spec, current.clone())? };
            let prop = grid.propagator(&coeffs, s, s + period)?;
            if opts.reuse_monodromy {
                if let Some(lu) = &reference {
                    if let Some(u0) = richardson(&prop, lu, current.first().data())? {
                        return Ok(Some(periodic_from_start(&prop, &u0)?));
                    }
                }
            }
            let m = monodromy_matrix(&prop)?;
            let dec = decompose(m.clone(), &prop, opts.gap)?;
            if !dec.dichotomy {
                return Ok(None);
            }
            if k == 0 {
                unstable_dim = dec.unstable_dim;
                alpha_hat = dec.alpha_hat;
            }
            if opts.reuse_monodromy && reference.is_none() {
                let dim = m.nrows();
                reference = Some((DMatrix::identity(dim, dim) - &m).lu());
            }
            solve_periodic_with(&prop, &m).map(Some)
        })();
        let solution = match step {
            Ok(Some(sol)) => sol,
            Ok(None) => {
                status = IterationStatus::DichotomyLost { iterate: k + 1 };
                break;
            }
            Err(e @ (Error::Cfl { .. } | Error::NonFinite { .. } | Error::Trace(_) | Error::Singular(_) | Error::EvalAt { .. })) => {
                status = IterationStatus::Breakdown { iterate: k + 1, message: e.to_string() };
                break;
            }
            Err(e) => return Err(e),
        };
        let diff = c1_difference(&solution.field, &current);
        if let Some(&prev) = differences.last() {
            let r: f64 = if prev > 0.0 { diff / prev } else { 0.0 };
            ratios.push(r);
            non_contracting = if r >= 1.0 { non_contracting + 1 } else { 0 };
        }
        differences.push(diff);
        current = Arc::new(solution.field.clone());
        last_solution = Some(solution);
        if diff < opts.tol {
            status = IterationStatus::Converged;
            break;
        }
        if non_contracting >= DIVERGENCE_RUN {
            status = IterationStatus::Diverged { iterate: k + 1 };
            break;
        }
    }

    let solution_sup = current.sup_norm();
    let scale = differences.first().copied().unwrap_or(0.0).max(solution_sup);
    let rho = differences
        .windows(2)
        .filter(|w| w[1] > RATIO_NOISE * scale.max(f64::MIN_POSITIVE) && w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
    let final_residual = pde_residual(spec, &current)?;
    Ok(IterationReport {
        converged: status == IterationStatus::Converged,
        status,
        iterates,
        differences,
        ratios,
        rho,
        final_residual,
        periodicity_defect: last_solution.as_ref().map_or(0.0, |s| s.defect),
        source_sup: source_sup(spec, s)?,
        solution_sup,
        delta0: spec.delta0,
        left_delta0_ball: solution_sup > spec.delta0,
        unstable_dim,
        alpha_hat,
        dt: current.dt(),
        nx,
        reused_monodromy: opts.reuse_monodromy,
        solution: Some((*current).clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridFunction;
    use crate::problem::ProblemConfig;

    fn scalar(a: &str, b: &str, f: &str) -> ProblemSpec {
        ProblemSpec::from_config(&ProblemConfig {
            n: 1,
            m: 1,
            a: vec![a.into()],
            b: Some(vec![vec![b.into()]]),
            f: Some(vec![f.into()]),
            p: vec![vec![0.0]],
            period: 1.0,
            delta0: 0.1,
            lambda0_declared: 0.5,
        })
        .unwrap()
    }

    fn opts(nx: usize) -> IterationOptions {
        IterationOptions { grid: GridOptions::with_nx(nx), ..Default::default() }
    }

    #[test]
    fn zero_source_converges_immediately() {
        let r = iterate(&scalar("1 + u1", "1", "0"), &opts(20)).unwrap();
        assert_eq!(r.status, IterationStatus::Converged);
        assert_eq!(r.iterates, 1);
        assert_eq!(r.solution_sup, 0.0);
    }

    #[test]
    fn linear_problem_converges_in_two() {
        let r = iterate(&scalar("1", "1", "1 + 0.5*sin(2*pi*t)"), &opts(20)).unwrap();
        assert_eq!(r.status, IterationStatus::Converged);
        assert_eq!(r.iterates, 2);
        assert_eq!(r.differences[1], 0.0);
    }

    #[test]
    fn residual_of_zero_state() {
        let spec = scalar("1", "0", "0.25 + x");
        let field = SpaceTimeField::zeros(1, 10, 0.0, 0.1, 10, false);
        assert!((pde_residual(&spec, &field).unwrap() - 1.15).abs() < 1e-12);
        let spec = scalar("1", "0", "0");
        assert_eq!(pde_residual(&spec, &field).unwrap(), 0.0);
    }

    #[test]
    fn residual_of_exact_linear_state_is_small() {
        // u = x solves u_t + u_x = 1
        let spec = scalar("1", "0", "1");
        let levels = (0..=10).map(|l| GridFunction::from_fn(1, 16, 0.1 * l as f64, |_, x| x)).collect();
        let field = SpaceTimeField::new(levels, false).unwrap();
        assert!(pde_residual(&spec, &field).unwrap() < 1e-12);
    }

    #[test]
    fn c1_norm_sees_slopes() {
        let a = SpaceTimeField::new(vec![GridFunction::from_fn(1, 10, 0.0, |_, x| 0.1 * x); 1], false).unwrap();
        let b = SpaceTimeField::zeros(1, 10, 0.0, 0.1, 0, false);
        assert!((c1_difference(&a, &b) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn reuse_matches_full_reassembly() {
        let spec = scalar("1 + 0.5*u1", "1 + u1", "0.05*(1 + sin(2*pi*t))");
        let full = iterate(&spec, &opts(24)).unwrap();
        let fast = iterate(&spec, &IterationOptions { reuse_monodromy: true, ..opts(24) }).unwrap();
        assert!(full.converged && fast.converged);
        let d = c1_difference(full.solution.as_ref().unwrap(), fast.solution.as_ref().unwrap());
        assert!(d < 1e-7, "{d}");
    }
}
