//! Period map of T-periodic linear coefficients: spectrum split against the
//! unit circle, exponent and bound estimates, the periodic solution of the
//! inhomogeneous problem, and robustness scans under coefficient perturbations.

use nalgebra::{DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::TraceOptions;
use crate::coeffs::LinearCoeffs;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{l2_norm, GridFunction, SpaceTimeField};
use crate::linear_solver::{stable_dt, Propagator, DEFAULT_CFL};

pub const DEFAULT_GAP: f64 = 0.02;

/// Eigenvalue moduli below this are treated as this value when computing
/// exponents, and transient norms below it are ignored when fitting `M_hat`.
pub const MODULUS_FLOOR: f64 = 1e-12;

/// Largest tolerated relative mismatch between coefficients at `t` and `t + T`.
const PERIODICITY_TOL: f64 = 1e-8;

const FIT_POWERS: usize = 5;
const FIT_SAMPLES: usize = 6;

/// Spatial grid and time-step choice shared by the period-map computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub nx: usize,
    pub cfl: f64,
    /// Fixed step; when absent it is derived from `cfl` and the largest speed.
    pub dt: Option<f64>,
    pub trace: TraceOptions,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { nx: 201, cfl: DEFAULT_CFL, dt: None, trace: TraceOptions::default() }
    }
}

impl GridOptions {
    pub fn with_nx(nx: usize) -> Self {
        GridOptions { nx, ..Default::default() }
    }

    pub fn dt_for(&self, coeffs: &LinearCoeffs, t0: f64, t1: f64) -> Result<f64> {
        match self.dt {
            Some(dt) => Ok(dt),
            None => stable_dt(coeffs, self.nx, t0, t1, self.cfl),
        }
    }

    pub fn propagator(&self, coeffs: &LinearCoeffs, t0: f64, t1: f64) -> Result<Propagator> {
        let dt = self.dt_for(coeffs, t0, t1)?;
        Propagator::new(coeffs, self.nx, t0, t1, dt, &self.trace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralClass {
    Stable,
    Unstable,
    Ambiguous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonodromyDecomposition {
    #[serde(skip)]
    pub matrix: DMatrix<f64>,
    /// Sorted by decreasing modulus.
    pub eigenvalues: Vec<Eigenvalue>,
    pub classes: Vec<SpectralClass>,
    pub stable_count: usize,
    pub unstable_dim: usize,
    pub ambiguous: Vec<Eigenvalue>,
    pub dichotomy: bool,
    pub alpha_hat: f64,
    pub m_hat: f64,
    pub gap: f64,
    pub s: f64,
    pub period: f64,
    pub nx: usize,
    pub dt: f64,
    pub steps: usize,
}

impl MonodromyDecomposition {
    /// `|lambda|` of the largest `k` eigenvalues.
    pub fn top_moduli(&self, k: usize) -> Vec<f64> {
        self.eigenvalues.iter().take(k).map(|e| e.modulus).collect()
    }

    /// Oblique projector onto the unstable invariant subspace along the
    /// stable one (`P_u`; the dichotomy projector is `I - P_u`).
    pub fn unstable_projector(&self) -> Result<DMatrix<f64>> {
        let r = self.unstable_dim;
        let dim = self.matrix.nrows();
        if r == 0 {
            return Ok(DMatrix::zeros(dim, dim));
        }
        let v = invariant_subspace(&self.matrix, r)?;
        let w = invariant_subspace(&self.matrix.transpose(), r)?;
        let wtv = w.transpose() * &v;
        let inv = wtv
            .try_inverse()
            .ok_or_else(|| Error::Singular("unstable left and right subspaces are not complementary".into()))?;
        Ok(&v * inv * w.transpose())
    }
}

/// Orthonormal basis of the dominant `r`-dimensional invariant subspace by
/// orthogonal subspace iteration.
fn invariant_subspace(m: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let dim = m.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = DMatrix::from_fn(dim, r, |_, _| rng.random_range(-1.0..1.0));
    v = v.qr().q();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    for _ in 0..20_000 {
        let mv = m * &v;
        let next = mv.clone().qr().q();
        // residual of the invariance relation M V = V (V^T M V)
        let s = next.transpose() * m * &next;
        let residual = (m * &next - &next * s).norm() / scale;
        v = next;
        if residual < 1e-11 {
            return Ok(v);
        }
    }
    Err(Error::Eigen("subspace iteration for the unstable subspace did not converge".into()))
}

fn check_periodic(coeffs: &LinearCoeffs, s: f64, period: f64) -> Result<()> {
    if !(period > 0.0) {
        return Err(Error::Config(format!("period T = {period} must be positive")));
    }
    let defect = coeffs.periodicity_defect(s, period)?;
    if defect > PERIODICITY_TOL {
        return Err(Error::InvalidProblem(format!(
            "coefficients are not {period}-periodic in t (sampled mismatch {defect:.3e})"
        )));
    }
    Ok(())
}

/// Period map `U(s + T, s)` as a dense matrix, built column by column.
pub fn monodromy_matrix(prop: &Propagator) -> Result<DMatrix<f64>> {
    let dim = prop.n() * (prop.nx() + 1);
    let columns = (0..dim)
        .into_par_iter()
        .map(|c| {
            let mut e = vec![0.0; dim];
            e[c] = 1.0;
            prop.apply_data(&e, false)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_vec(dim, dim, columns.concat()))
}

pub fn classify(modulus: f64, gap: f64) -> SpectralClass {
    if modulus < 1.0 - gap {
        SpectralClass::Stable
    } else if modulus > 1.0 + gap {
        SpectralClass::Unstable
    } else {
        SpectralClass::Ambiguous
    }
}

/// Eigenvalues sorted by decreasing modulus.
///
/// The shifted QR iteration can stall on tight eigenvalue clusters (exact
/// transport maps are scaled permutations up to rounding noise). Failed
/// attempts are retried with a looser deflation threshold and then under
/// seeded random orthogonal similarities.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Eigenvalue>> {
    let dim = m.nrows();
    let budget = 100 * dim.max(10);
    let mut schur = Schur::try_new(m.clone(), f64::EPSILON, budget)
        .or_else(|| Schur::try_new(m.clone(), 1e-13, budget));
    let mut rng = ChaCha8Rng::seed_from_u64(0x0e16);
    for _ in 0..3 {
        if schur.is_some() {
            break;
        }
        let q = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        schur = Schur::try_new(q.transpose() * m * &q, 1e-13, budget);
    }
    let schur = schur.ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    let mut eig: Vec<Eigenvalue> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| Eigenvalue { re: z.re, im: z.im, modulus: z.norm() })
        .collect();
    if eig.iter().any(|e| !e.modulus.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    eig.sort_by(|a, b| b.modulus.total_cmp(&a.modulus).then(b.im.total_cmp(&a.im)));
    Ok(eig)
}

pub fn assemble_monodromy(coeffs: &LinearCoeffs, s: f64, period: f64, grid: &GridOptions, gap: f64) -> Result<MonodromyDecomposition> {
    check_periodic(coeffs, s, period)?;
    let prop = grid.propagator(coeffs, s, s + period)?;
    decompose(monodromy_matrix(&prop)?, &prop, gap)
}

/// Spectral split and exponent/bound estimates of an assembled period map.
pub fn decompose(matrix: DMatrix<f64>, prop: &Propagator, gap: f64) -> Result<MonodromyDecomposition> {
    let period = prop.end() - prop.start();
    let eigenvalues = eigenvalues(&matrix)?;
    let classes: Vec<SpectralClass> = eigenvalues.iter().map(|e| classify(e.modulus, gap)).collect();
    let stable_count = classes.iter().filter(|c| **c == SpectralClass::Stable).count();
    let unstable_dim = classes.iter().filter(|c| **c == SpectralClass::Unstable).count();
    let ambiguous: Vec<Eigenvalue> = eigenvalues
        .iter()
        .zip(&classes)
        .filter(|(_, c)| **c == SpectralClass::Ambiguous)
        .map(|(e, _)| *e)
        .collect();
    let alpha_hat = eigenvalues
        .iter()
        .zip(&classes)
        .filter(|(_, c)| **c != SpectralClass::Ambiguous)
        .map(|(e, _)| e.modulus.max(MODULUS_FLOOR).ln().abs() / period)
        .fold(f64::INFINITY, f64::min);
    let alpha_hat = if alpha_hat.is_finite() { alpha_hat } else { 0.0 };
    let mut dec = MonodromyDecomposition {
        matrix,
        eigenvalues,
        classes,
        stable_count,
        unstable_dim,
        dichotomy: ambiguous.is_empty(),
        ambiguous,
        alpha_hat,
        m_hat: 1.0,
        gap,
        s: prop.start(),
        period,
        nx: prop.nx(),
        dt: prop.dt(),
        steps: prop.step_count(),
    };
    if dec.dichotomy {
        dec.m_hat = fit_bound(&dec, prop.n(), prop.nx())?;
    }
    Ok(dec)
}

/// `max ||M^k P_s phi|| e^{alpha k T} / ||P_s phi||` together with the
/// backward counterpart on the unstable part, over `k <= 5` and seeded random
/// `phi`; floored at 1.
fn fit_bound(dec: &MonodromyDecomposition, n: usize, nx: usize) -> Result<f64> {
    let m = &dec.matrix;
    let dim = m.nrows();
    let norm = |v: &DVector<f64>| l2_norm(v.as_slice(), n, nx);
    let growth = dec.alpha_hat * dec.period;
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1c0);
    let samples: Vec<DVector<f64>> =
        (0..FIT_SAMPLES).map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0))).collect();

    let (p_u, back) = if dec.unstable_dim > 0 {
        let v = invariant_subspace(m, dec.unstable_dim)?;
        let w = invariant_subspace(&m.transpose(), dec.unstable_dim)?;
        let wtv_inv = (w.transpose() * &v)
            .try_inverse()
            .ok_or_else(|| Error::Singular("unstable left and right subspaces are not complementary".into()))?;
        // restriction of M to span(V) in the V coordinates
        let s_inv = (v.transpose() * m * &v)
            .try_inverse()
            .ok_or_else(|| Error::Singular("unstable block is singular".into()))?;
        (Some((v.clone(), wtv_inv * w.transpose())), Some(s_inv))
    } else {
        (None, None)
    };

    let mut log_best = 0.0f64;
    let mut consider = |start: &DVector<f64>, step: &dyn Fn(&DVector<f64>) -> DVector<f64>| {
        let n0 = norm(start);
        if n0 <= 0.0 {
            return;
        }
        let mut cur = start.clone();
        for k in 1..=FIT_POWERS {
            cur = step(&cur);
            let rel = norm(&cur) / n0;
            if rel > MODULUS_FLOOR && rel.is_finite() {
                log_best = log_best.max(rel.ln() + growth * k as f64);
            }
        }
    };
    for phi in &samples {
        match (&p_u, &back) {
            (Some((v, coord)), Some(s_inv)) => {
                let c = coord * phi;
                let unstable = v * &c;
                let stable = phi - &unstable;
                consider(&stable, &|x| m * x);
                consider(&unstable, &|x| v * (s_inv * (v.transpose() * x)));
            }
            _ => consider(phi, &|x| m * x),
        }
    }
    Ok(log_best.exp().max(1.0))
}

#[derive(Debug, Clone)]
pub struct PeriodicSolution {
    pub field: SpaceTimeField,
    /// `||u(s) - u(s + T)||_{L2}`.
    pub defect: f64,
    pub relative_defect: f64,
}

/// The unique periodic solution: `(I - M) u(s) = q`, `q` the one-period
/// response from zero data, then one more inhomogeneous period from `u(s)`.
pub fn solve_periodic_linear(coeffs: &LinearCoeffs, s: f64, period: f64, grid: &GridOptions, gap: f64) -> Result<PeriodicSolution> {
    check_periodic(coeffs, s, period)?;
    let prop = grid.propagator(coeffs, s, s + period)?;
    let m = monodromy_matrix(&prop)?;
    let dec = decompose(m.clone(), &prop, gap)?;
    if !dec.dichotomy {
        return Err(Error::NoDichotomy(format!(
            "{} eigenvalue(s) of the period map lie within {gap} of the unit circle",
            dec.ambiguous.len()
        )));
    }
    solve_periodic_with(&prop, &m)
}

/// Periodic solve with an already assembled period map of `prop`.
pub fn solve_periodic_with(prop: &Propagator, m: &DMatrix<f64>) -> Result<PeriodicSolution> {
    let (n, nx) = (prop.n(), prop.nx());
    let dim = n * (nx + 1);
    let q = prop.apply_data(&vec![0.0; dim], true)?;
    let lhs = DMatrix::identity(dim, dim) - m;
    let u0 = lhs
        .lu()
        .solve(&DVector::from_vec(q))
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Singular("I - M is numerically singular".into()))?;
    periodic_from_start(prop, u0.as_slice())
}

/// Runs one period from `u0` and packages the result as a periodic field.
pub fn periodic_from_start(prop: &Propagator, u0: &[f64]) -> Result<PeriodicSolution> {
    let phi = GridFunction::from_data(prop.n(), prop.nx(), prop.start(), u0.to_vec())?;
    let mut field = prop.solve(&phi, true)?;
    let defect = field.first().sub(field.last()).l2_norm();
    let scale = field.levels().iter().map(|l| l.l2_norm()).fold(0.0, f64::max);
    let relative_defect = if scale > 0.0 { defect / scale } else { defect };
    field.periodic = true;
    Ok(PeriodicSolution { field, defect, relative_defect })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessEntry {
    pub eps: f64,
    pub alpha_hat: f64,
    pub m_hat: f64,
    pub dichotomy: bool,
    pub unstable_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub base_unstable_dim: usize,
    pub base_alpha_hat: f64,
    pub entries: Vec<RobustnessEntry>,
    /// Largest `|eps|` such that every tested `|eps'| <= |eps|` keeps the
    /// dichotomy with the base unstable dimension.
    pub persistence_threshold: Option<f64>,
    /// Number of smallest-`|eps|` entries that persist before the first failure.
    pub persisting_prefix: usize,
}

/// Decomposition of `a + eps a~`, `b + eps b~` for each `eps`.
#[allow(clippy::too_many_arguments)]
pub fn robustness_scan(
    base: &LinearCoeffs,
    a_tilde: &[Expr],
    b_tilde: &[Vec<Expr>],
    epsilons: &[f64],
    s: f64,
    period: f64,
    grid: &GridOptions,
    gap: f64,
) -> Result<RobustnessReport> {
    let base_dec = assemble_monodromy(base, s, period, grid, gap)?;
    if !base_dec.dichotomy {
        return Err(Error::NoDichotomy("the unperturbed system has no numerical dichotomy".into()));
    }
    let mut order: Vec<f64> = epsilons.to_vec();
    order.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    let mut entries = Vec::with_capacity(order.len());
    for &eps in &order {
        let coeffs = base.clone().with_perturbation(eps, a_tilde, b_tilde)?;
        let dec = assemble_monodromy(&coeffs, s, period, grid, gap)?;
        entries.push(RobustnessEntry {
            eps,
            alpha_hat: dec.alpha_hat,
            m_hat: dec.m_hat,
            dichotomy: dec.dichotomy,
            unstable_dim: dec.unstable_dim,
        });
    }
    let persisting_prefix = entries
        .iter()
        .take_while(|e| e.dichotomy && e.unstable_dim == base_dec.unstable_dim)
        .count();
    let persistence_threshold = persisting_prefix.checked_sub(1).map(|i| entries[i].eps.abs());
    Ok(RobustnessReport {
        base_unstable_dim: base_dec.unstable_dim,
        base_alpha_hat: base_dec.alpha_hat,
        entries,
        persistence_threshold,
        persisting_prefix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ProblemConfig, ProblemSpec};

    fn scalar(a: &str, b: &str, f: &str, p: f64) -> LinearCoeffs {
        let cfg = ProblemConfig {
            n: 1,
            m: 1,
            a: vec![a.into()],
            b: Some(vec![vec![b.into()]]),
            f: Some(vec![f.into()]),
            p: vec![vec![p]],
            period: 1.0,
            delta0: 0.1,
            lambda0_declared: 0.5,
        };
        LinearCoeffs::linearized(&ProblemSpec::from_config(&cfg).unwrap()).unwrap()
    }

    #[test]
    fn classification() {
        assert_eq!(classify(0.5, 0.02), SpectralClass::Stable);
        assert_eq!(classify(0.99, 0.02), SpectralClass::Ambiguous);
        assert_eq!(classify(1.03, 0.02), SpectralClass::Unstable);
    }

    #[test]
    fn eigenvalues_of_rotation_block() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, -2.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
        let e = eigenvalues(&m).unwrap();
        assert!((e[0].modulus - 2.0).abs() < 1e-12 && (e[1].modulus - 2.0).abs() < 1e-12);
        assert!(e[0].im > 0.0 && e[1].im < 0.0);
        assert!((e[2].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn projector_is_idempotent_and_commutes() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 0.3, 0.2, 0.1, 0.0, 1.5]);
        let prop_free = MonodromyDecomposition {
            matrix: m.clone(),
            eigenvalues: eigenvalues(&m).unwrap(),
            classes: vec![],
            stable_count: 1,
            unstable_dim: 2,
            ambiguous: vec![],
            dichotomy: true,
            alpha_hat: 0.0,
            m_hat: 1.0,
            gap: 0.02,
            s: 0.0,
            period: 1.0,
            nx: 2,
            dt: 0.0,
            steps: 0,
        };
        let p = prop_free.unstable_projector().unwrap();
        assert!((&p * &p - &p).norm() < 1e-9);
        assert!((&m * &p - &p * &m).norm() < 1e-9);
        assert!((p.trace() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn outflow_only_scalar_is_nilpotent() {
        // a = 1, zero inflow: everything leaves within one unit of time
        let c = scalar("1", "0", "0", 0.0);
        let grid = GridOptions { nx: 40, cfl: 1.0, dt: None, trace: TraceOptions::default() };
        let dec = assemble_monodromy(&c, 0.0, 1.5, &grid, DEFAULT_GAP).unwrap();
        assert!(dec.eigenvalues[0].modulus < 1e-6);
        assert!(dec.dichotomy && dec.unstable_dim == 0);
        assert!(dec.alpha_hat > 15.0);
    }

    #[test]
    fn steady_periodic_solution() {
        let c = scalar("1", "1", "1", 0.0);
        let sol = solve_periodic_linear(&c, 0.0, 1.0, &GridOptions::with_nx(50), DEFAULT_GAP).unwrap();
        for lvl in sol.field.levels() {
            for i in 0..=50 {
                let x = i as f64 / 50.0;
                assert!((lvl.get(0, i) - (1.0 - (-x).exp())).abs() < 1e-4);
            }
        }
        assert!(sol.defect < 1e-8);
    }

    #[test]
    fn homogeneous_periodic_solution_is_zero() {
        let c = scalar("1", "0.3", "0", 0.5);
        let sol = solve_periodic_linear(&c, 0.0, 1.0, &GridOptions::with_nx(30), DEFAULT_GAP).unwrap();
        assert_eq!(sol.field.sup_norm(), 0.0);
    }

    #[test]
    fn aperiodic_coefficients_are_rejected() {
        let c = scalar("1 + 0.1*sin(t)", "0", "0", 0.0);
        assert!(matches!(
            assemble_monodromy(&c, 0.0, 1.0, &GridOptions::with_nx(20), DEFAULT_GAP),
            Err(Error::InvalidProblem(_))
        ));
    }

    #[test]
    fn reflection_gain_above_one_is_unstable() {
        // u(0,t) = 3 u(1,t): one round trip multiplies by 3 in unit time
        let c = scalar("1", "0", "0", 3.0);
        let grid = GridOptions { nx: 40, cfl: 1.0, dt: None, trace: TraceOptions::default() };
        let dec = assemble_monodromy(&c, 0.0, 1.0, &grid, DEFAULT_GAP).unwrap();
        assert!(dec.dichotomy);
        assert!(dec.unstable_dim > 0);
        assert!((dec.eigenvalues[0].modulus - 3.0).abs() < 0.05);
        assert!(dec.m_hat >= 1.0 && dec.m_hat.is_finite());
    }
}
