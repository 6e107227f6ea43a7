//! Coefficients of a linear problem `u_t + a(x,t) u_x + b(x,t) u = f(x,t)`
//! with the reflection boundary conditions.
//!
//! They come from a [`ProblemSpec`] with the state slots of `A` and `B` bound
//! either to zero (the linearization) or to a frozen space-time field, plus an
//! optional scaled perturbation of `a` and `b`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{BoundExpr, Expr};
use crate::field::SpaceTimeField;
use crate::problem::{state_symbols, ProblemSpec};

/// Largest system size the evaluators support.
pub const MAX_COMPONENTS: usize = 16;

#[derive(Debug, Clone)]
struct Perturbation {
    eps: f64,
    speeds: Vec<BoundExpr>,
    coupling: Vec<Vec<BoundExpr>>,
}

#[derive(Debug, Clone)]
pub struct LinearCoeffs {
    n: usize,
    m: usize,
    speeds: Vec<BoundExpr>,
    coupling: Vec<Vec<BoundExpr>>,
    source: Vec<BoundExpr>,
    reflection: Vec<Vec<f64>>,
    frozen: Option<Arc<SpaceTimeField>>,
    perturbation: Option<Perturbation>,
    period: f64,
    min_speed: f64,
}

/// All coefficients at one point.
#[derive(Debug, Clone)]
pub struct LocalCoeffs {
    pub a: Vec<f64>,
    /// Row-major `n x n`.
    pub b: Vec<f64>,
    pub f: Vec<f64>,
}

impl LocalCoeffs {
    pub fn new(n: usize) -> Self {
        LocalCoeffs { a: vec![0.0; n], b: vec![0.0; n * n], f: vec![0.0; n] }
    }
}

impl LinearCoeffs {
    fn from_spec(spec: &ProblemSpec, frozen: Option<Arc<SpaceTimeField>>) -> Result<Self> {
        if spec.n > MAX_COMPONENTS {
            return Err(Error::InvalidProblem(format!(
                "n = {} exceeds the supported maximum {MAX_COMPONENTS}",
                spec.n
            )));
        }
        if let Some(field) = &frozen {
            if field.n() != spec.n {
                return Err(Error::InvalidProblem("frozen state has the wrong component count".into()));
            }
        }
        Ok(LinearCoeffs {
            n: spec.n,
            m: spec.m,
            speeds: spec.speed_bound().to_vec(),
            coupling: spec.coupling_bound().to_vec(),
            source: spec.source_bound().to_vec(),
            reflection: spec.p.clone(),
            frozen,
            perturbation: None,
            period: spec.period,
            min_speed: 0.5 * spec.lambda0_declared,
        })
    }

    /// `a(x,t) = A(x,t,0)`, `b(x,t) = B(x,t,0)`.
    pub fn linearized(spec: &ProblemSpec) -> Result<Self> {
        Self::from_spec(spec, None)
    }

    /// `a(x,t) = A(x,t,u(x,t))`, `b(x,t) = B(x,t,u(x,t))` with `u` interpolated
    /// bilinearly from `state`.
    pub fn frozen(spec: &ProblemSpec, state: Arc<SpaceTimeField>) -> Result<Self> {
        Self::from_spec(spec, Some(state))
    }

    /// Adds `eps * speed_terms` to `a` and `eps * coupling_terms` to `b`.
    /// Perturbations may only depend on `x` and `t`.
    pub fn with_perturbation(
        mut self,
        eps: f64,
        speed_terms: &[Expr],
        coupling_terms: &[Vec<Expr>],
    ) -> Result<Self> {
        let n = self.n;
        if speed_terms.len() != n || coupling_terms.len() != n || coupling_terms.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidProblem(format!("perturbation must be n = {n} speeds and an n x n coupling")));
        }
        let symbols = state_symbols(n);
        let syms: Vec<&str> = symbols.iter().map(String::as_str).collect();
        let bind = |e: &Expr| -> Result<BoundExpr> {
            if e.free_vars().iter().any(|v| v != "x" && v != "t") {
                return Err(Error::InvalidProblem(format!("perturbation `{e}` may only use x and t")));
            }
            Ok(e.bind(&syms)?)
        };
        let speeds = speed_terms.iter().map(bind).collect::<Result<Vec<_>>>()?;
        let coupling = coupling_terms
            .iter()
            .map(|row| row.iter().map(bind).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        self.perturbation = Some(Perturbation { eps, speeds, coupling });
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn reflection(&self) -> &[Vec<f64>] {
        &self.reflection
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Speeds with magnitude below this are rejected while tracing.
    pub fn min_speed(&self) -> f64 {
        self.min_speed
    }

    pub fn set_min_speed(&mut self, v: f64) {
        self.min_speed = v;
    }

    /// Sign of family `j`'s speed: positive for `j < m` (0-based).
    pub fn is_rightward(&self, j: usize) -> bool {
        j < self.m
    }

    pub fn frozen_state(&self) -> Option<&SpaceTimeField> {
        self.frozen.as_deref()
    }

    #[inline]
    fn fill_vars(&self, x: f64, t: f64, vars: &mut [f64; MAX_COMPONENTS + 2]) {
        vars[0] = x;
        vars[1] = t;
        match &self.frozen {
            Some(field) => field.state_at(x, t, &mut vars[2..2 + self.n]),
            None => vars[2..2 + self.n].iter_mut().for_each(|v| *v = 0.0),
        }
    }

    #[inline]
    fn eval(e: &BoundExpr, vars: &[f64], x: f64, t: f64) -> Result<f64> {
        e.eval(vars).map_err(|source| Error::EvalAt { x, t, source })
    }

    /// Speed `a_j(x, t)`.
    pub fn speed(&self, j: usize, x: f64, t: f64) -> Result<f64> {
        let mut vars = [0.0; MAX_COMPONENTS + 2];
        self.fill_vars(x, t, &mut vars);
        let mut a = Self::eval(&self.speeds[j], &vars, x, t)?;
        if let Some(p) = &self.perturbation {
            a += p.eps * Self::eval(&p.speeds[j], &vars, x, t)?;
        }
        Ok(a)
    }

    /// Diagonal coupling `b_jj(x, t)`.
    pub fn diagonal_coupling(&self, j: usize, x: f64, t: f64) -> Result<f64> {
        let mut vars = [0.0; MAX_COMPONENTS + 2];
        self.fill_vars(x, t, &mut vars);
        let mut b = Self::eval(&self.coupling[j][j], &vars, x, t)?;
        if let Some(p) = &self.perturbation {
            b += p.eps * Self::eval(&p.coupling[j][j], &vars, x, t)?;
        }
        Ok(b)
    }

    /// Every coefficient at `(x, t)`.
    pub fn local(&self, x: f64, t: f64, out: &mut LocalCoeffs) -> Result<()> {
        let n = self.n;
        let mut vars = [0.0; MAX_COMPONENTS + 2];
        self.fill_vars(x, t, &mut vars);
        for j in 0..n {
            out.a[j] = Self::eval(&self.speeds[j], &vars, x, t)?;
            out.f[j] = Self::eval(&self.source[j], &vars, x, t)?;
            for k in 0..n {
                out.b[j * n + k] = Self::eval(&self.coupling[j][k], &vars, x, t)?;
            }
        }
        if let Some(p) = &self.perturbation {
            for j in 0..n {
                out.a[j] += p.eps * Self::eval(&p.speeds[j], &vars, x, t)?;
                for k in 0..n {
                    out.b[j * n + k] += p.eps * Self::eval(&p.coupling[j][k], &vars, x, t)?;
                }
            }
        }
        Ok(())
    }

    /// Largest `|a_j|` over grid nodes and `samples` times in `[t0, t1]`.
    pub fn max_speed(&self, nx: usize, t0: f64, t1: f64, samples: usize) -> Result<f64> {
        let mut top = 0.0f64;
        let samples = samples.max(2);
        for k in 0..samples {
            let t = t0 + (t1 - t0) * k as f64 / (samples - 1) as f64;
            for i in 0..=nx {
                let x = i as f64 / nx as f64;
                for j in 0..self.n {
                    top = top.max(self.speed(j, x, t)?.abs());
                }
            }
        }
        Ok(top)
    }

    /// Samples every coefficient at `(x, t)` and `(x, t + period)` and reports
    /// the largest mismatch relative to the coefficient scale.
    pub fn periodicity_defect(&self, t0: f64, period: f64) -> Result<f64> {
        let n = self.n;
        let (mut c0, mut c1) = (LocalCoeffs::new(n), LocalCoeffs::new(n));
        let mut worst = 0.0f64;
        for ix in 0..=8 {
            for it in 0..8 {
                let x = ix as f64 / 8.0;
                let t = t0 + period * (it as f64 + 0.37) / 8.0;
                self.local(x, t, &mut c0)?;
                self.local(x, t + period, &mut c1)?;
                let pairs = c0.a.iter().zip(&c1.a).chain(c0.b.iter().zip(&c1.b)).chain(c0.f.iter().zip(&c1.f));
                for (u, v) in pairs {
                    worst = worst.max((u - v).abs() / (1.0 + u.abs()));
                }
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridFunction;
    use crate::problem::ProblemConfig;

    fn spec(a: [&str; 2], b: [[&str; 2]; 2], f: [&str; 2]) -> ProblemSpec {
        let cfg = ProblemConfig {
            n: 2,
            m: 1,
            a: a.iter().map(|s| s.to_string()).collect(),
            b: Some(b.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect()),
            f: Some(f.iter().map(|s| s.to_string()).collect()),
            p: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            period: 1.0,
            delta0: 1.0,
            lambda0_declared: 1.0,
        };
        ProblemSpec::from_config(&cfg).unwrap()
    }

    #[test]
    fn linearization_binds_state_to_zero() {
        let s = spec(["1 + u1", "-1 + 0.5*u2"], [["u2", "1"], ["0", "x*u1"]], ["sin(t)", "0"]);
        let c = LinearCoeffs::linearized(&s).unwrap();
        let mut loc = LocalCoeffs::new(2);
        c.local(0.3, 0.2, &mut loc).unwrap();
        assert_eq!(loc.a, vec![1.0, -1.0]);
        assert_eq!(loc.b, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(loc.f[0], 0.2f64.sin());
    }

    #[test]
    fn freezing_constant_state() {
        let s = spec(["1 + u1", "-1"], [["0", "0"], ["0", "0"]], ["0", "0"]);
        let field = SpaceTimeField::new(
            (0..3).map(|k| GridFunction::from_fn(2, 4, 0.5 * k as f64, |_, _| 0.5)).collect(),
            true,
        )
        .unwrap();
        let c = LinearCoeffs::frozen(&s, Arc::new(field)).unwrap();
        for (x, t) in [(0.0, 0.0), (0.37, 0.81), (1.0, 3.3)] {
            assert!((c.speed(0, x, t).unwrap() - 1.5).abs() < 1e-15);
            assert_eq!(c.speed(1, x, t).unwrap(), -1.0);
        }
    }

    #[test]
    fn state_independent_speeds_ignore_frozen_field() {
        let s = spec(["2 + sin(t)", "-1"], [["0", "0"], ["0", "0"]], ["0", "0"]);
        let field = SpaceTimeField::zeros(2, 4, 0.0, 0.5, 2, true);
        let lin = LinearCoeffs::linearized(&s).unwrap();
        let fro = LinearCoeffs::frozen(&s, Arc::new(field)).unwrap();
        assert_eq!(lin.speed(0, 0.4, 0.7).unwrap(), fro.speed(0, 0.4, 0.7).unwrap());
    }

    #[test]
    fn perturbation_scales() {
        let s = spec(["1", "-1"], [["0", "0"], ["0", "0"]], ["0", "0"]);
        let at = vec![Expr::parse("0.1*sin(t)").unwrap(), Expr::parse("0").unwrap()];
        let bt = vec![vec![Expr::parse("1").unwrap(), Expr::parse("0").unwrap()]; 2];
        let c = LinearCoeffs::linearized(&s).unwrap().with_perturbation(2.0, &at, &bt).unwrap();
        assert!((c.speed(0, 0.0, 1.0).unwrap() - (1.0 + 0.2 * 1f64.sin())).abs() < 1e-15);
        assert_eq!(c.diagonal_coupling(0, 0.0, 0.0).unwrap(), 2.0);
        let bad = vec![Expr::parse("u1").unwrap(), Expr::parse("0").unwrap()];
        assert!(LinearCoeffs::linearized(&s).unwrap().with_perturbation(1.0, &bad, &bt).is_err());
    }

    #[test]
    fn periodicity_defect_detects_aperiodic_coefficients() {
        let periodic = spec(["1 + 0.1*sin(2*pi*t)", "-1"], [["0", "0"], ["0", "0"]], ["cos(2*pi*t)", "0"]);
        let c = LinearCoeffs::linearized(&periodic).unwrap();
        assert!(c.periodicity_defect(0.0, 1.0).unwrap() < 1e-12);
        let aperiodic = spec(["1 + 0.1*sin(t)", "-1"], [["0", "0"], ["0", "0"]], ["0", "0"]);
        let c = LinearCoeffs::linearized(&aperiodic).unwrap();
        assert!(c.periodicity_defect(0.0, 1.0).unwrap() > 1e-3);
    }
}
