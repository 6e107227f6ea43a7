//! Problem description and the structural checks on it: speed separation
//! (sampled), the smoothing condition on the reflection matrix (exact), and the
//! smoothing time `d`.

use serde::{Deserialize, Serialize};

use crate::characteristics::{self, ExitKind, TraceOptions};
use crate::coeffs::LinearCoeffs;
use crate::error::{Error, Result};
use crate::expr::{BoundExpr, Expr};

/// Largest `n` accepted by the enumeration check (it visits up to n^(n+1) tuples).
pub const H3_ENUMERATION_MAX_N: usize = 8;

/// Absolute tolerance of the trace test.
pub const H3_TRACE_TOL: f64 = 1e-12;

const MAX_H1_SAMPLES: usize = 50_000_000;
const MAX_LISTED_VIOLATIONS: usize = 64;

fn default_delta0() -> f64 {
    0.1
}

/// Problem file contents. Coefficients are expression strings over
/// `x`, `t`, `u1..un` (`f` over `x`, `t` only).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<String>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<String>>,
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub period: f64,
    #[serde(default = "default_delta0")]
    pub delta0: f64,
    #[serde(rename = "lambda0")]
    pub lambda0_declared: f64,
}

/// A validated problem: sizes, parsed coefficient expressions and the
/// reflection matrix.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub n: usize,
    pub m: usize,
    pub a: Vec<Expr>,
    pub b: Vec<Vec<Expr>>,
    pub f: Vec<Expr>,
    pub p: Vec<Vec<f64>>,
    pub period: f64,
    pub delta0: f64,
    pub lambda0_declared: f64,
    symbols: Vec<String>,
    a_bound: Vec<BoundExpr>,
    b_bound: Vec<Vec<BoundExpr>>,
    f_bound: Vec<BoundExpr>,
}

fn parse_all(what: &str, sources: &[String]) -> Result<Vec<Expr>> {
    sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Expr::parse(s).map_err(|e| Error::InvalidProblem(format!("{what}[{i}] = {s:?}: {e}")))
        })
        .collect()
}

impl ProblemSpec {
    pub fn from_config(cfg: &ProblemConfig) -> Result<Self> {
        let n = cfg.n;
        let b_src = cfg
            .b
            .clone()
            .unwrap_or_else(|| vec![vec!["0".to_string(); n]; n]);
        let f_src = cfg.f.clone().unwrap_or_else(|| vec!["0".to_string(); n]);
        if b_src.len() != n || b_src.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidProblem(format!("B must be {n}x{n}")));
        }
        let a = parse_all("A", &cfg.a)?;
        let b = b_src
            .iter()
            .enumerate()
            .map(|(j, row)| parse_all(&format!("B[{j}]"), row))
            .collect::<Result<Vec<_>>>()?;
        let f = parse_all("f", &f_src)?;
        Self::new(n, cfg.m, a, b, f, cfg.p.clone(), cfg.period, cfg.delta0, cfg.lambda0_declared)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        m: usize,
        a: Vec<Expr>,
        b: Vec<Vec<Expr>>,
        f: Vec<Expr>,
        p: Vec<Vec<f64>>,
        period: f64,
        delta0: f64,
        lambda0_declared: f64,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidProblem(msg));
        if n == 0 {
            return bad("n must be positive".into());
        }
        if n > crate::coeffs::MAX_COMPONENTS {
            return bad(format!("n = {n} exceeds the supported maximum {}", crate::coeffs::MAX_COMPONENTS));
        }
        if m > n {
            return bad(format!("m = {m} exceeds n = {n}"));
        }
        if a.len() != n || f.len() != n {
            return bad(format!("A and f must have {n} entries"));
        }
        if b.len() != n || b.iter().any(|r| r.len() != n) {
            return bad(format!("B must be {n}x{n}"));
        }
        if p.len() != n || p.iter().any(|r| r.len() != n) {
            return bad(format!("p must be {n}x{n}"));
        }
        if p.iter().flatten().any(|v| !v.is_finite()) {
            return bad("p has non-finite entries".into());
        }
        if !(period.is_finite() && period > 0.0) {
            return bad(format!("period T = {period} must be positive"));
        }
        if !(delta0.is_finite() && delta0 > 0.0) {
            return bad(format!("delta0 = {delta0} must be positive"));
        }
        if !(lambda0_declared.is_finite() && lambda0_declared > 0.0) {
            return bad(format!("lambda0 = {lambda0_declared} must be positive"));
        }
        let symbols = state_symbols(n);
        let syms: Vec<&str> = symbols.iter().map(String::as_str).collect();
        let bind = |what: &str, e: &Expr, allowed: &[&str]| -> Result<BoundExpr> {
            let stray: Vec<_> =
                e.free_vars().into_iter().filter(|v| !allowed.contains(&v.as_str())).collect();
            if !stray.is_empty() {
                return Err(Error::InvalidProblem(format!("{what} uses undeclared variables {stray:?}")));
            }
            Ok(e.bind(&syms)?)
        };
        let a_bound = a
            .iter()
            .enumerate()
            .map(|(j, e)| bind(&format!("A[{j}]"), e, &syms))
            .collect::<Result<Vec<_>>>()?;
        let b_bound = b
            .iter()
            .enumerate()
            .map(|(j, row)| {
                row.iter()
                    .enumerate()
                    .map(|(k, e)| bind(&format!("B[{j}][{k}]"), e, &syms))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let f_bound = f
            .iter()
            .enumerate()
            .map(|(j, e)| bind(&format!("f[{j}]"), e, &["x", "t"]))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProblemSpec {
            n,
            m,
            a,
            b,
            f,
            p,
            period,
            delta0,
            lambda0_declared,
            symbols,
            a_bound,
            b_bound,
            f_bound,
        })
    }

    /// Variable names in slot order: `x`, `t`, `u1`, ..., `un`.
    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn speed_bound(&self) -> &[BoundExpr] {
        &self.a_bound
    }

    pub fn coupling_bound(&self) -> &[Vec<BoundExpr>] {
        &self.b_bound
    }

    pub fn source_bound(&self) -> &[BoundExpr] {
        &self.f_bound
    }

    /// True when no coefficient of `A` or `B` depends on the state.
    pub fn is_linear(&self) -> bool {
        let uses_state = |e: &Expr| e.free_vars().iter().any(|v| v.starts_with('u'));
        !self.a.iter().any(uses_state) && !self.b.iter().flatten().any(uses_state)
    }

    /// True when every source expression is the literal zero.
    pub fn has_zero_source(&self) -> bool {
        self.f.iter().all(Expr::is_zero_constant)
    }

    pub fn to_config(&self) -> ProblemConfig {
        let strings = |v: &[Expr]| v.iter().map(|e| e.to_string()).collect::<Vec<_>>();
        ProblemConfig {
            n: self.n,
            m: self.m,
            a: strings(&self.a),
            b: Some(self.b.iter().map(|r| strings(r)).collect()),
            f: Some(strings(&self.f)),
            p: self.p.clone(),
            period: self.period,
            delta0: self.delta0,
            lambda0_declared: self.lambda0_declared,
        }
    }

    /// Copy with the source replaced by `scale * f`.
    pub fn with_scaled_source(&self, scale: f64) -> Result<ProblemSpec> {
        let f = self
            .f
            .iter()
            .map(|e| {
                if e.is_zero_constant() {
                    e.clone()
                } else {
                    Expr::Binary(crate::expr::BinOp::Mul, Box::new(Expr::Const(scale)), Box::new(e.clone()))
                }
            })
            .collect();
        ProblemSpec::new(
            self.n,
            self.m,
            self.a.clone(),
            self.b.clone(),
            f,
            self.p.clone(),
            self.period,
            self.delta0,
            self.lambda0_declared,
        )
    }
}

pub fn state_symbols(n: usize) -> Vec<String> {
    let mut s = vec!["x".to_string(), "t".to_string()];
    s.extend((1..=n).map(|k| format!("u{k}")));
    s
}

/// First `count` points of the nested sequence 0, 1, 1/2, 1/4, 3/4, 1/8, ...
/// Any prefix is contained in every longer prefix, so refining a sample grid
/// never drops a point.
pub fn nested_unit_samples(count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    for v in [0.0, 1.0] {
        if out.len() < count {
            out.push(v);
        }
    }
    let mut level = 1u32;
    while out.len() < count {
        let denom = (1u64 << level) as f64;
        let mut k = 1u64;
        while k < (1u64 << level) && out.len() < count {
            out.push(k as f64 / denom);
            k += 2;
        }
        level += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedCondition {
    /// A_j >= Lambda0 for j <= m.
    PositiveSpeed,
    /// A_j <= -Lambda0 for j > m.
    NegativeSpeed,
    /// |A_j - A_k| >= Lambda0 for j != k.
    Separation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub x: f64,
    pub t: f64,
    pub v: Vec<f64>,
    pub condition: SpeedCondition,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperbolicityReport {
    pub samples_per_axis: usize,
    pub points: usize,
    pub lambda0_measured: f64,
    pub lambda0_declared: f64,
    /// Per-condition minima; `None` when the condition is vacuous (e.g. m = 0).
    pub min_positive_speed: Option<f64>,
    pub min_negative_speed: Option<f64>,
    pub min_separation: Option<f64>,
    /// Largest |A_j| seen over the samples.
    pub max_speed: f64,
    pub violation_count: usize,
    /// The first violations found (at most 64 are listed).
    pub violations: Vec<Violation>,
}

impl HyperbolicityReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0 && self.lambda0_measured > 0.0
    }
}

/// Sample the speed conditions on a tensor grid over `[0,1] x [0,T] x
/// {|v_k| <= delta0}`.
pub fn validate_h1(spec: &ProblemSpec, samples_per_axis: usize) -> Result<HyperbolicityReport> {
    if samples_per_axis < 2 {
        return Err(Error::Config("samples_per_axis must be at least 2".into()));
    }
    let n = spec.n;
    let s = samples_per_axis;
    let points = (0..n + 2).try_fold(1usize, |acc, _| acc.checked_mul(s));
    let points = match points {
        Some(p) if p <= MAX_H1_SAMPLES => p,
        _ => {
            return Err(Error::Config(format!(
                "{s}^{} speed samples exceed the limit of {MAX_H1_SAMPLES}",
                n + 2
            )))
        }
    };
    let unit = nested_unit_samples(s);
    let xs: Vec<f64> = unit.clone();
    let ts: Vec<f64> = unit.iter().map(|u| u * spec.period).collect();
    let vs: Vec<f64> = unit.iter().map(|u| spec.delta0 * (2.0 * u - 1.0)).collect();

    let mut min_pos = f64::INFINITY;
    let mut min_neg = f64::INFINITY;
    let mut min_sep = f64::INFINITY;
    let mut max_speed = 0.0f64;
    let mut violations = Vec::new();
    let mut violation_count = 0usize;
    let mut vars = vec![0.0; n + 2];
    let mut speeds = vec![0.0; n];
    let mut idx = vec![0usize; n];

    for &x in &xs {
        for &t in &ts {
            idx.iter_mut().for_each(|i| *i = 0);
            loop {
                vars[0] = x;
                vars[1] = t;
                for k in 0..n {
                    vars[2 + k] = vs[idx[k]];
                }
                for (j, e) in spec.speed_bound().iter().enumerate() {
                    speeds[j] = e.eval(&vars).map_err(|source| Error::EvalAt { x, t, source })?;
                }
                let mut record = |cond: SpeedCondition, margin: f64| {
                    if margin <= 0.0 {
                        violation_count += 1;
                        if violations.len() < MAX_LISTED_VIOLATIONS {
                            violations.push(Violation {
                                x,
                                t,
                                v: vars[2..].to_vec(),
                                condition: cond,
                                margin,
                            });
                        }
                    }
                };
                for j in 0..n {
                    max_speed = max_speed.max(speeds[j].abs());
                    if j < spec.m {
                        min_pos = min_pos.min(speeds[j]);
                        record(SpeedCondition::PositiveSpeed, speeds[j]);
                    } else {
                        min_neg = min_neg.min(-speeds[j]);
                        record(SpeedCondition::NegativeSpeed, -speeds[j]);
                    }
                    for k in j + 1..n {
                        let gap = (speeds[j] - speeds[k]).abs();
                        min_sep = min_sep.min(gap);
                        record(SpeedCondition::Separation, gap);
                    }
                }
                // odometer over the state samples
                let mut k = 0;
                while k < n {
                    idx[k] += 1;
                    if idx[k] < s {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == n {
                    break;
                }
            }
        }
    }
    let finite = |v: f64| v.is_finite().then_some(v);
    let lambda0_measured = min_pos.min(min_neg).min(min_sep);
    Ok(HyperbolicityReport {
        samples_per_axis: s,
        points,
        lambda0_measured,
        lambda0_declared: spec.lambda0_declared,
        min_positive_speed: finite(min_pos),
        min_negative_speed: finite(min_neg),
        min_separation: finite(min_sep),
        max_speed,
        violation_count,
        violations,
    })
}

fn check_square(p: &[Vec<f64>]) -> Result<usize> {
    let n = p.len();
    if p.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidProblem("reflection matrix must be square".into()));
    }
    Ok(n)
}

/// Enumeration form of the smoothing condition: every product
/// `p[i1][i2] * p[i2][i3] * ... * p[in][in+1]` over all (n+1)-tuples vanishes.
///
/// A product of reals is zero exactly when one of its factors is, so the
/// enumeration walks tuples factor by factor and abandons a prefix as soon as
/// it hits a zero entry.
pub fn check_h3_combinatorial(p: &[Vec<f64>]) -> Result<bool> {
    let n = check_square(p)?;
    if n > H3_ENUMERATION_MAX_N {
        return Err(Error::TooLarge { n, max: H3_ENUMERATION_MAX_N });
    }
    fn nonzero_walk(p: &[Vec<f64>], from: usize, remaining: usize) -> bool {
        if remaining == 0 {
            return true;
        }
        (0..p.len()).any(|next| p[from][next] != 0.0 && nonzero_walk(p, next, remaining - 1))
    }
    Ok(!(0..n).any(|start| nonzero_walk(p, start, n)))
}

/// Trace form: with `W = |p|` entrywise, `tr(W + W^2 + ... + W^n) == 0`.
pub fn check_h3_trace(p: &[Vec<f64>]) -> Result<bool> {
    let n = check_square(p)?;
    let w: Vec<Vec<f64>> = p.iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect();
    let mut power = w.clone();
    let mut total = 0.0;
    for k in 1..=n {
        if k > 1 {
            power = (0..n)
                .map(|i| (0..n).map(|j| (0..n).map(|l| power[i][l] * w[l][j]).sum()).collect())
                .collect();
        }
        total += (0..n).map(|i| power[i][i]).sum::<f64>();
    }
    Ok(total.abs() <= H3_TRACE_TOL)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothingTime {
    /// `n` times the longest strip crossing.
    pub d: f64,
    /// Longest crossing time of each family over the sampled start times.
    pub crossing_times: Vec<f64>,
}

/// Smoothing time of the linearization at `u = 0`: `n` times the longest time
/// any characteristic needs to cross `[0,1]`, maximised over start times
/// sampled in `[0, T]`.
pub fn smoothing_time_d(spec: &ProblemSpec, opts: &TraceOptions) -> Result<SmoothingTime> {
    let coeffs = LinearCoeffs::linearized(spec)?;
    let starts: Vec<f64> = nested_unit_samples(33).iter().map(|u| u * spec.period).collect();
    let mut crossing_times = Vec::with_capacity(spec.n);
    for j in 0..spec.n {
        // start on the outflow side, trace back to the inflow side
        let x_out = if j < spec.m { 1.0 } else { 0.0 };
        let mut longest = 0.0f64;
        for &t in &starts {
            let trace = characteristics::trace_characteristic(&coeffs, j, x_out, t, f64::NEG_INFINITY, opts)?;
            let exit = characteristics::exit_point(&trace);
            if exit.which == ExitKind::Floor {
                return Err(Error::Trace(format!("family {} did not reach a boundary", j + 1)));
            }
            longest = longest.max(t - exit.time);
        }
        crossing_times.push(longest);
    }
    let d = spec.n as f64 * crossing_times.iter().cloned().fold(0.0, f64::max);
    Ok(SmoothingTime { d, crossing_times })
}
