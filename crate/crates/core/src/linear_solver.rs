//! Semi-Lagrangian solver for the linear problem on the grid `x_i = i/Nx`.
//!
//! Each step `t0 -> t1` traces every family back from every node. A foot that
//! stays inside the strip is interpolated (4-point Lagrange) from level `t0`;
//! a curve that leaves through its inflow boundary at `tau*` picks up the
//! reflected value `R_j(tau*)`, with the outflow traces interpolated linearly
//! in time between the two levels. The off-diagonal coupling and the source are
//! integrated along the segment by a one-pass predictor-corrector.
//!
//! Everything that depends on the coefficients only is computed once into a
//! [`StepPlan`]; a [`Propagator`] is a sequence of plans and can be applied to
//! many initial states, which is how monodromy columns are produced.

use rayon::prelude::*;

use crate::characteristics::{trace_characteristic, integrating_factor, ExitKind, TraceOptions};
use crate::coeffs::{LinearCoeffs, LocalCoeffs};
use crate::error::{Error, Result};
use crate::field::{GridFunction, SpaceTimeField};

/// Default fraction of the cell-crossing time used as time step.
pub const DEFAULT_CFL: f64 = 0.9;

/// Feet further than `CFL_LIMIT` cells from their node are rejected.
pub const CFL_LIMIT: f64 = 1.0;

/// Time samples used when estimating the largest speed over a window.
const SPEED_SAMPLES: usize = 65;

#[derive(Debug, Clone, Copy)]
enum Foot {
    /// Interpolate level `t0` with stencil `start..start + 4`.
    Interior { start: usize, weights: [f64; 4] },
    /// Boundary value at `t0 + w * dt` of the step.
    Exit { w: f64, boundary: usize },
}

#[derive(Debug, Clone, Copy)]
struct NodePlan {
    foot: Foot,
    /// Integrating factor along the segment.
    e: f64,
    /// Half the segment duration.
    half_len: f64,
}

/// Precomputed geometry and coefficients of one time step.
#[derive(Debug, Clone)]
pub struct StepPlan {
    t0: f64,
    t1: f64,
    n: usize,
    nx: usize,
    nodes: Vec<NodePlan>,
    interior: Vec<usize>,
    exits: Vec<usize>,
    /// Row `(j, i)` holds `b_jk`, `k = 0..n`, at the far end of the segment.
    b_far: Vec<f64>,
    b_near: Vec<f64>,
    f_far: Vec<f64>,
    f_near: Vec<f64>,
}

fn lagrange4(s: f64) -> [f64; 4] {
    [
        -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0,
        s * (s - 2.0) * (s - 3.0) / 2.0,
        -s * (s - 1.0) * (s - 3.0) / 2.0,
        s * (s - 1.0) * (s - 2.0) / 6.0,
    ]
}

/// Largest time step allowed by the CFL factor `cfl` on `[t0, t1]`.
pub fn stable_dt(coeffs: &LinearCoeffs, nx: usize, t0: f64, t1: f64, cfl: f64) -> Result<f64> {
    let top = coeffs.max_speed(nx, t0, t1.max(t0), SPEED_SAMPLES)?;
    if !(top > 0.0) {
        return Err(Error::InvalidProblem("all speeds vanish".into()));
    }
    Ok(cfl / (nx as f64 * top))
}

impl StepPlan {
    pub fn build(coeffs: &LinearCoeffs, nx: usize, t0: f64, t1: f64, opts: &TraceOptions) -> Result<Self> {
        if nx < 3 {
            return Err(Error::Config(format!("Nx = {nx} is too small, need at least 3")));
        }
        if !(t1 > t0) {
            return Err(Error::Config(format!("step from {t0} to {t1} is not forward")));
        }
        let n = coeffs.n();
        let np = nx + 1;
        let h = 1.0 / nx as f64;
        let dt = t1 - t0;
        let mut nodes = Vec::with_capacity(n * np);
        let (mut interior, mut exits) = (Vec::new(), Vec::new());
        let mut b_far = vec![0.0; n * np * n];
        let mut b_near = vec![0.0; n * np * n];
        let mut f_far = vec![0.0; n * np];
        let mut f_near = vec![0.0; n * np];
        let mut local = LocalCoeffs::new(n);
        for j in 0..n {
            for i in 0..np {
                let row = j * np + i;
                let x = i as f64 * h;
                let trace = trace_characteristic(coeffs, j, x, t1, t0, opts)?;
                let exit = trace.exit;
                let e = integrating_factor(coeffs, &trace)?;
                let foot = match exit.which {
                    ExitKind::Floor => {
                        let xi = exit.location;
                        if (xi - x).abs() > CFL_LIMIT * h * (1.0 + 1e-9) {
                            return Err(Error::Cfl { dt, limit: dt * CFL_LIMIT * h / (xi - x).abs() });
                        }
                        let cell = ((xi / h).floor() as usize).min(nx - 1);
                        let start = cell.saturating_sub(1).min(nx - 3);
                        interior.push(row);
                        Foot::Interior { start, weights: lagrange4(xi / h - start as f64) }
                    }
                    ExitKind::Boundary0 | ExitKind::Boundary1 => {
                        exits.push(row);
                        let boundary = if exit.which == ExitKind::Boundary0 { 0 } else { nx };
                        Foot::Exit { w: ((exit.time - t0) / dt).clamp(0.0, 1.0), boundary }
                    }
                };
                coeffs.local(exit.location, exit.time, &mut local)?;
                b_far[row * n..(row + 1) * n].copy_from_slice(&local.b[j * n..(j + 1) * n]);
                f_far[row] = local.f[j];
                coeffs.local(x, t1, &mut local)?;
                b_near[row * n..(row + 1) * n].copy_from_slice(&local.b[j * n..(j + 1) * n]);
                f_near[row] = local.f[j];
                nodes.push(NodePlan { foot, e, half_len: 0.5 * (t1 - exit.time) });
            }
        }
        // the reflection reads outflow traces at the new level, so those nodes
        // must not themselves depend on a boundary value
        for k in 0..n {
            let out = if coeffs.is_rightward(k) { nx } else { 0 };
            if matches!(nodes[k * np + out].foot, Foot::Exit { .. }) {
                return Err(Error::Cfl { dt, limit: h / coeffs.speed(k, out as f64 * h, t1)?.abs() });
            }
        }
        Ok(StepPlan { t0, t1, n, nx, nodes, interior, exits, b_far, b_near, f_far, f_near })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    /// Advances `u0` (level `t0`) to `u1` (level `t1`). `pred` is scratch of the
    /// same size; `reflection` is `p`, `rightward[k]` the sign of family `k`.
    fn apply(&self, u0: &[f64], u1: &mut [f64], pred: &mut [f64], reflection: &[Vec<f64>], rightward: &[bool], source: bool) {
        let n = self.n;
        let np = self.nx + 1;
        let out_node = |k: usize| if rightward[k] { k * np + self.nx } else { k * np };
        let interp = |u: &[f64], k: usize, start: usize, w: &[f64; 4]| {
            let c = &u[k * np + start..k * np + start + 4];
            w[0] * c[0] + w[1] * c[1] + w[2] * c[2] + w[3] * c[3]
        };
        // g = f - sum_{k != j} b_jk u_k with u_k supplied by `val`
        let coupling = |row: usize, j: usize, b: &[f64], f: f64, val: &dyn Fn(usize) -> f64| {
            let mut g = if source { f } else { 0.0 };
            for (k, bk) in b[row * n..(row + 1) * n].iter().enumerate() {
                if k != j && *bk != 0.0 {
                    g -= bk * val(k);
                }
            }
            g
        };
        let reflect = |j: usize, w: f64, new: &[f64]| {
            let mut r = 0.0;
            for (k, pk) in reflection[j].iter().enumerate() {
                if *pk != 0.0 {
                    let o = out_node(k);
                    r += pk * ((1.0 - w) * u0[o] + w * new[o]);
                }
            }
            r
        };

        for pass in 0..2 {
            for &row in &self.interior {
                let (j, i) = (row / np, row % np);
                let node = &self.nodes[row];
                let Foot::Interior { start, weights } = node.foot else { unreachable!() };
                let base = node.e * interp(u0, j, start, &weights);
                let g_far = coupling(row, j, &self.b_far, self.f_far[row], &|k| interp(u0, k, start, &weights));
                if pass == 0 {
                    pred[row] = base + 2.0 * node.half_len * node.e * g_far;
                } else {
                    let g_near = coupling(row, j, &self.b_near, self.f_near[row], &|k| pred[k * np + i]);
                    u1[row] = base + node.half_len * (node.e * g_far + g_near);
                }
            }
            for &row in &self.exits {
                let (j, i) = (row / np, row % np);
                let node = &self.nodes[row];
                let Foot::Exit { w, boundary } = node.foot else { unreachable!() };
                if pass == 0 {
                    let r = reflect(j, w, pred);
                    let g_far = coupling(row, j, &self.b_far, self.f_far[row], &|k| u0[k * np + boundary]);
                    pred[row] = node.e * r + 2.0 * node.half_len * node.e * g_far;
                } else {
                    let r = reflect(j, w, u1);
                    let g_far = coupling(row, j, &self.b_far, self.f_far[row], &|k| {
                        (1.0 - w) * u0[k * np + boundary] + w * pred[k * np + boundary]
                    });
                    let g_near = coupling(row, j, &self.b_near, self.f_near[row], &|k| pred[k * np + i]);
                    u1[row] = node.e * r + node.half_len * (node.e * g_far + g_near);
                }
            }
        }
    }
}

/// Number of equal steps of size at most `dt` covering `span`.
pub fn step_count(span: f64, dt: f64) -> usize {
    if span > 0.0 { (span / dt - 1e-9).ceil().max(1.0) as usize } else { 0 }
}

/// The discrete evolution over `[s, t]` with `N` uniform steps.
#[derive(Debug, Clone)]
pub struct Propagator {
    n: usize,
    nx: usize,
    s: f64,
    t: f64,
    reflection: Vec<Vec<f64>>,
    rightward: Vec<bool>,
    steps: Vec<StepPlan>,
}

impl Propagator {
    /// Plans `ceil((t - s) / dt)` equal steps covering `[s, t]`.
    pub fn new(coeffs: &LinearCoeffs, nx: usize, s: f64, t: f64, dt: f64, opts: &TraceOptions) -> Result<Self> {
        if !(t >= s) {
            return Err(Error::Config(format!("end time {t} precedes start {s}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step {dt} must be positive")));
        }
        let count = step_count(t - s, dt);
        let h = if count > 0 { (t - s) / count as f64 } else { 0.0 };
        let steps = (0..count)
            .into_par_iter()
            .map(|k| {
                let t0 = s + k as f64 * h;
                let t1 = if k + 1 == count { t } else { s + (k + 1) as f64 * h };
                StepPlan::build(coeffs, nx, t0, t1, opts)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = coeffs.n();
        Ok(Propagator {
            n,
            nx,
            s,
            t,
            reflection: coeffs.reflection().to_vec(),
            rightward: (0..n).map(|k| coeffs.is_rightward(k)).collect(),
            steps,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn start(&self) -> f64 {
        self.s
    }

    pub fn end(&self) -> f64 {
        self.t
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn dt(&self) -> f64 {
        if self.steps.is_empty() { 0.0 } else { (self.t - self.s) / self.steps.len() as f64 }
    }

    fn check(&self, phi: &GridFunction) -> Result<()> {
        if phi.n() != self.n || phi.nx() != self.nx {
            return Err(Error::Config(format!(
                "state has n = {}, Nx = {}; propagator expects n = {}, Nx = {}",
                phi.n(),
                phi.nx(),
                self.n,
                self.nx
            )));
        }
        Ok(())
    }

    /// Runs all steps on raw data, calling `visit` after each one.
    fn run(&self, phi: &[f64], source: bool, mut visit: impl FnMut(f64, &[f64])) -> Result<Vec<f64>> {
        let mut u = phi.to_vec();
        let mut next = vec![0.0; u.len()];
        let mut pred = vec![0.0; u.len()];
        for plan in &self.steps {
            plan.apply(&u, &mut next, &mut pred, &self.reflection, &self.rightward, source);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t: plan.t1 });
            }
            std::mem::swap(&mut u, &mut next);
            visit(plan.t1, &u);
        }
        Ok(u)
    }

    /// Final state; `source = false` gives the homogeneous family `U(t, s) phi`.
    pub fn apply(&self, phi: &GridFunction, source: bool) -> Result<GridFunction> {
        self.check(phi)?;
        let data = self.run(phi.data(), source, |_, _| {})?;
        GridFunction::from_data(self.n, self.nx, self.t, data)
    }

    /// Raw-vector variant of [`Propagator::apply`].
    pub fn apply_data(&self, phi: &[f64], source: bool) -> Result<Vec<f64>> {
        self.run(phi, source, |_, _| {})
    }

    /// All levels `s, s + dt, ..., t`.
    pub fn solve(&self, phi: &GridFunction, source: bool) -> Result<SpaceTimeField> {
        self.check(phi)?;
        let mut first = phi.clone();
        first.t = self.s;
        let mut levels = vec![first];
        self.run(phi.data(), source, |t, u| {
            levels.push(GridFunction::from_data(self.n, self.nx, t, u.to_vec()).expect("sizes match"));
        })?;
        SpaceTimeField::new(levels, false)
    }
}

/// Solution of the inhomogeneous problem on `[s, t_end]` with step about `dt`.
pub fn solve_ivp(
    coeffs: &LinearCoeffs,
    phi: &GridFunction,
    s: f64,
    t_end: f64,
    dt: f64,
    opts: &TraceOptions,
) -> Result<SpaceTimeField> {
    if !(t_end > s) {
        return Err(Error::Config(format!("t_end = {t_end} must exceed s = {s}")));
    }
    Propagator::new(coeffs, phi.nx(), s, t_end, dt, opts)?.solve(phi, true)
}

/// `U(t, s) phi`, the homogeneous evolution.
pub fn apply_evolution(
    coeffs: &LinearCoeffs,
    phi: &GridFunction,
    s: f64,
    t: f64,
    dt: f64,
    opts: &TraceOptions,
) -> Result<GridFunction> {
    if t == s {
        return Ok(phi.clone());
    }
    Propagator::new(coeffs, phi.nx(), s, t, dt, opts)?.apply(phi, false)
}

/// One step of size `dt` from `state.t`.
pub fn step(coeffs: &LinearCoeffs, state: &GridFunction, dt: f64, opts: &TraceOptions) -> Result<GridFunction> {
    let plan = StepPlan::build(coeffs, state.nx(), state.t, state.t + dt, opts)?;
    let n = coeffs.n();
    let mut next = vec![0.0; state.len()];
    let mut pred = vec![0.0; state.len()];
    let rightward: Vec<bool> = (0..n).map(|k| coeffs.is_rightward(k)).collect();
    plan.apply(state.data(), &mut next, &mut pred, coeffs.reflection(), &rightward, true);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { t: plan.t1 });
    }
    GridFunction::from_data(n, state.nx(), plan.t1, next)
}

/// Largest `|u_{i+1} - 2 u_i + u_{i-1}| / dx` over components and interior
/// nodes. Tends to zero on C^1 data, stays bounded across kinks and grows
/// like `Nx` across jumps.
pub fn jump_indicator(state: &GridFunction) -> f64 {
    let nx = state.nx();
    let mut top = 0.0f64;
    for j in 0..state.n() {
        let c = state.component(j);
        for i in 1..nx {
            top = top.max((c[i + 1] - 2.0 * c[i] + c[i - 1]).abs());
        }
    }
    top * nx as f64
}
