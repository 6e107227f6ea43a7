//! Closed-form spectrum of the two-component reference system
//!
//! ```text
//! u1_t + u1_x = lambda u1 - u2,   u2_t - u2_x = 0,
//! u1(0,t) = 0,   u2(1,t) = u1(1,t),
//! ```
//!
//! whose generator has the eigenvalues `mu = (lambda - z) / 2` with
//! `z = xi + i eta` solving `e^z = 1 - z`, `eta > 0`. Eliminating `eta` leaves
//! the scalar equation `sin(eta(xi)) = -sqrt(1 - e^{-2 xi} (1 - xi)^2)`; every
//! root of `e^z = 1 - z` solves it, but so do points where `cos(eta)` has the
//! wrong sign, and those are discarded.

use serde::{Deserialize, Serialize};

use crate::dichotomy::{assemble_monodromy, Eigenvalue, GridOptions};
use crate::coeffs::LinearCoeffs;
use crate::error::{Error, Result};
use crate::problem::{ProblemConfig, ProblemSpec};

pub const DEFAULT_SCAN_STEP: f64 = 1e-3;

/// Roots are not searched beyond this `xi`.
pub const SCAN_HORIZON: f64 = 8.0;

const BISECTION_TOL: f64 = 1e-12;

/// `lambda` closer than this to a root is treated as lying on it.
const ROOT_CLEARANCE: f64 = 1e-10;

/// Relative tolerance for `|e^z - (1 - z)| / |1 - z|` at an accepted root.
const COMPLEX_RESIDUAL_TOL: f64 = 1e-6;

fn eta(xi: f64) -> f64 {
    ((2.0 * xi).exp() - (1.0 - xi).powi(2)).max(0.0).sqrt()
}

/// `sin(sqrt(e^{2 xi} - (1 - xi)^2)) + sqrt(1 - e^{-2 xi} (1 - xi)^2)`.
pub fn chareq_residual(xi: f64) -> Result<f64> {
    let r1 = (2.0 * xi).exp() - (1.0 - xi).powi(2);
    let r2 = 1.0 - (-2.0 * xi).exp() * (1.0 - xi).powi(2);
    // rounding near xi = 0 can produce tiny negative radicands
    if !(xi >= 0.0) || r1 < -1e-12 || r2 < -1e-12 {
        return Err(Error::Config(format!("xi = {xi} is outside the domain xi >= 0")));
    }
    Ok(r1.max(0.0).sqrt().sin() + r2.max(0.0).sqrt())
}

/// `|e^z - (1 - z)| / |1 - z|` for `z = xi + i eta(xi)`.
pub fn complex_residual(xi: f64) -> f64 {
    let e = eta(xi);
    let (re, im) = (xi.exp() * e.cos() - (1.0 - xi), xi.exp() * e.sin() + e);
    re.hypot(im) / (1.0 - xi).hypot(e)
}

/// Step that keeps `eta` from moving past a pair of nearby sign changes.
fn scan_increment(xi: f64, scan_step: f64) -> f64 {
    let e = eta(xi).max(1e-300);
    let slope = ((2.0 * xi).exp() + (1.0 - xi)) / e;
    let closeness = ((-xi).exp() * (1.0 - xi).abs()).clamp(1e-3, 1.0).asin();
    scan_step.min((0.25 * closeness / slope).max(1e-7))
}

/// First `count` positive roots, increasing.
pub fn find_xi_roots(count: usize, scan_step: f64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::Config("root count must be at least 1".into()));
    }
    if !(scan_step > 0.0) {
        return Err(Error::Config(format!("scan step {scan_step} must be positive")));
    }
    let mut roots = Vec::with_capacity(count);
    let mut lo = scan_step.min(1e-3);
    let mut f_lo = chareq_residual(lo)?;
    while lo < SCAN_HORIZON {
        let hi = (lo + scan_increment(lo, scan_step)).min(SCAN_HORIZON);
        let f_hi = chareq_residual(hi)?;
        if f_lo == 0.0 || f_lo.signum() != f_hi.signum() {
            let root = bisect(lo, hi, f_lo)?;
            if complex_residual(root) < COMPLEX_RESIDUAL_TOL {
                roots.push(root);
                if roots.len() == count {
                    return Ok(roots);
                }
            }
        }
        lo = hi;
        f_lo = f_hi;
    }
    Err(Error::RootsNotFound { found: roots.len(), wanted: count, horizon: SCAN_HORIZON })
}

fn bisect(mut a: f64, mut b: f64, mut fa: f64) -> Result<f64> {
    if fa == 0.0 {
        return Ok(a);
    }
    while b - a > BISECTION_TOL {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = chareq_residual(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// `mu^+ = re + i im`; `mu^-` is its conjugate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuPair {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralPrediction {
    pub xi_roots: Vec<f64>,
    pub lambda: f64,
    pub mu_pairs: Vec<MuPair>,
    /// Roots below `lambda`.
    pub unstable_pairs: usize,
    /// Real dimension of the unstable subspace: each pair contributes two.
    pub predicted_unstable_dim: usize,
    pub gap_margin: f64,
}

impl SpectralPrediction {
    /// `exp(mu T)` for both members of every pair, by decreasing modulus.
    pub fn floquet_multipliers(&self, period: f64) -> Vec<Eigenvalue> {
        let mut out = Vec::with_capacity(2 * self.mu_pairs.len());
        for mu in &self.mu_pairs {
            let modulus = (mu.re * period).exp();
            for sign in [1.0, -1.0] {
                let arg = sign * mu.im * period;
                out.push(Eigenvalue { re: modulus * arg.cos(), im: modulus * arg.sin(), modulus });
            }
        }
        out.sort_by(|a, b| b.modulus.total_cmp(&a.modulus).then(b.im.total_cmp(&a.im)));
        out
    }
}

pub fn eigenvalues_mu(lambda: f64, count: usize) -> Result<SpectralPrediction> {
    let xi_roots = find_xi_roots(count, DEFAULT_SCAN_STEP)?;
    prediction_from_roots(lambda, xi_roots)
}

pub fn prediction_from_roots(lambda: f64, xi_roots: Vec<f64>) -> Result<SpectralPrediction> {
    let gap_margin = xi_roots.iter().map(|x| (lambda - x).abs()).fold(f64::INFINITY, f64::min);
    if gap_margin < ROOT_CLEARANCE {
        return Err(Error::NoDichotomy(format!("lambda = {lambda} coincides with a root of the characteristic equation")));
    }
    let mu_pairs = xi_roots.iter().map(|&x| MuPair { re: 0.5 * (lambda - x), im: 0.5 * eta(x) }).collect();
    let unstable_pairs = xi_roots.iter().filter(|&&x| x < lambda).count();
    Ok(SpectralPrediction {
        xi_roots,
        lambda,
        mu_pairs,
        unstable_pairs,
        predicted_unstable_dim: 2 * unstable_pairs,
        gap_margin,
    })
}

fn config(n_a: [&str; 2], b: [[String; 2]; 2], f: Option<[String; 2]>, delta0: f64) -> ProblemConfig {
    ProblemConfig {
        n: 2,
        m: 1,
        a: n_a.iter().map(|s| s.to_string()).collect(),
        b: Some(b.iter().map(|r| r.to_vec()).collect()),
        f: f.map(|f| f.to_vec()),
        p: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
        period: 1.0,
        delta0,
        lambda0_declared: 0.5,
    }
}

/// The linear reference system at parameter `lambda`, period 1.
pub fn linear_config(lambda: f64) -> ProblemConfig {
    config(["1", "-1"], [[format!("{}", -lambda), "1".into()], ["0".into(), "0".into()]], None, 0.1)
}

pub fn linear_problem(lambda: f64) -> Result<ProblemSpec> {
    ProblemSpec::from_config(&linear_config(lambda))
}

/// A quasilinear system whose linearization at zero is the reference system,
/// driven by a 1-periodic source of amplitude `amplitude`.
pub fn quasilinear_config(lambda: f64, amplitude: f64) -> ProblemConfig {
    let b = [
        [format!("{} - 0.5*u2", -lambda), "1".into()],
        ["0.5*u1".into(), "0.5*u2".into()],
    ];
    let f = [
        format!("{amplitude}*(1 + sin(2*pi*t))*x*(1 - x)"),
        format!("{amplitude}*cos(2*pi*t)*(1 + x)"),
    ];
    config(["1 + 0.5*u1", "-1 + 0.5*u2"], b, Some(f), 0.2)
}

pub fn quasilinear_problem(lambda: f64, amplitude: f64) -> Result<ProblemSpec> {
    ProblemSpec::from_config(&quasilinear_config(lambda, amplitude))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Crosscheck {
    pub lambda: f64,
    pub period: f64,
    pub nx: usize,
    pub compared: usize,
    pub predicted: Vec<Eigenvalue>,
    pub computed: Vec<Eigenvalue>,
    /// `|computed - predicted| / |predicted|` per matched pair.
    pub relative_mismatch: Vec<f64>,
    pub max_relative_mismatch: f64,
    pub unstable_dim: usize,
    pub predicted_unstable_dim: usize,
    pub dichotomy: bool,
    pub alpha_hat: f64,
    pub gap_margin: f64,
}

/// Compares the `k` largest period-map eigenvalues of the reference system
/// with `exp(mu T)`; each prediction is paired with the nearest unused one of
/// the computed top `k`.
pub fn crosscheck_monodromy(
    lambda: f64,
    period: f64,
    k: usize,
    grid: &GridOptions,
    gap: f64,
) -> Result<Crosscheck> {
    let prediction = eigenvalues_mu(lambda, k.div_ceil(2).max(1) + 2)?;
    let mut spec_cfg = linear_config(lambda);
    spec_cfg.period = period;
    let coeffs = LinearCoeffs::linearized(&ProblemSpec::from_config(&spec_cfg)?)?;
    let dec = assemble_monodromy(&coeffs, 0.0, period, grid, gap)?;
    let predicted: Vec<Eigenvalue> = prediction.floquet_multipliers(period).into_iter().take(k).collect();
    let candidates: Vec<Eigenvalue> = dec.eigenvalues.iter().take(k).copied().collect();
    let mut used = vec![false; candidates.len()];
    let mut computed = Vec::with_capacity(k);
    let mut relative_mismatch = Vec::with_capacity(k);
    for p in &predicted {
        let best = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .min_by(|(_, a), (_, b)| {
                let da = (a.re - p.re).hypot(a.im - p.im);
                let db = (b.re - p.re).hypot(b.im - p.im);
                da.total_cmp(&db)
            })
            .map(|(i, _)| i);
        if let Some(i) = best {
            used[i] = true;
            let c = candidates[i];
            computed.push(c);
            relative_mismatch.push((c.re - p.re).hypot(c.im - p.im) / p.modulus);
        }
    }
    let max_relative_mismatch = relative_mismatch.iter().copied().fold(0.0, f64::max);
    Ok(Crosscheck {
        lambda,
        period,
        nx: grid.nx,
        compared: computed.len(),
        predicted,
        computed,
        relative_mismatch,
        max_relative_mismatch,
        unstable_dim: dec.unstable_dim,
        predicted_unstable_dim: prediction.predicted_unstable_dim,
        dichotomy: dec.dichotomy,
        alpha_hat: dec.alpha_hat,
        gap_margin: prediction.gap_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Newton's method on e^z + z - 1 = 0 in complex arithmetic, independent
    // of the scalar reduction.
    fn complex_root(mut re: f64, mut im: f64) -> (f64, f64) {
        for _ in 0..100 {
            let (er, ei) = (re.exp() * im.cos(), re.exp() * im.sin());
            let (fr, fi) = (er + re - 1.0, ei + im);
            let (dr, di) = (er + 1.0, ei);
            let den = dr * dr + di * di;
            re -= (fr * dr + fi * di) / den;
            im -= (fi * dr - fr * di) / den;
        }
        (re, im)
    }

    #[test]
    fn residual_at_zero_and_domain() {
        assert!(chareq_residual(0.0).unwrap().abs() < 1e-12);
        assert!(chareq_residual(-0.5).is_err());
        // second term tends to one
        let r = chareq_residual(20.0).unwrap();
        assert!((-2.0..=2.0).contains(&r));
    }

    #[test]
    fn first_roots_match_complex_newton() {
        let roots = find_xi_roots(5, DEFAULT_SCAN_STEP).unwrap();
        for w in roots.windows(2) {
            assert!(w[1] > w[0]);
        }
        for &xi in &roots {
            assert!(chareq_residual(xi).unwrap().abs() < 1e-10);
            let (re, im) = complex_root(xi, eta(xi));
            assert!((re - xi).abs() < 1e-10, "{xi} vs {re}");
            assert!((im - eta(xi)).abs() < 1e-8);
        }
        assert!((roots[0] - 1.5320921219863797).abs() < 1e-10);
        assert!((roots[1] - 2.3939822411584446).abs() < 1e-10);
    }

    #[test]
    fn spurious_solutions_of_the_scalar_equation_are_dropped() {
        // the scalar equation also vanishes between the first two true roots
        let mut a = 1.54;
        let mut fa = chareq_residual(a).unwrap();
        let mut spurious = None;
        while a < 2.39 {
            let b = a + 1e-4;
            let fb = chareq_residual(b).unwrap();
            if fa.signum() != fb.signum() {
                spurious = Some(bisect(a, b, fa).unwrap());
            }
            a = b;
            fa = fb;
        }
        let s = spurious.expect("a sign change between the first two roots");
        assert!(complex_residual(s) > 1e-3);
    }

    #[test]
    fn prediction_counts() {
        let roots = find_xi_roots(4, DEFAULT_SCAN_STEP).unwrap();
        let p = prediction_from_roots(0.0, roots.clone()).unwrap();
        assert_eq!(p.predicted_unstable_dim, 0);
        assert!(p.mu_pairs.iter().all(|m| m.re < 0.0 && m.im > 0.0));
        let mid = 0.5 * (roots[0] + roots[1]);
        let p = prediction_from_roots(mid, roots.clone()).unwrap();
        assert_eq!((p.unstable_pairs, p.predicted_unstable_dim), (1, 2));
        assert!((p.gap_margin - 0.5 * (roots[1] - roots[0])).abs() < 1e-15);
        assert!(matches!(prediction_from_roots(roots[2], roots.clone()), Err(Error::NoDichotomy(_))));
        let mut last = 0;
        for k in 0..200 {
            let lam = 4.0 * k as f64 / 200.0 + 0.0123;
            let d = prediction_from_roots(lam, roots.clone()).unwrap().unstable_pairs;
            assert!(d >= last && d <= last + 1);
            last = d;
        }
    }

    #[test]
    fn multipliers_straddle_the_circle_by_sign() {
        let roots = find_xi_roots(3, DEFAULT_SCAN_STEP).unwrap();
        let lam = 2.0;
        let p = prediction_from_roots(lam, roots.clone()).unwrap();
        let mult = p.floquet_multipliers(1.0);
        for (mu, xi) in p.mu_pairs.iter().zip(&roots) {
            assert!(((mu.re).exp() - ((lam - xi) / 2.0).exp()).abs() < 1e-15);
            assert_eq!((mu.re).exp() > 1.0, lam > *xi);
        }
        assert_eq!(mult.len(), 6);
        assert!(mult[0].im == -mult[1].im);
    }

    #[test]
    fn quasilinear_variant_linearizes_to_the_reference() {
        let q = LinearCoeffs::linearized(&quasilinear_problem(0.7, 0.01).unwrap()).unwrap();
        let l = LinearCoeffs::linearized(&linear_problem(0.7).unwrap()).unwrap();
        let (mut a, mut b) = (crate::coeffs::LocalCoeffs::new(2), crate::coeffs::LocalCoeffs::new(2));
        q.local(0.3, 0.4, &mut a).unwrap();
        l.local(0.3, 0.4, &mut b).unwrap();
        assert_eq!(a.a, b.a);
        assert_eq!(a.b, b.b);
    }
}
