//! Command-line front end: run configuration, subcommand dispatch and report
//! files.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::characteristics::TraceOptions;
use crate::coeffs::LinearCoeffs;
use crate::dichotomy::{self, Eigenvalue, GridOptions, MonodromyDecomposition};
use crate::error::{Error, Result};
use crate::example21;
use crate::expr::{EvalEnv, Expr};
use crate::field::{GridFunction, SpaceTimeField};
use crate::linear_solver::{self, jump_indicator, CFL_LIMIT};
use crate::problem::{self, ProblemConfig, ProblemSpec, H3_ENUMERATION_MAX_N};
use crate::quasilinear::{self, IterationOptions, IterationStatus};

const MIN_NX: usize = 8;
const REPORT_DIGITS: usize = 12;

#[derive(Debug, Parser)]
#[command(name = "hypdich", version, about = "Hyperbolic systems with reflection boundary conditions: characteristics solver, period-map spectra and periodic solutions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check speed separation, the smoothing condition and the smoothing time.
    Check(CommonArgs),
    /// Solve the initial-boundary value problem of the linearization.
    Solve(CommonArgs),
    /// Assemble the period map and classify its spectrum.
    Monodromy(CommonArgs),
    /// Periodic solution of the linearized inhomogeneous problem.
    Periodic(CommonArgs),
    /// Fixed-point iteration for a small periodic solution.
    Quasilinear(QuasilinearArgs),
    /// Closed-form spectrum of the reference example and its numerical cross-check.
    Example21(CommonArgs),
    /// Persistence of the dichotomy under coefficient perturbations.
    Robustness(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Check(_) => "check",
            Command::Solve(_) => "solve",
            Command::Monodromy(_) => "monodromy",
            Command::Periodic(_) => "periodic",
            Command::Quasilinear(_) => "quasilinear",
            Command::Example21(_) => "example21",
            Command::Robustness(_) => "robustness",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Check(c)
            | Command::Solve(c)
            | Command::Monodromy(c)
            | Command::Periodic(c)
            | Command::Example21(c)
            | Command::Robustness(c) => c,
            Command::Quasilinear(q) => &q.common,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid intervals; overrides `nx` in the config.
    #[arg(long)]
    pub nx: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Do not require `check` to pass first.
    #[arg(long)]
    pub skip_check: bool,
}

#[derive(Debug, Clone, Args)]
pub struct QuasilinearArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Keep the first period map as a preconditioner instead of reassembling it.
    #[arg(long)]
    pub reuse_monodromy: bool,
}

/// Problem given inline or as a path relative to the run config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSource {
    Inline(ProblemConfig),
    Path(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative periodicity defect accepted from the periodic solve.
    pub solver: f64,
    /// Fixed-point iteration tolerance.
    pub iteration: f64,
    /// Width of the band around the unit circle treated as ambiguous.
    pub gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { solver: 1e-10, iteration: quasilinear::DEFAULT_TOL, gap: dichotomy::DEFAULT_GAP }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSection {
    /// Final time; defaults to `s + T`.
    pub t_end: Option<f64>,
    /// Initial data, one expression in `x` per component; zero when absent.
    pub phi: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuasilinearSection {
    pub max_iter: usize,
    pub reuse_monodromy: bool,
}

impl Default for QuasilinearSection {
    fn default() -> Self {
        QuasilinearSection { max_iter: quasilinear::DEFAULT_MAX_ITER, reuse_monodromy: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Example21Section {
    pub lambda: f64,
    /// Number of characteristic roots to report.
    pub count: usize,
    #[serde(rename = "T")]
    pub period: f64,
    /// Eigenvalues compared against the closed form; 0 skips the period map.
    #[serde(rename = "K")]
    pub k: usize,
}

impl Default for Example21Section {
    fn default() -> Self {
        Example21Section { lambda: 0.0, count: 5, period: 1.0, k: 4 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessSection {
    /// Speed perturbation, one expression in `x`, `t` per component; zero when absent.
    pub a_tilde: Option<Vec<String>>,
    /// Coupling perturbation, `n x n`; zero when absent.
    pub b_tilde: Option<Vec<Vec<String>>>,
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: Option<ProblemSource>,
    pub nx: usize,
    /// Fixed time step; when absent it comes from `cfl`.
    pub dt: Option<f64>,
    pub cfl: f64,
    /// Overrides the problem's period.
    #[serde(rename = "T")]
    pub period: Option<f64>,
    /// Initial time.
    pub s: f64,
    pub tolerances: Tolerances,
    pub out: Option<PathBuf>,
    /// RK4 substeps per unit length when tracing characteristics.
    pub substeps: usize,
    /// Samples per axis for the speed-separation check.
    pub h1_samples: usize,
    pub solve: SolveSection,
    pub quasilinear: QuasilinearSection,
    pub example21: Example21Section,
    pub robustness: RobustnessSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: None,
            nx: 201,
            dt: None,
            cfl: linear_solver::DEFAULT_CFL,
            period: None,
            s: 0.0,
            tolerances: Tolerances::default(),
            out: None,
            substeps: TraceOptions::default().substeps_per_unit,
            h1_samples: 9,
            solve: SolveSection::default(),
            quasilinear: QuasilinearSection::default(),
            example21: Example21Section::default(),
            robustness: RobustnessSection::default(),
        }
    }
}

impl RunConfig {
    /// Reads the config, inlines a referenced problem file and checks ranges.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let bad = |e: serde_json::Error| Error::Config(format!("{}: {e}", path.display()));
        let mut raw: Value = serde_json::from_str(&text).map_err(bad)?;
        // parsed separately so that a malformed inline problem reports the offending field
        let problem = raw.as_object_mut().and_then(|o| o.remove("problem"));
        let mut cfg: RunConfig = serde_json::from_value(raw).map_err(bad)?;
        cfg.problem = match problem {
            None | Some(Value::Null) => None,
            Some(Value::String(p)) => {
                let p = PathBuf::from(p);
                let full = match path.parent() {
                    Some(dir) if p.is_relative() => dir.join(&p),
                    _ => p,
                };
                let text = fs::read_to_string(&full)
                    .map_err(|e| Error::Config(format!("cannot read problem file {}: {e}", full.display())))?;
                let problem: ProblemConfig =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", full.display())))?;
                Some(ProblemSource::Inline(problem))
            }
            Some(v) => Some(ProblemSource::Inline(
                serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: problem: {e}", path.display())))?,
            )),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < MIN_NX {
            return Err(Error::Config(format!("nx = {} must be at least {MIN_NX}", self.nx)));
        }
        if !(self.cfl > 0.0 && self.cfl <= CFL_LIMIT) {
            return Err(Error::Config(format!("cfl = {} must lie in (0, {CFL_LIMIT}]", self.cfl)));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("dt = {dt} must be positive")));
            }
        }
        if let Some(t) = self.period {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("T = {t} must be positive")));
            }
        }
        let tol = &self.tolerances;
        for (name, v) in [("solver", tol.solver), ("iteration", tol.iteration), ("gap", tol.gap)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tolerance `{name}` = {v} must be positive")));
            }
        }
        if !self.s.is_finite() {
            return Err(Error::Config("s must be finite".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be positive".into()));
        }
        if self.h1_samples < 2 {
            return Err(Error::Config("h1_samples must be at least 2".into()));
        }
        Ok(())
    }

    fn problem_config(&self) -> Result<ProblemConfig> {
        match &self.problem {
            Some(ProblemSource::Inline(p)) => {
                let mut p = p.clone();
                if let Some(t) = self.period {
                    p.period = t;
                }
                Ok(p)
            }
            Some(ProblemSource::Path(p)) => Err(Error::Config(format!("problem file {} was not loaded", p.display()))),
            None => Err(Error::Config("this subcommand needs a `problem`".into())),
        }
    }

    fn trace(&self) -> TraceOptions {
        TraceOptions { substeps_per_unit: self.substeps, ..TraceOptions::default() }
    }

    fn grid(&self) -> GridOptions {
        GridOptions { nx: self.nx, cfl: self.cfl, dt: self.dt, trace: self.trace() }
    }
}

/// Outcome of a subcommand that finished without an error.
struct Outcome {
    result: Value,
    exit_code: i32,
}

impl Outcome {
    fn ok(result: Value) -> Self {
        Outcome { result, exit_code: 0 }
    }
}

/// Parses `args`, runs one subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    let common = cli.command.common().clone();
    if let Some(k) = common.threads {
        if k == 0 {
            eprintln!("error: --threads must be positive");
            return 3;
        }
        // fails only if a pool was already installed, which then stays in use
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let mut out_dir: Option<PathBuf> = common.out.clone();
    match execute(&cli.command, &mut out_dir) {
        Ok(code) => code,
        Err(e) => {
            let err = json!({
                "command": cli.command.name(),
                "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() },
            });
            eprintln!("error: {e}");
            if let Some(dir) = out_dir {
                if fs::create_dir_all(&dir).is_ok() {
                    let _ = write_json(&dir.join("error.json"), &err);
                }
            }
            e.exit_code()
        }
    }
}

fn execute(command: &Command, out_dir: &mut Option<PathBuf>) -> Result<i32> {
    let common = command.common();
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(nx) = common.nx {
        cfg.nx = nx;
    }
    if let Command::Quasilinear(q) = command {
        cfg.quasilinear.reuse_monodromy |= q.reuse_monodromy;
    }
    let dir = common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("hypdich-out"));
    cfg.out = Some(dir.clone());
    *out_dir = Some(dir.clone());
    cfg.validate()?;
    fs::create_dir_all(&dir)?;

    let name = command.name();
    let needs_problem = !matches!(command, Command::Example21(_));
    if needs_problem && !matches!(command, Command::Check(_)) && !common.skip_check {
        let check = cmd_check(&cfg)?;
        if check.exit_code != 0 {
            eprintln!("error: check failed; see {}", dir.join("check_report.json").display());
            write_report(&dir, "check", &cfg, check.result)?;
            return Ok(1);
        }
    }
    let outcome = match command {
        Command::Check(_) => cmd_check(&cfg)?,
        Command::Solve(_) => cmd_solve(&cfg, &dir)?,
        Command::Monodromy(_) => cmd_monodromy(&cfg, &dir)?,
        Command::Periodic(_) => cmd_periodic(&cfg, &dir)?,
        Command::Quasilinear(_) => cmd_quasilinear(&cfg, &dir)?,
        Command::Example21(_) => cmd_example21(&cfg, &dir)?,
        Command::Robustness(_) => cmd_robustness(&cfg)?,
    };
    let path = write_report(&dir, name, &cfg, outcome.result)?;
    eprintln!("{name}: report written to {}", path.display());
    Ok(outcome.exit_code)
}

fn write_report(dir: &Path, name: &str, cfg: &RunConfig, result: Value) -> Result<PathBuf> {
    let mut report = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(cfg)?,
        "result": result,
    });
    round_floats(&mut report, REPORT_DIGITS);
    let path = dir.join(format!("{name}_report.json"));
    write_json(&path, &report)?;
    Ok(path)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Rounds every non-integer number in `value` to `digits` significant digits.
pub fn round_floats(value: &mut Value, digits: usize) {
    match value {
        Value::Number(num) if num.is_f64() => {
            if let Some(v) = num.as_f64() {
                let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), v).parse().unwrap_or(v);
                if let Some(n) = serde_json::Number::from_f64(rounded) {
                    *num = n;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|v| round_floats(v, digits)),
        Value::Object(map) => map.values_mut().for_each(|v| round_floats(v, digits)),
        _ => {}
    }
}

fn write_field_csv(path: &Path, field: &SpaceTimeField) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    field.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_spectrum_csv(path: &Path, eig: &[Eigenvalue]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "re,im,modulus")?;
    for e in eig {
        writeln!(w, "{},{},{}", e.re, e.im, e.modulus)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_check(cfg: &RunConfig) -> Result<Outcome> {
    let spec = ProblemSpec::from_config(&cfg.problem_config()?)?;
    let h1 = problem::validate_h1(&spec, cfg.h1_samples)?;
    let combinatorial = if spec.n <= H3_ENUMERATION_MAX_N { Some(problem::check_h3_combinatorial(&spec.p)?) } else { None };
    let trace = problem::check_h3_trace(&spec.p)?;
    let h3 = combinatorial.unwrap_or(true) && trace;
    let smoothing = if h1.passed() { Some(problem::smoothing_time_d(&spec, &cfg.trace())?) } else { None };
    let passed = h1.passed() && h3 && smoothing.is_some();
    Ok(Outcome {
        result: json!({
            "passed": passed,
            "h1": { "passed": h1.passed(), "report": h1 },
            "h3": {
                "passed": h3,
                "combinatorial": combinatorial,
                "trace": trace,
                "agree": combinatorial.map(|c| c == trace),
            },
            "smoothing_time": smoothing,
        }),
        exit_code: if passed { 0 } else { 1 },
    })
}

fn linearized(cfg: &RunConfig) -> Result<(ProblemSpec, LinearCoeffs)> {
    let spec = ProblemSpec::from_config(&cfg.problem_config()?)?;
    let coeffs = LinearCoeffs::linearized(&spec)?;
    Ok((spec, coeffs))
}

fn cmd_solve(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let (spec, coeffs) = linearized(cfg)?;
    let s = cfg.s;
    let t_end = cfg.solve.t_end.unwrap_or(s + spec.period);
    let phi_exprs = match &cfg.solve.phi {
        Some(list) if list.len() != spec.n => {
            return Err(Error::Config(format!("solve.phi needs {} expressions, got {}", spec.n, list.len())));
        }
        Some(list) => list.iter().map(|e| Expr::parse(e)).collect::<std::result::Result<Vec<_>, _>>()?,
        None => vec![Expr::constant(0.0); spec.n],
    };
    let mut env = EvalEnv::new().with("t", s);
    let mut phi = GridFunction::zeros(spec.n, cfg.nx, s);
    for (j, e) in phi_exprs.iter().enumerate() {
        for i in 0..=cfg.nx {
            let x = phi.x(i);
            env.set("x", x);
            let v = e.eval(&env).map_err(|source| Error::EvalAt { x, t: s, source })?;
            phi.set(j, i, v);
        }
    }
    let grid = cfg.grid();
    let dt = grid.dt_for(&coeffs, s, t_end)?;
    let field = linear_solver::solve_ivp(&coeffs, &phi, s, t_end, dt, &grid.trace)?;
    write_field_csv(&dir.join("solution.csv"), &field)?;
    let mut bin = BufWriter::new(fs::File::create(dir.join("solution.bin"))?);
    field.write_binary(&mut bin)?;
    bin.flush()?;
    let last = field.last();
    Ok(Outcome::ok(json!({
        "s": s,
        "t_end": t_end,
        "nx": cfg.nx,
        "dt": field.dt(),
        "steps": field.levels().len() - 1,
        "initial_l2": phi.l2_norm(),
        "final_l2": last.l2_norm(),
        "final_sup": last.sup_norm(),
        "final_jump_indicator": jump_indicator(last),
        "files": ["solution.csv", "solution.bin"],
    })))
}

fn monodromy_result(dec: &MonodromyDecomposition, listed: usize) -> Value {
    json!({
        "dichotomy": dec.dichotomy,
        "unstable_dim": dec.unstable_dim,
        "stable_count": dec.stable_count,
        "ambiguous": dec.ambiguous,
        "alpha_hat": dec.alpha_hat,
        "m_hat": dec.m_hat,
        "gap": dec.gap,
        "s": dec.s,
        "period": dec.period,
        "nx": dec.nx,
        "dt": dec.dt,
        "steps": dec.steps,
        "dimension": dec.eigenvalues.len(),
        "leading_eigenvalues": dec.eigenvalues.iter().take(listed).collect::<Vec<_>>(),
    })
}

fn cmd_monodromy(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let (spec, coeffs) = linearized(cfg)?;
    let dec = dichotomy::assemble_monodromy(&coeffs, cfg.s, spec.period, &cfg.grid(), cfg.tolerances.gap)?;
    write_spectrum_csv(&dir.join("spectrum.csv"), &dec.eigenvalues)?;
    let mut result = monodromy_result(&dec, 16);
    result["files"] = json!(["spectrum.csv"]);
    Ok(Outcome::ok(result))
}

fn cmd_periodic(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let (spec, coeffs) = linearized(cfg)?;
    let sol = dichotomy::solve_periodic_linear(&coeffs, cfg.s, spec.period, &cfg.grid(), cfg.tolerances.gap)?;
    write_field_csv(&dir.join("periodic_solution.csv"), &sol.field)?;
    let residual = if spec.is_linear() { Some(quasilinear::pde_residual(&spec, &sol.field)?) } else { None };
    let periodic = sol.relative_defect <= cfg.tolerances.solver;
    Ok(Outcome {
        result: json!({
            "periodic": periodic,
            "defect": sol.defect,
            "relative_defect": sol.relative_defect,
            "solution_sup": sol.field.sup_norm(),
            "pde_residual": residual,
            "nx": sol.field.nx(),
            "dt": sol.field.dt(),
            "files": ["periodic_solution.csv"],
        }),
        exit_code: if periodic { 0 } else { 2 },
    })
}

fn cmd_quasilinear(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let spec = ProblemSpec::from_config(&cfg.problem_config()?)?;
    let opts = IterationOptions {
        grid: cfg.grid(),
        s: cfg.s,
        tol: cfg.tolerances.iteration,
        max_iter: cfg.quasilinear.max_iter,
        gap: cfg.tolerances.gap,
        reuse_monodromy: cfg.quasilinear.reuse_monodromy,
    };
    let report = quasilinear::iterate(&spec, &opts)?;
    let mut files = Vec::new();
    if let Some(field) = &report.solution {
        write_field_csv(&dir.join("quasilinear_solution.csv"), field)?;
        files.push("quasilinear_solution.csv");
    }
    let exit_code = if report.status == IterationStatus::Converged { 0 } else { 2 };
    let mut result = serde_json::to_value(&report)?;
    result["files"] = json!(files);
    Ok(Outcome { result, exit_code })
}

fn cmd_example21(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let ex = &cfg.example21;
    if ex.count == 0 {
        return Err(Error::Config("example21.count must be positive".into()));
    }
    if !(ex.period > 0.0) {
        return Err(Error::Config("example21.T must be positive".into()));
    }
    let prediction = example21::eigenvalues_mu(ex.lambda, ex.count)?;
    let multipliers = prediction.floquet_multipliers(ex.period);
    let crosscheck = if ex.k > 0 {
        let c = example21::crosscheck_monodromy(ex.lambda, ex.period, ex.k, &cfg.grid(), cfg.tolerances.gap)?;
        write_spectrum_csv(&dir.join("example21_spectrum.csv"), &c.computed)?;
        Some(c)
    } else {
        None
    };
    let mut files = vec!["example21_multipliers.csv"];
    write_spectrum_csv(&dir.join("example21_multipliers.csv"), &multipliers)?;
    if crosscheck.is_some() {
        files.push("example21_spectrum.csv");
    }
    Ok(Outcome::ok(json!({
        "prediction": prediction,
        "multipliers": multipliers,
        "crosscheck": crosscheck,
        "files": files,
    })))
}

fn parse_all(list: &[String]) -> Result<Vec<Expr>> {
    Ok(list.iter().map(|e| Expr::parse(e)).collect::<std::result::Result<Vec<_>, _>>()?)
}

fn cmd_robustness(cfg: &RunConfig) -> Result<Outcome> {
    let (spec, coeffs) = linearized(cfg)?;
    let n = spec.n;
    let rob = &cfg.robustness;
    if rob.epsilons.is_empty() || rob.epsilons.iter().any(|e| !e.is_finite()) {
        return Err(Error::Config("robustness.epsilons must be a non-empty list of finite numbers".into()));
    }
    let a_tilde = match &rob.a_tilde {
        Some(list) => parse_all(list)?,
        None => vec![Expr::constant(0.0); n],
    };
    let b_tilde = match &rob.b_tilde {
        Some(rows) => rows.iter().map(|r| parse_all(r)).collect::<Result<Vec<_>>>()?,
        None => vec![vec![Expr::constant(0.0); n]; n],
    };
    let report = dichotomy::robustness_scan(
        &coeffs,
        &a_tilde,
        &b_tilde,
        &rob.epsilons,
        cfg.s,
        spec.period,
        &cfg.grid(),
        cfg.tolerances.gap,
    )?;
    Ok(Outcome::ok(serde_json::to_value(&report)?))
}
