//! Experiment configuration, the preset catalog, and result bundles.
//!
//! A config is a TOML file:
//!
//! ```toml
//! mode = "solve"
//! init = "random"
//! seed = 3
//!
//! [problem]
//! dim = 1
//! n = 200
//! alpha = 1.5
//! gamma = 2.0
//! drift = [0.0]
//! coupling = [{ c = 0.5, theta = 2.0 }]
//! potential = { family = "cosine-shift", amplitude = 0.5, shift = 0.25 }
//!
//! [solver]
//! tol_gradmap = 1e-9
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::grid::{GridFunction, TorusGrid};
use crate::model::{CouplingG, PotentialFamily, PowerTerm, ProblemSpec};
use crate::optimizer::{minimize, Init, SolveOptions, SolveResult};
use crate::oracle::{solve_critical, solve_p0, ContinuousReference};
use crate::second_order::{el_residual, solve_second_order, SecondOrderSpec};
use crate::transform::{pipeline_alpha_lt_1, DualSpec, HjbOptions, DEFAULT_BETA_SCHEDULE};
use crate::variational::DiscreteObjective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Solve,
    Oracle,
    Critical,
    Transform,
    SecondOrder,
    Convergence,
    Reproduce,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Oracle => "oracle",
            Mode::Critical => "critical",
            Mode::Transform => "transform",
            Mode::SecondOrder => "second-order",
            Mode::Convergence => "convergence",
            Mode::Reproduce => "reproduce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    #[default]
    Uniform,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Emit {
    Csv,
    Json,
    Plt,
}

pub const ALL_EMITS: [Emit; 3] = [Emit::Csv, Emit::Json, Emit::Plt];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// Closed-form density with `H̄` from a fine quadrature of the mass.
    #[default]
    Continuous,
    /// Closed-form density with `H̄` from the mass on the same grid.
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dim: usize,
    pub n: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// `P`; required except in the transform and second-order modes.
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
    /// `Q` for the transform mode.
    #[serde(default)]
    pub q: Option<[f64; 2]>,
    pub potential: PotentialFamily,
    pub coupling: CouplingG,
}

impl ProblemConfig {
    fn spec_with_drift(&self, drift: Vec<f64>) -> Result<ProblemSpec> {
        ProblemSpec::from_family(TorusGrid::new(self.dim, self.n)?, self.alpha, self.gamma, drift, &self.potential, self.coupling.clone())
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        let drift = self.drift.clone().ok_or_else(|| config_err("missing field `problem.drift`"))?;
        self.spec_with_drift(drift)
    }

    fn zero_drift_spec(&self) -> Result<ProblemSpec> {
        match &self.drift {
            Some(d) if d.iter().any(|p| *p != 0.0) => Err(config_err("this mode needs `problem.drift` = 0")),
            _ => self.spec_with_drift(vec![0.0; self.dim]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformConfig {
    pub betas: Vec<f64>,
    pub hjb: HjbOptions,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self { betas: DEFAULT_BETA_SCHEDULE.to_vec(), hjb: HjbOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub ns: Vec<usize>,
    #[serde(default)]
    pub reference: Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Preset supplying `problem` (and, for `reproduce`, everything else).
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Grid size override, applied to `problem.n` or to every preset run.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default)]
    pub emit: Option<Vec<Emit>>,
    #[serde(default)]
    pub problem: Option<ProblemConfig>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub transform: TransformConfig,
    #[serde(default)]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default)]
    pub hbar_bracket: Option<(f64, f64)>,
}

fn config_err(msg: impl Into<String>) -> MfgError {
    MfgError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn new(mode: Mode, problem: ProblemConfig) -> Self {
        Self {
            mode,
            preset: None,
            out: None,
            seed: None,
            n: None,
            init: InitKind::Uniform,
            emit: None,
            problem: Some(problem),
            solver: SolveOptions::default(),
            transform: TransformConfig::default(),
            convergence: None,
            hbar_bracket: None,
        }
    }

    /// Parses TOML; errors carry the line and the offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            MfgError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// Fills `problem` from the preset when absent and checks that the
    /// fields the mode needs are present.
    pub fn resolve(mut self) -> Result<Self> {
        if self.problem.is_none() && self.mode != Mode::Reproduce {
            if let Some(name) = &self.preset {
                let p = preset(name)?;
                match p.runs.as_slice() {
                    [(_, single)] => self.problem = single.problem.clone(),
                    _ => return Err(config_err(format!("preset `{name}` is a sweep; use mode = \"reproduce\""))),
                }
                if self.mode == Mode::Convergence && self.convergence.is_none() {
                    self.convergence = p.runs[0].1.convergence.clone();
                }
            }
        }
        if let Some(n) = self.n {
            if n == 0 {
                return Err(config_err("`n` must be positive"));
            }
        }
        if self.mode == Mode::Reproduce {
            if self.preset.is_none() {
                return Err(config_err("missing field `preset` (required by mode = \"reproduce\")"));
            }
            return Ok(self);
        }
        if self.problem.is_none() {
            return Err(config_err("missing section `[problem]`"));
        }
        if let Some(n) = self.n.take() {
            self.with_n(n);
        }
        let problem = self.problem.as_ref().expect("checked above");
        match self.mode {
            Mode::Solve | Mode::Critical => {
                if problem.drift.is_none() {
                    return Err(config_err("missing field `problem.drift`"));
                }
            }
            Mode::Transform => {
                if problem.q.is_none() {
                    return Err(config_err("missing field `problem.q` (required by mode = \"transform\")"));
                }
            }
            Mode::Convergence => {
                let c = self.convergence.as_ref().ok_or_else(|| config_err("missing section `[convergence]`"))?;
                if c.ns.is_empty() || c.ns.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(config_err("`convergence.ns` must be non-empty and strictly increasing"));
                }
            }
            _ => {}
        }
        self.solver.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(self)
    }

    fn init(&self) -> Init {
        match self.init {
            InitKind::Uniform => Init::Uniform,
            InitKind::Random => Init::Random(self.seed.unwrap_or(self.solver.seed)),
        }
    }

    fn with_n(&mut self, n: usize) {
        if let Some(p) = self.problem.as_mut() {
            p.n = n;
        }
        if let Some(c) = self.convergence.as_mut() {
            c.ns = vec![n];
        }
    }
}

/// One named reference experiment: a single run or a labelled sweep.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub runs: Vec<(String, ExperimentConfig)>,
}

fn quadratic() -> CouplingG {
    CouplingG::quadratic()
}

fn power(c: f64, theta: f64) -> CouplingG {
    CouplingG::power(c, theta).expect("valid preset coupling")
}

fn problem(dim: usize, n: usize, alpha: f64, gamma: f64, drift: &[f64], potential: PotentialFamily, coupling: CouplingG) -> ProblemConfig {
    ProblemConfig { dim, n, alpha, gamma, drift: Some(drift.to_vec()), q: None, potential, coupling }
}

fn cosine(amplitude: f64) -> PotentialFamily {
    PotentialFamily::CosineShift { amplitude, shift: 0.25 }
}

fn sin_cos(amplitude: f64) -> PotentialFamily {
    PotentialFamily::SineCosineProduct { amplitude, x_shift: 0.25, y_shift: 0.25 }
}

fn single(mode: Mode, p: ProblemConfig) -> Vec<(String, ExperimentConfig)> {
    vec![(String::new(), ExperimentConfig::new(mode, p))]
}

fn convergence(p: ProblemConfig, ns: &[usize]) -> Vec<(String, ExperimentConfig)> {
    let mut c = ExperimentConfig::new(Mode::Convergence, p);
    c.convergence = Some(ConvergenceConfig { ns: ns.to_vec(), reference: Reference::Continuous });
    vec![(String::new(), c)]
}

pub const PRESET_NAMES: [&str; 14] = [
    "fig1",
    "fig2",
    "fig3",
    "table1",
    "smooth-convergence",
    "p-sweep",
    "alpha-sweep",
    "fig-2d-p0",
    "table2",
    "fig-2d-p13",
    "fig-2d-pm13",
    "transform-8-1",
    "second-order-9-1",
    "critical-1d",
];

pub fn preset(name: &str) -> Result<Preset> {
    let (description, runs) = match name {
        "fig1" => ("1D, P = 0, V = ½cos: smooth closed-form solution", single(Mode::Solve, problem(1, 200, 1.5, 2.0, &[0.0], cosine(0.5), quadratic()))),
        "fig2" => ("1D, P = 0, V = cos: density touching zero", single(Mode::Solve, problem(1, 200, 1.5, 2.0, &[0.0], cosine(1.0), quadratic()))),
        "fig3" => ("1D, P = 0, V = 10cos: empty region", single(Mode::Solve, problem(1, 200, 1.5, 2.0, &[0.0], cosine(10.0), quadratic()))),
        "table1" => ("1D error table against the closed form, V = 10cos", convergence(problem(1, 100, 1.5, 2.0, &[0.0], cosine(10.0), quadratic()), &[100, 200, 400])),
        "smooth-convergence" => ("1D error table for V = ½cos", convergence(problem(1, 100, 1.5, 2.0, &[0.0], cosine(0.5), quadratic()), &[50, 100, 200])),
        "p-sweep" => {
            let bump = PotentialFamily::GaussianBump { amplitude: 1.0, center: 0.5, width: 1.0 };
            let runs = [0.0, 2.0, 4.0, 6.0, 8.0]
                .iter()
                .map(|&p| (format!("P={p}"), ExperimentConfig::new(Mode::Solve, problem(1, 200, 1.5, 2.0, &[p], bump.clone(), power(1.0, 2.0)))))
                .collect();
            ("1D drift sweep P ∈ {0, 2, 4, 6, 8}", runs)
        }
        "alpha-sweep" => {
            let v = PotentialFamily::SineCosineProduct { amplitude: 10.0, x_shift: 0.25, y_shift: 0.0 };
            let runs = [1.001, 1.2, 1.4, 2.0]
                .iter()
                .map(|&a| (format!("alpha={a}"), ExperimentConfig::new(Mode::Solve, problem(1, 200, a, 2.0, &[1.0], v.clone(), power(1.0, 3.0)))))
                .collect();
            ("1D congestion sweep α ∈ {1.001, 1.2, 1.4, 2}", runs)
        }
        "fig-2d-p0" => ("2D, P = 0, V = 10 sin·cos", single(Mode::Solve, problem(2, 50, 1.5, 2.0, &[0.0, 0.0], sin_cos(10.0), quadratic()))),
        "table2" => ("2D error table against the closed form, V = 10 sin·cos", convergence(problem(2, 20, 1.5, 2.0, &[0.0, 0.0], sin_cos(10.0), quadratic()), &[20, 40])),
        "fig-2d-p13" => ("2D, P = (1, 3), V = sin·cos, G = m³", single(Mode::Solve, problem(2, 50, 1.5, 2.0, &[1.0, 3.0], sin_cos(1.0), power(1.0, 3.0)))),
        "fig-2d-pm13" => {
            let v = PotentialFamily::ExpSinCos { amplitude: 1.0, x_shift: 0.25, y_shift: -0.25 };
            let g = CouplingG::new(vec![PowerTerm { c: 0.5, theta: 2.0 }, PowerTerm { c: 1.0, theta: 3.0 }]).expect("valid preset coupling");
            ("2D, P = (-1, 3), α = 2, γ = 2.5, G = m²/2 + m³", single(Mode::Solve, problem(2, 50, 2.0, 2.5, &[-1.0, 3.0], v, g)))
        }
        "transform-8-1" => {
            let mut p = problem(2, 50, 0.8, 2.0, &[0.0, 0.0], sin_cos(1.0), power(1.0, 3.0));
            p.drift = None;
            p.q = Some([3.0, -1.0]);
            ("α = 0.8 through the dual problem with Q = (3, -1)", single(Mode::Transform, p))
        }
        "second-order-9-1" => {
            let v = PotentialFamily::ExpSinCos { amplitude: 1.0, x_shift: 0.25, y_shift: -0.5 };
            ("second-order, α = 1.5, G = m³", single(Mode::SecondOrder, problem(2, 50, 1.5, 2.0, &[0.0, 0.0], v, power(1.0, 3.0))))
        }
        "critical-1d" => ("α = 1, P = 1, V = ½cos", single(Mode::Critical, problem(1, 200, 1.0, 2.0, &[1.0], cosine(0.5), quadratic()))),
        other => return Err(config_err(format!("unknown preset `{other}`; known: {}", PRESET_NAMES.join(", ")))),
    };
    let name = PRESET_NAMES.iter().find(|n| **n == name).expect("listed");
    let runs = runs
        .into_iter()
        .map(|(label, mut c)| {
            c.preset = Some(name.to_string());
            (label, c)
        })
        .collect();
    Ok(Preset { name, description, runs })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    pub runtime_seconds: f64,
    pub mass_error: f64,
    pub umean_error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub reference: Reference,
    /// Least-squares slope of `log(max error)` against `log h`; `None` with
    /// fewer than two rows or a zero error.
    pub order: Option<f64>,
}

impl ConvergenceReport {
    /// `n,max_abs_error,mean_abs_error` rows; timings are left out so the
    /// file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,max_abs_error,mean_abs_error\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.10e},{:.10e}", r.n, r.max_abs_error, r.mean_abs_error);
        }
        out
    }
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || ys.iter().any(|y| !(*y > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Solves on each `N` and compares the density with the closed-form `P = 0`
/// solution.
pub fn convergence_study(problem: &ProblemConfig, conv: &ConvergenceConfig, opts: &SolveOptions, init: &Init) -> Result<ConvergenceReport> {
    let continuous = match conv.reference {
        Reference::Continuous => Some(ContinuousReference::standard(&problem.potential, problem.dim, &problem.coupling)?),
        Reference::Discrete => None,
    };
    let mut rows = Vec::with_capacity(conv.ns.len());
    for &n in &conv.ns {
        let mut p = problem.clone();
        p.n = n;
        let spec = p.zero_drift_spec()?;
        let t = Instant::now();
        let sol = minimize(&DiscreteObjective::with_default_floor(spec.clone())?, init.clone(), opts)?;
        let runtime_seconds = t.elapsed().as_secs_f64();
        let reference = match &continuous {
            Some(c) => c.density_on(&p.potential, &p.coupling, spec.grid)?,
            None => solve_p0(&spec)?.m,
        };
        let diff: Vec<f64> = sol.m.values().iter().zip(reference.values()).map(|(a, b)| (a - b).abs()).collect();
        rows.push(ConvergenceRow {
            n,
            max_abs_error: diff.iter().cloned().fold(0.0, f64::max),
            mean_abs_error: diff.iter().sum::<f64>() / diff.len() as f64,
            runtime_seconds,
            mass_error: sol.mass_error(),
            umean_error: sol.umean_error(),
            converged: sol.converged,
        });
    }
    let hs: Vec<f64> = rows.iter().map(|r| 1.0 / r.n as f64).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.max_abs_error).collect();
    Ok(ConvergenceReport { order: loglog_slope(&hs, &errs), rows, reference: conv.reference })
}

/// In-memory result of one run: a JSON summary plus named fields.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: serde_json::Value,
    pub fields: Vec<(String, GridFunction)>,
    /// Extra CSV tables by file name.
    pub tables: Vec<(String, String)>,
    pub converged: bool,
}

fn solve_summary(r: &SolveResult) -> serde_json::Value {
    let mut s = r.summary_json();
    s["Hbar"] = serde_json::json!(r.hbar);
    s
}

fn header(cfg: &ExperimentConfig, problem: Option<&ProblemConfig>) -> serde_json::Value {
    serde_json::json!({
        "mode": cfg.mode,
        "preset": cfg.preset,
        "dim": problem.map(|p| p.dim),
        "n": problem.map(|p| p.n),
        "alpha": problem.map(|p| p.alpha),
        "gamma": problem.map(|p| p.gamma),
    })
}

fn merge(mut a: serde_json::Value, b: serde_json::Value) -> serde_json::Value {
    if let (Some(a), serde_json::Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
    a
}

/// Runs one resolved config. `reproduce` expands to every run of the preset.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<(String, RunReport)>> {
    let cfg = cfg.clone().resolve()?;
    if cfg.mode == Mode::Reproduce {
        let name = cfg.preset.as_deref().expect("checked by resolve");
        let p = preset(name)?;
        let mut out = Vec::new();
        for (label, mut sub) in p.runs {
            sub.n = cfg.n;
            sub.seed = cfg.seed.or(sub.seed);
            sub.init = cfg.init;
            sub.solver = cfg.solver.clone();
            out.extend(run(&sub)?.into_iter().map(|(l, r)| (join_label(&label, &l), r)));
        }
        return Ok(out);
    }
    let problem = cfg.problem.as_ref().expect("checked by resolve");
    let head = header(&cfg, Some(problem));
    let report = match cfg.mode {
        Mode::Solve => {
            let spec = problem.spec()?;
            spec.require_variational()?;
            let r = minimize(&DiscreteObjective::with_default_floor(spec)?, cfg.init(), &cfg.solver)?;
            let mut tables = Vec::new();
            if cfg.solver.record_trace {
                tables.push(("trace.csv".to_string(), crate::optimizer::trace_csv(&r.trace)));
            }
            RunReport {
                summary: merge(head, solve_summary(&r)),
                converged: r.converged,
                fields: vec![("u".into(), r.u), ("m".into(), r.m)],
                tables,
            }
        }
        Mode::Oracle => {
            let r = solve_p0(&problem.zero_drift_spec()?)?;
            RunReport { summary: merge(head, solve_summary(&r)), converged: r.converged, fields: vec![("u".into(), r.u), ("m".into(), r.m)], tables: vec![] }
        }
        Mode::Critical => {
            let spec = problem.spec()?;
            let r = solve_critical(&spec)?;
            let res = crate::oracle::critical_residual(&spec, &r.m, r.hbar);
            let mut s = merge(head, solve_summary(&r));
            s["algebraic_residual"] = serde_json::json!(res.max_abs());
            RunReport { summary: s, converged: r.converged, fields: vec![("u".into(), r.u), ("m".into(), r.m)], tables: vec![] }
        }
        Mode::Transform => {
            let q = problem.q.expect("checked by resolve");
            let dual = DualSpec::new(problem.spec_with_drift(vec![0.0, 0.0])?, q)?;
            let r = pipeline_alpha_lt_1(&dual, &cfg.transform.betas, &cfg.solver, &cfg.transform.hjb)?;
            let mut s = r.to_json();
            if let Some(o) = s.as_object_mut() {
                for k in ["psi", "m", "u"] {
                    o.remove(k);
                }
            }
            s["umean_error"] = serde_json::json!(crate::grid::integrate(&r.u).abs());
            s["converged"] = serde_json::json!(r.converged());
            RunReport {
                summary: merge(head, s),
                converged: r.converged(),
                tables: vec![("stages.csv".into(), r.stages_csv())],
                fields: vec![("psi".into(), r.psi), ("m".into(), r.m), ("u".into(), r.u)],
            }
        }
        Mode::SecondOrder => {
            let spec = SecondOrderSpec::new(problem.zero_drift_spec()?, cfg.hbar_bracket)?;
            let r = solve_second_order(&spec, &cfg.solver)?;
            let res = el_residual(&r.psi, &spec, r.hbar)?;
            let mut s = r.summary_json();
            s["umean_error"] = serde_json::json!(r.u.mean().abs());
            s["el_residual"] = serde_json::json!(res.max_abs());
            RunReport {
                summary: merge(head, s),
                converged: r.converged,
                tables: vec![("outer.csv".into(), r.outer_csv())],
                fields: vec![("psi".into(), r.psi), ("m".into(), r.m), ("u".into(), r.u), ("el_residual".into(), res)],
            }
        }
        Mode::Convergence => {
            let conv = cfg.convergence.as_ref().expect("checked by resolve");
            let r = convergence_study(problem, conv, &cfg.solver, &cfg.init())?;
            let converged = r.rows.iter().all(|row| row.converged);
            let worst = |f: fn(&ConvergenceRow) -> f64| r.rows.iter().map(f).fold(0.0, f64::max);
            let extra = serde_json::json!({
                "convergence": r,
                "converged": converged,
                "mass_error": worst(|row| row.mass_error),
                "umean_error": worst(|row| row.umean_error),
            });
            RunReport {
                summary: merge(head, extra),
                converged,
                tables: vec![("convergence.csv".into(), r.to_csv())],
                fields: vec![],
            }
        }
        Mode::Reproduce => unreachable!("handled above"),
    };
    Ok(vec![(String::new(), report)])
}

fn join_label(a: &str, b: &str) -> String {
    match (a.is_empty(), b.is_empty()) {
        (true, _) => b.to_string(),
        (_, true) => a.to_string(),
        _ => format!("{a}/{b}"),
    }
}

fn plt_script(name: &str, dim: usize) -> String {
    if dim == 1 {
        format!(
            "set terminal pngcairo size 800,600\nset output \"{name}.png\"\nset xlabel \"x\"\nplot \"{name}.dat\" using 1:2 with lines title \"{name}\"\n"
        )
    } else {
        format!(
            "set terminal pngcairo size 800,600\nset output \"{name}.png\"\nset xlabel \"x\"\nset ylabel \"y\"\nset pm3d\nsplot \"{name}.dat\" using 1:2:3 with pm3d title \"{name}\"\n"
        )
    }
}

/// Writes the bundle under `dir` (sweep runs in labelled subdirectories).
/// Returns the written paths.
pub fn write_reports(reports: &[(String, RunReport)], dir: &Path, emit: &[Emit]) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for (label, r) in reports {
        let d = if label.is_empty() { dir.to_path_buf() } else { dir.join(label) };
        std::fs::create_dir_all(&d)?;
        let mut put = |name: String, body: String| -> Result<()> {
            let p = d.join(name);
            std::fs::write(&p, body)?;
            written.push(p);
            Ok(())
        };
        if emit.contains(&Emit::Json) {
            put("summary.json".into(), serde_json::to_string_pretty(&r.summary)? + "\n")?;
        }
        if emit.contains(&Emit::Csv) {
            for (name, f) in &r.fields {
                put(format!("{name}.csv"), f.to_csv())?;
            }
            for (name, body) in &r.tables {
                put(name.clone(), body.clone())?;
            }
        }
        if emit.contains(&Emit::Plt) {
            for (name, f) in &r.fields {
                put(format!("{name}.dat"), f.to_dat())?;
                put(format!("{name}.plt"), plt_script(name, f.grid().dim()))?;
            }
        }
    }
    Ok(written)
}
