//! Projected-gradient minimization over the admissible set.
//!
//! Steps are scaled by a per-node diagonal curvature estimate and projected in
//! the matching weighted norm, then accepted by an Armijo test. The engine is
//! generic over [`Smooth`] so the dual and second-order problems reuse it.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MfgError, Result};
use crate::grid::{remove_stencil_kernel, remove_stencil_kernel_slice, GridFunction, TorusGrid};
use crate::variational::{
    apriori_diagnostics, estimate_hbar, project_simplex, AprioriDiagnostics, DiscreteObjective, FeasiblePoint,
    FluxHessian, Workspace, DEFAULT_MASS_CUTOFF,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub tol_gradmap: f64,
    /// Relative objective decrease over [`STALL_WINDOW`] iterations.
    pub tol_obj: f64,
    pub step0: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub seed: u64,
    pub mass_cutoff: f64,
    pub record_trace: bool,
}

pub const STALL_WINDOW: usize = 50;

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            tol_gradmap: 1e-9,
            tol_obj: 1e-13,
            step0: 1.0,
            armijo_c: 1e-4,
            backtrack: 0.5,
            seed: 0,
            mass_cutoff: DEFAULT_MASS_CUTOFF,
            record_trace: false,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_gradmap", self.tol_gradmap),
            ("tol_obj", self.tol_obj),
            ("step0", self.step0),
            ("mass_cutoff", self.mass_cutoff),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("armijo_c", self.armijo_c), ("backtrack", self.backtrack)] {
            if !(v > 0.0 && v < 1.0) {
                return invalid(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        Ok(())
    }
}

/// Starting point of [`minimize`].
#[derive(Debug, Clone)]
pub enum Init {
    Uniform,
    Random(u64),
    Point(FeasiblePoint),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub gradmap: f64,
    pub step: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("iter,objective,gradmap,step\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.16e},{:.6e},{:.6e}", r.iter, r.objective, r.gradmap, r.step);
    }
    out
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: GridFunction,
    pub m: GridFunction,
    pub hbar: f64,
    pub hbar_std: f64,
    pub objective: f64,
    pub iters: usize,
    pub converged: bool,
    pub gradmap: f64,
    pub diagnostics: AprioriDiagnostics,
    pub trace: Vec<TraceRow>,
}

impl SolveResult {
    pub fn mass_error(&self) -> f64 {
        (crate::grid::integrate(&self.m) - 1.0).abs()
    }

    pub fn umean_error(&self) -> f64 {
        crate::grid::integrate(&self.u).abs()
    }

    /// The record written to `summary.json`.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "Jh": self.objective,
            "Hbar_mean": self.hbar,
            "Hbar_std": self.hbar_std,
            "mass_error": self.mass_error(),
            "umean_error": self.umean_error(),
            "iters": self.iters,
            "converged": self.converged,
            "gradmap": self.gradmap,
            "apriori": self.diagnostics,
        })
    }
}

/// A smooth objective on a convex set with a cheap projection.
///
/// Values are averages over nodes and gradients are pointwise (the true
/// gradient divided by the cell volume), so directional derivatives are
/// `cell_volume * Σ g_i d_i`.
pub(crate) trait Smooth {
    fn len(&self) -> usize;
    fn cell_volume(&self) -> f64;
    fn value(&mut self, x: &[f64]) -> f64;
    fn value_grad(&mut self, x: &[f64], g: &mut [f64]) -> f64;
    /// Writes `M⁻¹ g` for a positive definite metric `M` built at `x`, and
    /// keeps `M` for the following [`Smooth::project`] calls.
    fn scaled_direction(&mut self, x: &[f64], g: &[f64], d: &mut [f64]);
    /// Projection onto the feasible set in the current metric.
    fn project(&self, y: &[f64], out: &mut [f64]);
    fn project_euclidean(&self, y: &[f64], out: &mut [f64]);
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iters: usize,
    pub converged: bool,
    pub gradmap: f64,
    pub trace: Vec<TraceRow>,
}

fn gradmap_norm<P: Smooth>(p: &P, x: &[f64], g: &[f64], buf: &mut [f64]) -> f64 {
    let y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    p.project_euclidean(&y, buf);
    x.iter().zip(buf.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

pub(crate) fn run<P: Smooth>(p: &mut P, mut x: Vec<f64>, opts: &SolveOptions) -> Result<Outcome> {
    opts.validate()?;
    let n = p.len();
    let cv = p.cell_volume();
    let mut g = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut buf = vec![0.0; n];

    let mut f = p.value_grad(&x, &mut g);
    if !f.is_finite() {
        return Err(MfgError::InvalidInit(format!("objective is {f} at the initial point")));
    }
    let mut history = vec![f];
    let mut trace = Vec::new();
    let mut t_next = opts.step0;
    let mut gm = gradmap_norm(p, &x, &g, &mut buf);
    let mut iters = 0;
    let mut converged = false;

    while iters < opts.max_iters {
        if gm <= opts.tol_gradmap {
            converged = true;
            break;
        }
        if history.len() > STALL_WINDOW {
            let old = history[history.len() - 1 - STALL_WINDOW];
            if (old - f) <= opts.tol_obj * f.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        p.scaled_direction(&x, &g, &mut d);
        let mut t = t_next;
        let slack = 4.0 * f64::EPSILON * f.abs();
        let (f_new, accepted) = loop {
            for i in 0..n {
                trial[i] = x[i] - t * d[i];
            }
            p.project(&trial, &mut x_new);
            let fv = p.value(&x_new);
            let slope: f64 = cv * g.iter().zip(x_new.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum::<f64>();
            if fv.is_finite() && fv <= f + opts.armijo_c * slope + slack {
                break (fv, true);
            }
            t *= opts.backtrack;
            if t < 1e-30 {
                break (f, false);
            }
        };
        iters += 1;
        if !accepted {
            // No representable decrease remains along the scaled direction.
            converged = gm <= opts.tol_gradmap.sqrt();
            break;
        }
        let f_chk = p.value_grad(&x_new, &mut g_new);
        debug_assert!((f_chk - f_new).abs() <= 1e-12 * f_new.abs().max(1.0));
        t_next = opts.step0.min(2.0 * t);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_chk;
        history.push(f);
        gm = gradmap_norm(p, &x, &g, &mut buf);
        if opts.record_trace {
            trace.push(TraceRow { iter: iters, objective: f, gradmap: gm, step: t });
        }
    }
    Ok(Outcome { x, value: f, iters, converged, gradmap: gm, trace })
}

/// `x_i = max(y_i - τ / w_i, 0)` with `τ` chosen so `Σ x = total`.
pub(crate) fn project_weighted_simplex(y: &[f64], w: &[f64], total: f64, out: &mut [f64]) {
    let mut order: Vec<usize> = (0..y.len()).collect();
    let key = |i: usize| y[i] * w[i];
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)));
    let mut sum_y = 0.0;
    let mut sum_s = 0.0;
    let mut tau = 0.0;
    for &i in &order {
        sum_y += y[i];
        sum_s += 1.0 / w[i];
        let t = (sum_y - total) / sum_s;
        if key(i) > t {
            tau = t;
        } else {
            break;
        }
    }
    for i in 0..y.len() {
        out[i] = (y[i] - tau / w[i]).max(0.0);
    }
}

const METRIC_FLOOR: f64 = 1e-3;
const CG_REL_TOL: f64 = 1e-8;
const CG_MAX_ITERS: usize = 2000;

/// Jacobi-preconditioned conjugate gradients for `(H + shift I) x = rhs` on
/// the complement of the stencil kernel. Stops early on `CG_REL_TOL`; any
/// partial iterate is still a descent direction.
pub(crate) fn solve_flux_system(h: &FluxHessian, shift: f64, rhs: &[f64], out: &mut [f64]) -> usize {
    let grid = h.grid;
    let mut r = rhs.to_vec();
    remove_stencil_kernel_slice(&grid, &mut r);
    let iters = solve_shifted_system(h, &vec![shift; r.len()], &r, out);
    remove_stencil_kernel_slice(&grid, out);
    iters
}

/// Same as [`solve_flux_system`] for `(H + diag(shift)) x = rhs` with a
/// positive nodewise shift, on the whole space.
pub(crate) fn solve_shifted_system(h: &FluxHessian, shift: &[f64], rhs: &[f64], out: &mut [f64]) -> usize {
    let n = rhs.len();
    let grid = h.grid;
    let diag: Vec<f64> = h.diagonal().into_iter().zip(shift).map(|(v, s)| v + s).collect();
    let mut scratch = vec![vec![0.0; n]; grid.dim() + 1];
    let mut r = rhs.to_vec();
    out.iter_mut().for_each(|x| *x = 0.0);
    let r0 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r0 == 0.0 {
        return 0;
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, b)| a / b).collect();
    let mut p = z.clone();
    let mut hp = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut iters = 0;
    while iters < CG_MAX_ITERS {
        iters += 1;
        h.apply(&p, &mut hp, &mut scratch);
        for ((a, b), s) in hp.iter_mut().zip(&p).zip(shift) {
            *a += s * b;
        }
        let php: f64 = p.iter().zip(&hp).map(|(a, b)| a * b).sum();
        if !(php > 0.0) {
            break;
        }
        let step = rz / php;
        for i in 0..n {
            out[i] += step * p[i];
            r[i] -= step * hp[i];
        }
        if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= CG_REL_TOL * r0 {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    iters
}

/// Shift added to a flux Hessian so it is positive definite off the kernel
/// even where the kinetic weight vanishes.
pub(crate) fn regularizing_shift(h: &FluxHessian) -> f64 {
    let diag = h.diagonal();
    let mean = diag.iter().sum::<f64>() / diag.len() as f64;
    1e-10 * mean.max(METRIC_FLOOR)
}

/// `J_h` over the concatenated vector `[u; m]`. The `u` block is scaled by
/// its exact kinetic Hessian and projected orthogonally off the stencil
/// kernel, which `J_h` cannot see; the `m` block is separable, so its exact
/// diagonal scales it and weights its simplex projection.
struct JhProblem<'a> {
    obj: &'a DiscreteObjective,
    ws: Workspace,
    nodes: usize,
    grid: TorusGrid,
    wm: Vec<f64>,
}

impl Smooth for JhProblem<'_> {
    fn len(&self) -> usize {
        2 * self.nodes
    }

    fn cell_volume(&self) -> f64 {
        1.0 / self.nodes as f64
    }

    fn value(&mut self, x: &[f64]) -> f64 {
        let (u, m) = x.split_at(self.nodes);
        self.obj.value_raw(u, m, &mut self.ws)
    }

    fn value_grad(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        let (u, m) = x.split_at(self.nodes);
        let (gu, gm) = g.split_at_mut(self.nodes);
        self.obj.value_grad_raw(u, m, gu, gm, &mut self.ws)
    }

    fn scaled_direction(&mut self, x: &[f64], g: &[f64], d: &mut [f64]) {
        let (u, m) = x.split_at(self.nodes);
        let (gu, gm) = g.split_at(self.nodes);
        let (du, dm) = d.split_at_mut(self.nodes);
        self.obj.shifted_gradient(u, &mut self.ws.b);
        let hess = self.obj.kinetic_hessian(m, &self.ws);
        solve_flux_system(&hess, regularizing_shift(&hess), gu, du);
        self.obj.curvature_m(m, &self.ws, &mut self.wm);
        for ((w, di), gi) in self.wm.iter_mut().zip(dm.iter_mut()).zip(gm) {
            *w = w.max(METRIC_FLOOR);
            *di = gi / *w;
        }
    }

    fn project(&self, y: &[f64], out: &mut [f64]) {
        let (yu, ym) = y.split_at(self.nodes);
        let (ou, om) = out.split_at_mut(self.nodes);
        ou.copy_from_slice(yu);
        remove_stencil_kernel_slice(&self.grid, ou);
        project_weighted_simplex(ym, &self.wm, self.nodes as f64, om);
    }

    fn project_euclidean(&self, y: &[f64], out: &mut [f64]) {
        let (yu, ym) = y.split_at(self.nodes);
        let (ou, om) = out.split_at_mut(self.nodes);
        ou.copy_from_slice(yu);
        remove_stencil_kernel_slice(&self.grid, ou);
        om.copy_from_slice(&project_simplex(ym, self.nodes as f64));
    }
}

/// A feasible starting point with random `u` (stencil kernel removed) and
/// random positive `m`.
pub fn random_point(grid: TorusGrid, seed: u64) -> FeasiblePoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let m: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.5..1.5)).collect();
    let mut u = GridFunction::from_raw(grid, u);
    remove_stencil_kernel(&mut u);
    let mass = crate::grid::integrate(&GridFunction::from_raw(grid, m.clone()));
    let m = GridFunction::from_raw(grid, m.into_iter().map(|v| v / mass).collect());
    let mean = crate::grid::integrate(&u);
    FeasiblePoint::from_parts_unchecked(u.map(|v| v - mean), m)
}

pub fn minimize(obj: &DiscreteObjective, init: Init, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    let grid = *obj.grid();
    let start = match init {
        Init::Uniform => FeasiblePoint::uniform(grid),
        Init::Random(seed) => random_point(grid, seed),
        Init::Point(pt) => {
            grid.check_same(pt.grid())?;
            pt
        }
    };
    let nodes = grid.len();
    let mut x = Vec::with_capacity(2 * nodes);
    x.extend_from_slice(start.u().values());
    x.extend_from_slice(start.m().values());
    let mut problem = JhProblem { obj, ws: obj.workspace(), nodes, grid, wm: vec![1.0; nodes] };
    let out = run(&mut problem, x, opts)?;
    let (u, m) = out.x.split_at(nodes);
    let pt = FeasiblePoint::from_parts_unchecked(
        GridFunction::from_raw(grid, u.to_vec()),
        GridFunction::from_raw(grid, m.to_vec()),
    );
    let (hbar, hbar_std) = estimate_hbar(&pt, obj, opts.mass_cutoff)?;
    let diagnostics = apriori_diagnostics(&pt, obj)?;
    let (u, m) = pt.into_parts();
    Ok(SolveResult {
        u,
        m,
        hbar,
        hbar_std,
        objective: out.value,
        iters: out.iters,
        converged: out.converged,
        gradmap: out.gradmap,
        diagnostics,
        trace: out.trace,
    })
}

/// Euclidean projection helper re-exported for callers that only need the
/// density block.
pub fn project_density(m: &[f64]) -> Vec<f64> {
    project_simplex(m, m.len() as f64)
}
