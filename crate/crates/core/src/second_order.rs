//! Second-order problems with `P = 0` through the substitution `m = ψ^β`.
//!
//! For a fixed `H̄` the unknown `ψ ≥ 0` minimizes
//!
//! ```text
//! Ĵ[ψ] = ∫ β^{γ'-1} |Dψ|^{γ'}/γ' + Ĝ(ψ) - γ/(β+γ) (V - H̄) ψ^{(β+γ)/γ},
//! Ĝ(z) = ∫_0^z g(r^β) r^{β/γ} dr,   β = γ'/(αγ + 1),
//! ```
//!
//! and `H̄` is then adjusted until `∫ ψ^β = 1`. With `γ = 2` this is
//! `β = 2/(2α+1)` and `u = -m^α/α` up to a constant.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{invalid, MfgError, Result};
use crate::grid::{central_diff, central_diff_into, GridFunction, TorusGrid};
use crate::model::{CouplingG, ProblemSpec};
use crate::optimizer::{run, solve_shifted_system, Smooth, SolveOptions};
use crate::par;
use crate::variational::FluxHessian;

/// `β = γ'/(αγ + 1)`; `2/(2α+1)` for `γ = 2`.
pub fn psi_exponent(alpha: f64, gamma: f64) -> f64 {
    let gp = gamma / (gamma - 1.0);
    gp / (alpha * gamma + 1.0)
}

/// `Ĝ(z) = ∫_0^z g(r^β) r^{β/γ} dr` in closed form: a term `c z^θ` of `G`
/// contributes `cθ z^{s+1}/(s+1)` with `s = β(θ-1) + β/γ`.
pub fn hat_g_with(z: f64, coupling: &CouplingG, alpha: f64, gamma: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return invalid(format!("Ĝ is defined on z >= 0, got {z}"));
    }
    Ok(hat_g_raw(z, coupling, psi_exponent(alpha, gamma), gamma))
}

/// [`hat_g_with`] for `γ = 2`.
pub fn hat_g(z: f64, coupling: &CouplingG, alpha: f64) -> Result<f64> {
    hat_g_with(z, coupling, alpha, 2.0)
}

fn hat_g_raw(z: f64, coupling: &CouplingG, beta: f64, gamma: f64) -> f64 {
    coupling
        .terms()
        .iter()
        .map(|t| {
            let s = beta * (t.theta - 1.0) + beta / gamma;
            t.c * t.theta * z.powf(s + 1.0) / (s + 1.0)
        })
        .sum()
}

/// `Ĝ'(z) = g(z^β) z^{β/γ}` and `Ĝ''(z)`, with `z` floored away from zero
/// for the second derivative.
fn hat_g_derivs(z: f64, coupling: &CouplingG, beta: f64, gamma: f64) -> (f64, f64) {
    let zz = z.max(1e-12);
    coupling.terms().iter().fold((0.0, 0.0), |(d1, d2), t| {
        let s = beta * (t.theta - 1.0) + beta / gamma;
        let k = t.c * t.theta;
        (d1 + k * z.max(0.0).powf(s), d2 + k * s * zz.powf(s - 1.0))
    })
}

/// A `P = 0` problem solved through `ψ`, with an optional starting bracket
/// for `H̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderSpec {
    pub base: ProblemSpec,
    pub hbar_bracket: Option<(f64, f64)>,
}

impl SecondOrderSpec {
    pub fn new(base: ProblemSpec, hbar_bracket: Option<(f64, f64)>) -> Result<Self> {
        if base.drift.iter().any(|p| *p != 0.0) {
            return invalid("the second-order reduction needs P = 0");
        }
        if let Some((lo, hi)) = hbar_bracket {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return invalid(format!("bad H̄ bracket ({lo}, {hi})"));
            }
        }
        Ok(Self { base, hbar_bracket })
    }

    pub fn beta(&self) -> f64 {
        psi_exponent(self.base.alpha, self.base.gamma)
    }

    fn consts(&self) -> Consts {
        let gamma = self.base.gamma;
        let gp = gamma / (gamma - 1.0);
        let beta = self.beta();
        Consts {
            beta,
            gamma,
            gp,
            kin: beta.powf(gp - 1.0),
            pot_exp: (beta + gamma) / gamma,
            pot_coef: gamma / (beta + gamma),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Consts {
    beta: f64,
    gamma: f64,
    gp: f64,
    kin: f64,
    pot_exp: f64,
    pot_coef: f64,
}

/// `Ĵ_h[ψ]` at a fixed `H̄`, with the central gradient.
pub fn assemble_jhat(psi: &GridFunction, spec: &SecondOrderSpec, hbar: f64) -> Result<f64> {
    spec.base.grid.check_same(psi.grid())?;
    if psi.values().iter().any(|v| !(*v >= 0.0)) {
        return invalid("ψ must be nonnegative");
    }
    let mut p = InnerProblem::new(spec, hbar);
    Ok(p.value(psi.values()))
}

struct InnerProblem<'a> {
    spec: &'a SecondOrderSpec,
    c: Consts,
    grid: TorusGrid,
    shifted_v: Vec<f64>,
    d: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    hess: FluxHessian,
    shift: Vec<f64>,
}

impl<'a> InnerProblem<'a> {
    fn new(spec: &'a SecondOrderSpec, hbar: f64) -> Self {
        let grid = spec.base.grid;
        let n = grid.len();
        Self {
            spec,
            c: spec.consts(),
            grid,
            shifted_v: spec.base.potential.values().iter().map(|v| v - hbar).collect(),
            d: vec![vec![0.0; n]; grid.dim()],
            tmp: vec![0.0; n],
            hess: FluxHessian::isotropic(grid, spec.consts().kin),
            shift: vec![0.0; n],
        }
    }

    fn fill_gradient(&mut self, x: &[f64]) {
        for (k, d) in self.d.iter_mut().enumerate() {
            central_diff_into(&self.grid, x, k, d);
        }
    }

    fn r2(&self, i: usize) -> f64 {
        self.d.iter().map(|d| d[i] * d[i]).sum()
    }
}

impl Smooth for InnerProblem<'_> {
    fn len(&self) -> usize {
        self.grid.len()
    }

    fn cell_volume(&self) -> f64 {
        1.0 / self.grid.len() as f64
    }

    fn value(&mut self, x: &[f64]) -> f64 {
        self.fill_gradient(x);
        let c = self.c;
        let coupling = &self.spec.base.coupling;
        let this = &*self;
        par::sum_indexed(x.len(), |i| {
            let z = x[i].max(0.0);
            c.kin * this.r2(i).powf(0.5 * c.gp) / c.gp + hat_g_raw(z, coupling, c.beta, c.gamma)
                - c.pot_coef * this.shifted_v[i] * z.powf(c.pot_exp)
        }) / x.len() as f64
    }

    fn value_grad(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        let f = self.value(x);
        let c = self.c;
        let grid = self.grid;
        let n = x.len();
        let coupling = &self.spec.base.coupling;
        for i in 0..n {
            let r2 = self.r2(i);
            let w = if c.gp == 2.0 { c.kin } else if r2 == 0.0 { 0.0 } else { c.kin * r2.powf(0.5 * (c.gp - 2.0)) };
            for d in self.d.iter_mut() {
                d[i] *= w;
            }
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..grid.dim() {
            central_diff_into(&grid, &self.d[k], k, &mut self.tmp);
            for (gi, t) in g.iter_mut().zip(&self.tmp) {
                *gi -= t;
            }
        }
        for i in 0..n {
            let z = x[i].max(0.0);
            g[i] += hat_g_derivs(z, coupling, c.beta, c.gamma).0 - self.shifted_v[i] * z.powf(c.pot_exp - 1.0);
        }
        f
    }

    /// Newton-like metric: exact kinetic Hessian plus the nodewise curvature,
    /// with the concave part of the potential term kept only while the
    /// diagonal stays safely positive.
    fn scaled_direction(&mut self, x: &[f64], g: &[f64], d: &mut [f64]) {
        let c = self.c;
        let coupling = &self.spec.base.coupling;
        if c.gp != 2.0 {
            self.fill_gradient(x);
            let dim = self.grid.dim();
            let a: Vec<[f64; 3]> = (0..x.len())
                .map(|i| {
                    let r2 = self.r2(i) + 1e-12;
                    let s = c.kin * r2.powf(0.5 * (c.gp - 2.0));
                    let e = (c.gp - 2.0) / r2;
                    let b0 = self.d[0][i];
                    if dim == 1 {
                        [s * (1.0 + e * b0 * b0), 0.0, 0.0]
                    } else {
                        let b1 = self.d[1][i];
                        [s * (1.0 + e * b0 * b0), s * e * b0 * b1, s * (1.0 + e * b1 * b1)]
                    }
                })
                .collect();
            self.hess = FluxHessian { grid: self.grid, a };
        }
        for i in 0..x.len() {
            let z = x[i].max(1e-12);
            let convex = hat_g_derivs(z, coupling, c.beta, c.gamma).1;
            let pot = -self.shifted_v[i] * (c.pot_exp - 1.0) * z.powf(c.pot_exp - 2.0);
            self.shift[i] = (convex + pot).max(0.1 * convex).max(1e-8);
        }
        solve_shifted_system(&self.hess, &self.shift, g, d);
    }

    fn project(&self, y: &[f64], out: &mut [f64]) {
        self.project_euclidean(y, out);
    }

    fn project_euclidean(&self, y: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(y) {
            *o = v.max(0.0);
        }
    }
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub psi: GridFunction,
    pub objective: f64,
    pub iters: usize,
    pub converged: bool,
    pub gradmap: f64,
}

/// Minimizes `Ĵ_h` over `ψ ≥ 0` at a fixed `H̄`, starting from `init`.
pub fn solve_inner(spec: &SecondOrderSpec, hbar: f64, init: &GridFunction, opts: &SolveOptions) -> Result<InnerSolution> {
    spec.base.grid.check_same(init.grid())?;
    if !hbar.is_finite() {
        return invalid("H̄ must be finite");
    }
    if init.values().iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(MfgError::InvalidInit("ψ must be finite and nonnegative".into()));
    }
    let mut p = InnerProblem::new(spec, hbar);
    let out = run(&mut p, init.values().to_vec(), opts)?;
    Ok(InnerSolution {
        psi: GridFunction::new(spec.base.grid, out.x)?,
        objective: out.value,
        iters: out.iters,
        converged: out.converged,
        gradmap: out.gradmap,
    })
}

fn second_derivative_sum(f: &GridFunction) -> Result<GridFunction> {
    let grid = *f.grid();
    let mut acc = vec![0.0; grid.len()];
    for k in 0..grid.dim() {
        let dd = central_diff(&central_diff(f, k)?, k)?;
        acc.iter_mut().zip(dd.values()).for_each(|(a, b)| *a += b);
    }
    GridFunction::new(grid, acc)
}

/// `β^{γ'-1} Δ_{γ'} ψ - (g(ψ^β) + H̄ - V) ψ^{β/γ}` with central differences.
pub fn el_residual(psi: &GridFunction, spec: &SecondOrderSpec, hbar: f64) -> Result<GridFunction> {
    spec.base.grid.check_same(psi.grid())?;
    if psi.values().iter().any(|v| !(*v >= 0.0)) {
        return invalid("ψ must be nonnegative");
    }
    let c = spec.consts();
    let grid = spec.base.grid;
    let lap = if c.gp == 2.0 {
        second_derivative_sum(psi)?.map(|v| c.kin * v)
    } else {
        let d: Vec<GridFunction> = (0..grid.dim()).map(|k| central_diff(psi, k)).collect::<Result<_>>()?;
        let r2: Vec<f64> = (0..grid.len()).map(|i| d.iter().map(|dk| dk.values()[i].powi(2)).sum()).collect();
        let mut acc = vec![0.0; grid.len()];
        for (k, dk) in d.iter().enumerate() {
            let flux = GridFunction::new(
                grid,
                dk.values().iter().zip(&r2).map(|(b, r)| if *r == 0.0 { 0.0 } else { b * r.powf(0.5 * (c.gp - 2.0)) }).collect(),
            )?;
            let div = central_diff(&flux, k)?;
            acc.iter_mut().zip(div.values()).for_each(|(a, b)| *a += c.kin * b);
        }
        GridFunction::new(grid, acc)?
    };
    let v = spec.base.potential.values();
    let coupling = &spec.base.coupling;
    let vals = psi
        .values()
        .iter()
        .enumerate()
        .map(|(i, z)| lap.values()[i] - (coupling.g(z.powf(c.beta)) + hbar - v[i]) * z.powf(c.beta / c.gamma))
        .collect();
    GridFunction::new(grid, vals)
}

/// Residual of `-Δu + |Du|²/(2 m^α) = g(m) + H̄ - V` (quadratic case).
pub fn first_equation_residual(u: &GridFunction, m: &GridFunction, spec: &SecondOrderSpec, hbar: f64) -> Result<GridFunction> {
    let grid = spec.base.grid;
    grid.check_same(u.grid())?;
    grid.check_same(m.grid())?;
    let lap = second_derivative_sum(u)?;
    let d: Vec<GridFunction> = (0..grid.dim()).map(|k| central_diff(u, k)).collect::<Result<_>>()?;
    let v = spec.base.potential.values();
    let alpha = spec.base.alpha;
    let vals = (0..grid.len())
        .map(|i| {
            let mi = m.values()[i];
            let du2: f64 = d.iter().map(|dk| dk.values()[i].powi(2)).sum();
            -lap.values()[i] + du2 / (2.0 * mi.powf(alpha)) - spec.base.coupling.g(mi) - hbar + v[i]
        })
        .collect();
    GridFunction::new(grid, vals)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OuterStep {
    pub hbar: f64,
    pub mass: f64,
    pub inner_iters: usize,
    pub inner_converged: bool,
}

#[derive(Debug, Clone)]
pub struct SecondOrderResult {
    pub psi: GridFunction,
    pub m: GridFunction,
    /// `-m^α/α` shifted to mean zero (quadratic case).
    pub u: GridFunction,
    pub hbar: f64,
    pub mass_error: f64,
    pub converged: bool,
    pub gradmap: f64,
    pub objective: f64,
    pub outer: Vec<OuterStep>,
}

impl SecondOrderResult {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "Hbar": self.hbar,
            "mass_error": self.mass_error,
            "converged": self.converged,
            "gradmap": self.gradmap,
            "Jhat": self.objective,
            "outer_iters": self.outer.len(),
            "outer": self.outer,
        })
    }

    /// `hbar,mass,inner_iters,inner_converged` rows in evaluation order.
    pub fn outer_csv(&self) -> String {
        let mut out = String::from("hbar,mass,inner_iters,inner_converged\n");
        for s in &self.outer {
            let _ = writeln!(out, "{:.16e},{:.16e},{},{}", s.hbar, s.mass, s.inner_iters, s.inner_converged);
        }
        out
    }
}

const MASS_TOL: f64 = 1e-10;
/// Inner stationarity needed for the mass to resolve `MASS_TOL`.
const INNER_TOL: f64 = 1e-11;
const MAX_OUTER: usize = 200;

struct Outer<'a> {
    spec: &'a SecondOrderSpec,
    opts: &'a SolveOptions,
    evals: Vec<(f64, f64, InnerSolution)>,
}

impl Outer<'_> {
    fn mass(&self, psi: &GridFunction) -> f64 {
        let beta = self.spec.beta();
        psi.values().iter().map(|z| z.powf(beta)).sum::<f64>() / psi.values().len() as f64
    }

    /// Inner solve warm-started from the closest evaluated `H̄`.
    fn eval(&mut self, hbar: f64) -> Result<f64> {
        let init = self
            .evals
            .iter()
            .min_by(|a, b| (a.0 - hbar).abs().total_cmp(&(b.0 - hbar).abs()))
            .map(|e| e.2.psi.clone())
            .filter(|p| p.max() > 0.0)
            .unwrap_or_else(|| GridFunction::constant(self.spec.base.grid, 1.0));
        let sol = solve_inner(self.spec, hbar, &init, self.opts)?;
        let mass = self.mass(&sol.psi);
        self.evals.push((hbar, mass, sol));
        let mut sorted: Vec<(f64, f64)> = self.evals.iter().map(|e| (e.0, e.1)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in sorted.windows(2) {
            if w[1].0 > w[0].0 && w[1].1 > w[0].1 + 1e-10 {
                return Err(MfgError::Numeric(format!(
                    "mass is not decreasing in H̄: mass({}) = {} < mass({}) = {}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(mass - 1.0)
    }
}

/// Outer bracketed secant (Illinois) on `mass(H̄) - 1`, which decreases
/// in `H̄`, around inner minimizations of `Ĵ_h`.
pub fn solve_second_order(spec: &SecondOrderSpec, opts: &SolveOptions) -> Result<SecondOrderResult> {
    opts.validate()?;
    let inner_opts = SolveOptions { tol_gradmap: opts.tol_gradmap.min(INNER_TOL), ..opts.clone() };
    let mut outer = Outer { spec, opts: &inner_opts, evals: Vec::new() };
    let (mut lo, mut hi, mut flo, mut fhi);
    match spec.hbar_bracket {
        Some((a, b)) => {
            lo = a;
            hi = b;
            flo = outer.eval(lo)?;
            fhi = outer.eval(hi)?;
        }
        None => {
            let h0 = spec.base.potential.mean() - spec.base.coupling.g(1.0);
            lo = h0;
            hi = h0;
            flo = outer.eval(h0)?;
            fhi = flo;
        }
    }
    let mut width = 1.0;
    for _ in 0..60 {
        if flo >= 0.0 && fhi <= 0.0 {
            break;
        }
        if flo < 0.0 {
            hi = lo;
            fhi = flo;
            lo -= width;
            flo = outer.eval(lo)?;
        } else {
            lo = hi;
            flo = fhi;
            hi += width;
            fhi = outer.eval(hi)?;
        }
        width *= 2.0;
    }
    if !(flo >= 0.0 && fhi <= 0.0) {
        return Err(MfgError::Numeric(format!("no bracket for H̄ found, last ({lo}, {hi})")));
    }

    let mut best = if flo.abs() <= fhi.abs() { lo } else { hi };
    let mut side = 0i8;
    for _ in 0..MAX_OUTER {
        let fbest = outer.evals.iter().find(|e| e.0 == best).map(|e| e.1 - 1.0).unwrap_or(f64::INFINITY);
        if fbest.abs() <= MASS_TOL || hi - lo <= 1e-14 * (1.0 + lo.abs()) {
            break;
        }
        let mut h = if flo == fhi { 0.5 * (lo + hi) } else { hi - fhi * (hi - lo) / (fhi - flo) };
        if !(h > lo && h < hi) {
            h = 0.5 * (lo + hi);
        }
        let fh = outer.eval(h)?;
        best = h;
        if fh > 0.0 {
            lo = h;
            flo = fh;
            if side == 1 {
                fhi *= 0.5;
            }
            side = 1;
        } else {
            hi = h;
            fhi = fh;
            if side == -1 {
                flo *= 0.5;
            }
            side = -1;
        }
    }

    let steps: Vec<OuterStep> = outer
        .evals
        .iter()
        .map(|e| OuterStep { hbar: e.0, mass: e.1, inner_iters: e.2.iters, inner_converged: e.2.converged })
        .collect();
    let (hbar, mass, sol) = outer
        .evals
        .into_iter()
        .find(|e| e.0 == best)
        .expect("best H̄ was evaluated");
    let beta = spec.beta();
    let alpha = spec.base.alpha;
    let m = sol.psi.map(|z| z.powf(beta));
    let u = m.map(|x| -x.powf(alpha) / alpha);
    let umean = u.mean();
    let mass_error = (mass - 1.0).abs();
    Ok(SecondOrderResult {
        u: u.map(|x| x - umean),
        m,
        hbar,
        mass_error,
        converged: sol.converged && mass_error <= 1e-8,
        gradmap: sol.gradmap,
        objective: sol.objective,
        psi: sol.psi,
        outer: steps,
    })
}
