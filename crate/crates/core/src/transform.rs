//! Two-dimensional change of variables for `0 < α < 1`.
//!
//! For a fixed vector `Q` the dual pair `(ψ, m)` minimizes a congestion
//! functional with exponents `(α̃, γ')` that lies back in the variational
//! range. Averaging the flux recovers the drift `P`, and a vanishing-discount
//! solve of the monotone Hamilton-Jacobi scheme recovers `u` and `H̄`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, MfgError, Result};
use crate::grid::{
    central_diff, divergence_central, divergence_second_order, upwind_node, GridFunction, GridVectorField,
};
use crate::model::ProblemSpec;
use crate::optimizer::{minimize, Init, SolveOptions, SolveResult};
use crate::par;
use crate::variational::{estimate_hbar, DiscreteObjective, FeasiblePoint, DEFAULT_MASS_CUTOFF, DEFAULT_M_FLOOR};

/// `(γ', α̃)` with `γ' = γ/(γ-1)` and `α̃ = α - (α-1)γ'`.
pub fn transform_exponents(alpha: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("the transform needs 0 < alpha < 1, got {alpha}"));
    }
    if !(gamma > 1.0 && gamma.is_finite()) {
        return invalid(format!("the transform needs gamma > 1, got {gamma}"));
    }
    let gp = gamma / (gamma - 1.0);
    let at = alpha - (alpha - 1.0) * gp;
    if !(1.0 < at && at < gp) {
        return Err(MfgError::Numeric(format!("transformed exponent {at} outside (1, {gp})")));
    }
    Ok((gp, at))
}

/// A problem with `0 < α < 1` in two dimensions together with the dual drift
/// `Q`. The drift stored in `base` is not used: `P` is an output.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSpec {
    pub base: ProblemSpec,
    pub q: [f64; 2],
}

impl DualSpec {
    pub fn new(base: ProblemSpec, q: [f64; 2]) -> Result<Self> {
        if base.grid.dim() != 2 {
            return invalid("the transform is two-dimensional");
        }
        transform_exponents(base.alpha, base.gamma)?;
        if q.iter().any(|v| !v.is_finite()) {
            return invalid("Q must be finite");
        }
        Ok(Self { base, q })
    }

    pub fn exponents(&self) -> (f64, f64) {
        transform_exponents(self.base.alpha, self.base.gamma).expect("validated on construction")
    }

    /// The variational problem in `(ψ, m)`: exponents `(α̃, γ')`, drift `Q`,
    /// potential and coupling scaled by `γ/γ'`.
    pub fn dual_problem(&self) -> Result<ProblemSpec> {
        let (gp, at) = self.exponents();
        let scale = self.base.gamma / gp;
        ProblemSpec::new(
            self.base.grid,
            at,
            gp,
            self.q.to_vec(),
            self.base.potential.map(|v| scale * v),
            self.base.coupling.scaled(scale)?,
        )
    }

    pub fn dual_objective(&self) -> Result<DiscreteObjective> {
        DiscreteObjective::with_default_floor(self.dual_problem()?)
    }
}

/// Minimizes the dual functional. The `u` field of the result holds `ψ`.
pub fn solve_dual(dual: &DualSpec, init: Init, opts: &SolveOptions) -> Result<SolveResult> {
    minimize(&dual.dual_objective()?, init, opts)
}

/// Nodewise flux `m^{1-α̃} |Q + Dψ|^{γ'-2} (Q + Dψ)`, with `m` floored.
pub fn dual_flux(psi: &GridFunction, m: &GridFunction, dual: &DualSpec) -> Result<GridVectorField> {
    psi.grid().check_same(m.grid())?;
    dual.base.grid.check_same(psi.grid())?;
    let (gp, at) = dual.exponents();
    let grid = *psi.grid();
    let b: Vec<Vec<f64>> = (0..2)
        .map(|k| central_diff(psi, k).map(|d| d.values().iter().map(|v| v + dual.q[k]).collect()))
        .collect::<Result<_>>()?;
    let mv = m.values();
    let weight = par::map_indexed(mv.len(), |i| {
        let r2 = b[0][i] * b[0][i] + b[1][i] * b[1][i];
        if r2 == 0.0 {
            0.0
        } else {
            mv[i].max(DEFAULT_M_FLOOR).powf(1.0 - at) * r2.powf(0.5 * (gp - 2.0))
        }
    });
    let comps = (0..2)
        .map(|k| GridFunction::new(grid, b[k].iter().zip(&weight).map(|(x, w)| x * w).collect()))
        .collect::<Result<Vec<_>>>()?;
    GridVectorField::new(comps)
}

/// Mean of [`dual_flux`].
pub fn mean_flux(psi: &GridFunction, m: &GridFunction, dual: &DualSpec) -> Result<[f64; 2]> {
    let f = dual_flux(psi, m, dual)?;
    Ok([crate::grid::integrate(f.component(0)), crate::grid::integrate(f.component(1))])
}

/// Drift recovered from the dual pair: with `F` the mean flux,
/// `p1 = -F2` and `p2 = F1`.
pub fn recover_p(psi: &GridFunction, m: &GridFunction, dual: &DualSpec) -> Result<[f64; 2]> {
    let f = mean_flux(psi, m, dual)?;
    Ok([-f[1], f[0]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HjbOptions {
    /// Target for the max-norm residual of the discounted equation.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Over/under-relaxation of each nodal update; 1 is plain Gauss-Seidel.
    pub relaxation: f64,
    /// Floor on `m` inside `m^α`.
    pub mass_cutoff: f64,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_sweeps: 200_000, relaxation: 1.0, mass_cutoff: DEFAULT_MASS_CUTOFF }
    }
}

#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub u: GridFunction,
    /// `max |β u + |P + Du|^γ_upwind / (γ m^α) + V - g(m)|`.
    pub residual: f64,
    pub sweeps: usize,
}

struct HjbNodeData {
    weight: Vec<f64>,
    source: Vec<f64>,
}

fn hjb_data(m: &GridFunction, spec: &ProblemSpec, cutoff: f64) -> HjbNodeData {
    let mv = m.values();
    let v = spec.potential.values();
    HjbNodeData {
        weight: mv.iter().map(|x| 1.0 / (spec.gamma * x.max(cutoff).powf(spec.alpha))).collect(),
        source: mv.iter().zip(v).map(|(x, vi)| vi - spec.coupling.g(*x)).collect(),
    }
}

/// Solves `β v_i + κ + w_i H_i(v) + s_i = 0` for `v_i` with the other
/// values fixed. The left side is convex and strictly increasing in `v_i`,
/// so Newton iterates land right of the root after one step and then
/// decrease monotonically.
#[allow(clippy::too_many_arguments)]
fn node_solve(
    grid: &crate::grid::TorusGrid,
    v: &mut [f64],
    drift: &[f64],
    gamma: f64,
    beta: f64,
    kappa: f64,
    weight: f64,
    source: f64,
    i: usize,
) -> f64 {
    let inv_h = 1.0 / grid.h();
    let phi = |x: f64, v: &[f64]| -> (f64, f64) {
        let mut val = 0.0;
        let mut der = 0.0;
        for (k, &p) in drift.iter().enumerate() {
            let a = (-p - (v[grid.shift(i, k, 1)] - x) * inv_h).max(0.0);
            let b = (p + (x - v[grid.shift(i, k, -1)]) * inv_h).max(0.0);
            val += a.powf(gamma) + b.powf(gamma);
            der += gamma * (a.powf(gamma - 1.0) + b.powf(gamma - 1.0)) * inv_h;
        }
        (beta * x + kappa + weight * val + source, beta + weight * der)
    };
    let mut x = v[i];
    for _ in 0..200 {
        let (f, df) = phi(x, v);
        let step = f / df;
        x -= step;
        if step.abs() <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Nodewise residual of `β u + w H(u) + s = 0` written for `u = v + κ/β`.
fn hjb_residuals(
    grid: &crate::grid::TorusGrid,
    v: &[f64],
    drift: &[f64],
    gamma: f64,
    data: &HjbNodeData,
) -> Vec<f64> {
    par::map_indexed(v.len(), |i| data.weight[i] * upwind_node(grid, v, drift, gamma, i) + data.source[i])
}

/// Discounted monotone solve, warm-started from `warm` when given.
///
/// The unknown is split as `u = v + κ/β` with `v` of mean zero. Each pass sets
/// `κ = -mean(F(v))`, where `F` is the spatial part of the scheme, and then
/// runs one Gauss-Seidel sweep over the nodes, cycling through the `2^d`
/// sweep directions. Only differences of `v` enter `F`, so the iteration
/// does not stall as `β → 0`.
pub fn solve_hjb_discounted_with(
    m: &GridFunction,
    drift: &[f64],
    spec: &ProblemSpec,
    beta: f64,
    opts: &HjbOptions,
    warm: Option<&GridFunction>,
) -> Result<HjbSolution> {
    if !(beta > 0.0 && beta.is_finite()) {
        return invalid(format!("beta must be positive, got {beta}"));
    }
    if !(opts.relaxation > 0.0 && opts.relaxation < 2.0) {
        return invalid(format!("relaxation must lie in (0, 2), got {}", opts.relaxation));
    }
    spec.grid.check_same(m.grid())?;
    if drift.len() != spec.grid.dim() {
        return invalid("drift dimension does not match the grid");
    }
    let grid = spec.grid;
    let gamma = spec.gamma;
    let data = hjb_data(m, spec, opts.mass_cutoff);
    let len = grid.len();
    let mut v = match warm {
        Some(w) => {
            grid.check_same(w.grid())?;
            let mean = crate::grid::integrate(w);
            w.values().iter().map(|x| x - mean).collect()
        }
        None => vec![0.0; len],
    };
    let n = grid.n();
    let dim = grid.dim();
    let mut sweeps = 0;
    loop {
        let f = hjb_residuals(&grid, &v, drift, gamma, &data);
        let kappa = -par::sum(&f) / len as f64;
        let residual = v.iter().zip(&f).map(|(vi, fi)| (beta * vi + kappa + fi).abs()).fold(0.0, f64::max);
        if residual <= opts.tol {
            let u = v.iter().map(|x| x + kappa / beta).collect();
            return Ok(HjbSolution { u: GridFunction::new(grid, u)?, residual, sweeps });
        }
        if sweeps >= opts.max_sweeps {
            return Err(MfgError::Numeric(format!(
                "discounted HJB at beta={beta:e} not converged after {sweeps} sweeps, residual {residual:e}"
            )));
        }
        let dir = sweeps % (1 << dim);
        for step in 0..len {
            let i = if dim == 1 {
                if dir == 0 { step } else { len - 1 - step }
            } else {
                let (mut a, mut b) = (step / n, step % n);
                if dir & 1 == 1 {
                    a = n - 1 - a;
                }
                if dir & 2 == 2 {
                    b = n - 1 - b;
                }
                a * n + b
            };
            let x = node_solve(&grid, &mut v, drift, gamma, beta, kappa, data.weight[i], data.source[i], i);
            v[i] += opts.relaxation * (x - v[i]);
        }
        let mean = v.iter().sum::<f64>() / len as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        sweeps += 1;
    }
}

pub fn solve_hjb_discounted(m: &GridFunction, drift: &[f64], spec: &ProblemSpec, beta: f64) -> Result<GridFunction> {
    solve_hjb_discounted_with(m, drift, spec, beta, &HjbOptions::default(), None).map(|s| s.u)
}

/// Max-norm residual of the discounted scheme at `u`.
pub fn hjb_residual(u: &GridFunction, m: &GridFunction, drift: &[f64], spec: &ProblemSpec, beta: f64, cutoff: f64) -> f64 {
    let data = hjb_data(m, spec, cutoff);
    let f = hjb_residuals(&spec.grid, u.values(), drift, spec.gamma, &data);
    u.values().iter().zip(&f).map(|(ui, fi)| (beta * ui + fi).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaStage {
    pub beta: f64,
    /// `-β mean(u^β)`.
    pub hbar: f64,
    /// `max u^β`, the normalizing constant used for `u`.
    pub paper_hbar: f64,
    /// `max(β u^β) - min(β u^β)`.
    pub oscillation: f64,
    pub residual: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransformResiduals {
    /// `∫ |div F|` with the second-order central divergence of the dual flux.
    pub dual_divergence_l1: f64,
    /// Same with the five-point divergence, which the discrete optimality
    /// conditions drive to zero.
    pub dual_stationarity_l1: f64,
    pub hjb_residual: f64,
    /// `∫ |∂₁w₂ - ∂₂w₁|` for `w = (-F₂, F₁) - P`.
    pub curl_l1: f64,
    /// `max |D^h u - w|` over nodes with `m` above the cutoff.
    pub gradient_mismatch: f64,
}

#[derive(Debug, Clone)]
pub struct TransformResult {
    pub psi: GridFunction,
    pub m: GridFunction,
    pub q: [f64; 2],
    pub p_recovered: [f64; 2],
    pub mean_flux: [f64; 2],
    /// `u^{β_last}` shifted to mean zero; subtract `u.max()` for the
    /// max-normalized form.
    pub u: GridFunction,
    /// `-β_last mean(u^{β_last})`.
    pub hbar: f64,
    pub paper_hbar_beta: f64,
    /// `H̄` read off the dual pair's first equation.
    pub hbar_dual: f64,
    pub dual_converged: bool,
    pub dual_iters: usize,
    pub stages: Vec<BetaStage>,
    pub residuals: TransformResiduals,
}

impl TransformResult {
    pub fn converged(&self) -> bool {
        self.dual_converged
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "Q": self.q,
            "P_recovered": self.p_recovered,
            "mean_flux": self.mean_flux,
            "Hbar": self.hbar,
            "paper_Hbar_beta": self.paper_hbar_beta,
            "Hbar_dual": self.hbar_dual,
            "dual_converged": self.dual_converged,
            "dual_iters": self.dual_iters,
            "stages": self.stages,
            "residuals": self.residuals,
            "mass_error": (crate::grid::integrate(&self.m) - 1.0).abs(),
            "psi": self.psi.to_json(),
            "m": self.m.to_json(),
            "u": self.u.to_json(),
        })
    }

    /// `beta,hbar,paper_hbar,oscillation,residual,sweeps` rows.
    pub fn stages_csv(&self) -> String {
        let mut out = String::from("beta,hbar,paper_hbar,oscillation,residual,sweeps\n");
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{:e},{:.16e},{:.16e},{:.6e},{:.3e},{}",
                s.beta, s.hbar, s.paper_hbar, s.oscillation, s.residual, s.sweeps
            );
        }
        out
    }
}

pub const DEFAULT_BETA_SCHEDULE: [f64; 3] = [1e-1, 1e-2, 1e-3];

fn l1(f: &GridFunction) -> f64 {
    let v = f.values();
    par::sum_indexed(v.len(), |i| v[i].abs()) / v.len() as f64
}

/// Dual solve, drift recovery, and the discounted solves along
/// `beta_schedule` (warm-started, in the given order).
pub fn pipeline_alpha_lt_1(
    dual: &DualSpec,
    beta_schedule: &[f64],
    opts: &SolveOptions,
    hjb: &HjbOptions,
) -> Result<TransformResult> {
    if beta_schedule.is_empty() {
        return invalid("the beta schedule is empty");
    }
    let obj = dual.dual_objective()?;
    let sol = minimize(&obj, Init::Uniform, opts)?;
    let (psi, m) = (sol.u.clone(), sol.m.clone());
    let flux = dual_flux(&psi, &m, dual)?;
    let f = [crate::grid::integrate(flux.component(0)), crate::grid::integrate(flux.component(1))];
    let p = [-f[1], f[0]];
    let (gp, _) = dual.exponents();
    let dual_pt = FeasiblePoint::new(psi.clone(), m.clone())?;
    let hbar_dual = gp / dual.base.gamma * estimate_hbar(&dual_pt, &obj, opts.mass_cutoff)?.0;

    let mut stages = Vec::with_capacity(beta_schedule.len());
    let mut warm: Option<GridFunction> = None;
    for &beta in beta_schedule {
        let s = solve_hjb_discounted_with(&m, &p, &dual.base, beta, hjb, warm.as_ref())?;
        let bu = s.u.map(|x| beta * x);
        stages.push(BetaStage {
            beta,
            hbar: -crate::grid::integrate(&bu),
            paper_hbar: s.u.max(),
            oscillation: bu.max() - bu.min(),
            residual: s.residual,
            sweeps: s.sweeps,
        });
        warm = Some(s.u);
    }
    let u_last = warm.expect("schedule is non-empty");
    let last = stages.last().expect("schedule is non-empty");
    let u_mean = crate::grid::integrate(&u_last);
    let u = u_last.map(|x| x - u_mean);

    let grid = dual.base.grid;
    let w = GridVectorField::new(vec![flux.component(1).map(|x| -x - p[0]), flux.component(0).map(|x| x - p[1])])?;
    let curl = {
        let a = central_diff(w.component(1), 0)?;
        let b = central_diff(w.component(0), 1)?;
        GridFunction::new(grid, a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect())?
    };
    let mut mismatch: f64 = 0.0;
    for k in 0..2 {
        let du = central_diff(&u, k)?;
        for ((d, wk), mi) in du.values().iter().zip(w.component(k).values()).zip(m.values()) {
            if *mi > hjb.mass_cutoff {
                mismatch = mismatch.max((d - wk).abs());
            }
        }
    }
    let residuals = TransformResiduals {
        dual_divergence_l1: l1(&divergence_second_order(&flux)),
        dual_stationarity_l1: l1(&divergence_central(&flux)),
        hjb_residual: last.residual,
        curl_l1: l1(&curl),
        gradient_mismatch: mismatch,
    };
    Ok(TransformResult {
        psi,
        m,
        q: dual.q,
        p_recovered: p,
        mean_flux: f,
        u,
        hbar: last.hbar,
        paper_hbar_beta: last.paper_hbar,
        hbar_dual,
        dual_converged: sol.converged,
        dual_iters: sol.iters,
        stages,
        residuals,
    })
}

/// Searches for the `Q` whose recovered drift is `target` by a secant
/// (finite-difference Newton) iteration on the map `Q ↦ P`.
pub fn find_q_for_p(
    base: &ProblemSpec,
    target: [f64; 2],
    q0: [f64; 2],
    opts: &SolveOptions,
    tol: f64,
    max_iters: usize,
) -> Result<[f64; 2]> {
    let p_of = |q: [f64; 2]| -> Result<[f64; 2]> {
        let dual = DualSpec::new(base.clone(), q)?;
        let sol = solve_dual(&dual, Init::Uniform, opts)?;
        recover_p(&sol.u, &sol.m, &dual)
    };
    let mut q = q0;
    for _ in 0..max_iters {
        let p = p_of(q)?;
        let r = [p[0] - target[0], p[1] - target[1]];
        if r[0].abs().max(r[1].abs()) <= tol {
            return Ok(q);
        }
        let eps = 1e-4 * (1.0 + q[0].abs().max(q[1].abs()));
        let pa = p_of([q[0] + eps, q[1]])?;
        let pb = p_of([q[0], q[1] + eps])?;
        let j = [[(pa[0] - p[0]) / eps, (pb[0] - p[0]) / eps], [(pa[1] - p[1]) / eps, (pb[1] - p[1]) / eps]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-14 {
            return Err(MfgError::Numeric("singular Jacobian of Q -> P".into()));
        }
        q[0] -= (j[1][1] * r[0] - j[0][1] * r[1]) / det;
        q[1] -= (-j[1][0] * r[0] + j[0][0] * r[1]) / det;
    }
    Err(MfgError::Numeric(format!("no Q found for P = {target:?} within {max_iters} iterations")))
}
