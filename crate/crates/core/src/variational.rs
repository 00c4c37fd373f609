//! The discrete congestion functional `J_h`, its analytic gradient, the
//! admissible set `A_h`, and the post-processing estimators that read the
//! effective Hamiltonian and a priori integrals off a minimizer.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, MfgError, Result};
use crate::grid::{central_diff_into, GridFunction, TorusGrid};
use crate::model::ProblemSpec;
use crate::par;

pub const DEFAULT_M_FLOOR: f64 = 1e-8;
pub const DEFAULT_MASS_CUTOFF: f64 = 1e-4;

/// `J_h` for one problem. Below `m_floor` the weight `m^{1-α}` of the
/// kinetic term continues along its tangent at the floor, so the objective
/// stays finite and keeps pulling mass into nodes where `P + Du ≠ 0`.
#[derive(Debug, Clone)]
pub struct DiscreteObjective {
    spec: ProblemSpec,
    m_floor: f64,
}

impl DiscreteObjective {
    pub fn new(spec: ProblemSpec, m_floor: f64) -> Result<Self> {
        spec.require_variational()?;
        if !(m_floor > 0.0) {
            return invalid(format!("m_floor must be positive, got {m_floor}"));
        }
        Ok(Self { spec, m_floor })
    }

    pub fn with_default_floor(spec: ProblemSpec) -> Result<Self> {
        Self::new(spec, DEFAULT_M_FLOOR)
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.spec.grid
    }

    pub fn m_floor(&self) -> f64 {
        self.m_floor
    }

    /// `m^{1-α}` and its derivative, extended linearly below the floor.
    fn weight(&self, m: f64) -> (f64, f64) {
        let a = self.spec.alpha;
        if m >= self.m_floor {
            (m.powf(1.0 - a), (1.0 - a) * m.powf(-a))
        } else {
            let slope = (1.0 - a) * self.m_floor.powf(-a);
            (self.m_floor.powf(1.0 - a) + slope * (m - self.m_floor), slope)
        }
    }

    /// `1 / (γ(α-1))`, the prefactor of the kinetic term.
    fn kinetic_coef(&self) -> f64 {
        1.0 / (self.spec.gamma * (self.spec.alpha - 1.0))
    }

    /// `P + D^h u` per axis.
    pub(crate) fn shifted_gradient(&self, u: &[f64], out: &mut [Vec<f64>]) {
        let grid = self.spec.grid;
        for (k, comp) in out.iter_mut().enumerate() {
            central_diff_into(&grid, u, k, comp);
            let p = self.spec.drift[k];
            for v in comp.iter_mut() {
                *v += p;
            }
        }
    }

    pub(crate) fn workspace(&self) -> Workspace {
        let len = self.spec.grid.len();
        let dim = self.spec.grid.dim();
        Workspace {
            b: vec![vec![0.0; len]; dim],
            flux: vec![vec![0.0; len]; dim],
            tmp: vec![0.0; len],
        }
    }

    /// Value of `J_h` with `B = P + D^h u` already in `ws.b`.
    fn value_from_b(&self, m: &[f64], ws: &Workspace) -> f64 {
        let s = &self.spec;
        let gamma = s.gamma;
        let coef = self.kinetic_coef();
        let v = s.potential.values();
        let b = &ws.b;
        let total = par::sum_indexed(m.len(), |i| {
            let r2: f64 = b.iter().map(|c| c[i] * c[i]).sum();
            coef * r2.powf(0.5 * gamma) * self.weight(m[i]).0 - v[i] * m[i] + s.coupling.big(m[i])
        });
        total / m.len() as f64
    }

    pub(crate) fn value_raw(&self, u: &[f64], m: &[f64], ws: &mut Workspace) -> f64 {
        let mut b = std::mem::take(&mut ws.b);
        self.shifted_gradient(u, &mut b);
        ws.b = b;
        self.value_from_b(m, ws)
    }

    /// Value and the pointwise gradient `∇J_h / h^d` written into `gu`, `gm`.
    pub(crate) fn value_grad_raw(
        &self,
        u: &[f64],
        m: &[f64],
        gu: &mut [f64],
        gm: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        let s = &self.spec;
        let grid = s.grid;
        let (alpha, gamma) = (s.alpha, s.gamma);
        let coef = self.kinetic_coef();
        let value = self.value_raw(u, m, ws);
        let v = s.potential.values();
        {
            let b = &ws.b;
            par::fill(gm, |i| {
                let r2: f64 = b.iter().map(|c| c[i] * c[i]).sum();
                coef * r2.powf(0.5 * gamma) * self.weight(m[i]).1 - v[i] + s.coupling.g(m[i])
            });
        }
        // flux_k = |B|^{γ-2} B_k m^{1-α} / (α-1); the u-gradient is Σ_k D_kᵀ flux_k = -Σ_k D_k flux_k.
        let inv_am1 = 1.0 / (alpha - 1.0);
        let dim = grid.dim();
        for k in 0..dim {
            let b = &ws.b;
            par::fill(&mut ws.flux[k], |i| {
                let r2: f64 = b.iter().map(|c| c[i] * c[i]).sum();
                if r2 == 0.0 {
                    return 0.0;
                }
                r2.powf(0.5 * (gamma - 2.0)) * b[k][i] * self.weight(m[i]).0 * inv_am1
            });
        }
        gu.iter_mut().for_each(|g| *g = 0.0);
        for k in 0..dim {
            central_diff_into(&grid, &ws.flux[k], k, &mut ws.tmp);
            for (g, t) in gu.iter_mut().zip(&ws.tmp) {
                *g -= t;
            }
        }
        value
    }

    /// Per-node Hessian of the kinetic integrand with respect to `B = P + Du`,
    /// evaluated at `B` in `ws.b`.
    pub(crate) fn kinetic_hessian(&self, m: &[f64], ws: &Workspace) -> FluxHessian {
        let s = &self.spec;
        let (alpha, gamma) = (s.alpha, s.gamma);
        let b = &ws.b;
        let dim = s.grid.dim();
        // |B| is regularized so the weight stays finite for γ < 2.
        const DELTA2: f64 = 1e-12;
        let a = (0..m.len())
            .map(|i| {
                let r2 = b.iter().map(|c| c[i] * c[i]).sum::<f64>() + DELTA2;
                let coef = self.weight(m[i]).0 / (alpha - 1.0) * r2.powf(0.5 * (gamma - 2.0));
                let t = (gamma - 2.0) / r2;
                if dim == 1 {
                    [coef * (1.0 + t * b[0][i] * b[0][i]), 0.0, 0.0]
                } else {
                    [
                        coef * (1.0 + t * b[0][i] * b[0][i]),
                        coef * t * b[0][i] * b[1][i],
                        coef * (1.0 + t * b[1][i] * b[1][i]),
                    ]
                }
            })
            .collect();
        FluxHessian { grid: s.grid, a }
    }

    /// Second derivative of `J_h / h^d` in each `m_i` (the `m` block is
    /// separable).
    pub(crate) fn curvature_m(&self, m: &[f64], ws: &Workspace, cm: &mut [f64]) {
        let s = &self.spec;
        let (alpha, gamma) = (s.alpha, s.gamma);
        let floor = self.m_floor;
        let b = &ws.b;
        par::fill(cm, |i| {
            let r2: f64 = b.iter().map(|c| c[i] * c[i]).sum();
            let kinetic = if m[i] > floor { alpha * r2.powf(0.5 * gamma) / (gamma * m[i].powf(alpha + 1.0)) } else { 0.0 };
            kinetic + s.coupling.g_prime(m[i].max(floor))
        });
    }
}

/// The operator `v ↦ Σ_kl D_kᵀ (A_kl D_l v)` for a field of symmetric
/// per-node matrices `A` (stored as `[a11, a12, a22]`).
#[derive(Debug, Clone)]
pub(crate) struct FluxHessian {
    pub(crate) grid: TorusGrid,
    pub(crate) a: Vec<[f64; 3]>,
}

impl FluxHessian {
    pub(crate) fn isotropic(grid: TorusGrid, weight: f64) -> Self {
        Self { grid, a: vec![[weight, 0.0, weight]; grid.len()] }
    }

    pub(crate) fn diagonal(&self) -> Vec<f64> {
        let grid = self.grid;
        let inv144h2 = 1.0 / (144.0 * grid.h() * grid.h());
        let a = &self.a;
        // Stencils along different axes overlap only at the centre, where the
        // coefficient is zero, so off-diagonal blocks do not contribute.
        par::map_indexed(a.len(), |i| {
            let mut acc = 0.0;
            for k in 0..grid.dim() {
                for &(off, c) in &crate::grid::CENTRAL_STENCIL {
                    acc += c * c * a[grid.shift(i, k, -off)][2 * k];
                }
            }
            acc * inv144h2
        })
    }

    /// `scratch` needs `dim + 1` buffers of the grid length.
    pub(crate) fn apply(&self, v: &[f64], out: &mut [f64], scratch: &mut [Vec<f64>]) {
        let grid = self.grid;
        let dim = grid.dim();
        let (flux, tmp) = scratch.split_at_mut(dim);
        let tmp = &mut tmp[0];
        for (k, d) in flux.iter_mut().enumerate() {
            central_diff_into(&grid, v, k, d);
        }
        let a = &self.a;
        if dim == 1 {
            for (d, ai) in flux[0].iter_mut().zip(a) {
                *d *= ai[0];
            }
        } else {
            let (f0, f1) = flux.split_at_mut(1);
            for i in 0..v.len() {
                let (d0, d1) = (f0[0][i], f1[0][i]);
                f0[0][i] = a[i][0] * d0 + a[i][1] * d1;
                f1[0][i] = a[i][1] * d0 + a[i][2] * d1;
            }
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, f) in flux.iter().enumerate() {
            central_diff_into(&grid, f, k, tmp);
            for (o, x) in out.iter_mut().zip(tmp.iter()) {
                *o -= x;
            }
        }
    }
}

/// Scratch buffers reused across objective evaluations.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    pub(crate) b: Vec<Vec<f64>>,
    flux: Vec<Vec<f64>>,
    tmp: Vec<f64>,
}

/// A pair `(u, m)` in the admissible set: `u` has mean zero, `m` is a
/// nonnegative density of unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasiblePoint {
    u: GridFunction,
    m: GridFunction,
}

pub(crate) const FEASIBILITY_TOL: f64 = 1e-12;

impl FeasiblePoint {
    pub fn new(u: GridFunction, m: GridFunction) -> Result<Self> {
        u.grid().check_same(m.grid())?;
        let scale = u.max_abs().max(1.0);
        let umean = crate::grid::integrate(&u);
        if umean.abs() > FEASIBILITY_TOL * scale {
            return invalid(format!("u has mean {umean:e}, expected 0"));
        }
        let mass = crate::grid::integrate(&m);
        if (mass - 1.0).abs() > FEASIBILITY_TOL * m.max_abs().max(1.0) {
            return invalid(format!("m has mass {mass}, expected 1"));
        }
        if m.values().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return invalid("m must be finite and nonnegative");
        }
        Ok(Self { u, m })
    }

    /// `u ≡ 0`, `m ≡ 1`.
    pub fn uniform(grid: TorusGrid) -> Self {
        Self { u: GridFunction::zeros(grid), m: GridFunction::constant(grid, 1.0) }
    }

    pub(crate) fn from_parts_unchecked(u: GridFunction, m: GridFunction) -> Self {
        Self { u, m }
    }

    pub fn u(&self) -> &GridFunction {
        &self.u
    }

    pub fn m(&self) -> &GridFunction {
        &self.m
    }

    pub fn into_parts(self) -> (GridFunction, GridFunction) {
        (self.u, self.m)
    }

    pub fn grid(&self) -> &TorusGrid {
        self.u.grid()
    }
}

fn check_grid(pt: &FeasiblePoint, obj: &DiscreteObjective) -> Result<()> {
    obj.grid().check_same(pt.grid())
}

pub fn assemble_jh(pt: &FeasiblePoint, obj: &DiscreteObjective) -> Result<f64> {
    check_grid(pt, obj)?;
    let mut ws = obj.workspace();
    Ok(obj.value_raw(pt.u.values(), pt.m.values(), &mut ws))
}

/// Partial derivatives of `J_h` with respect to every node value of `u` and `m`.
pub fn grad_jh(pt: &FeasiblePoint, obj: &DiscreteObjective) -> Result<(GridFunction, GridFunction)> {
    check_grid(pt, obj)?;
    let grid = *obj.grid();
    let mut ws = obj.workspace();
    let mut gu = vec![0.0; grid.len()];
    let mut gm = vec![0.0; grid.len()];
    obj.value_grad_raw(pt.u.values(), pt.m.values(), &mut gu, &mut gm, &mut ws);
    let w = grid.cell_volume();
    gu.iter_mut().chain(gm.iter_mut()).for_each(|g| *g *= w);
    Ok((GridFunction::from_raw(grid, gu), GridFunction::from_raw(grid, gm)))
}

/// Euclidean projection of `y` onto `{x >= 0, Σ x = total}`.
pub fn project_simplex(y: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let t = (cumulative - total) / (k + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    y.iter().map(|&v| (v - tau).max(0.0)).collect()
}

/// Nearest point of `A_h`: subtract the mean of `u`, project `m` onto the
/// scaled simplex.
pub fn project_feasible(u: &GridFunction, m: &GridFunction) -> Result<FeasiblePoint> {
    u.grid().check_same(m.grid())?;
    let grid = *u.grid();
    let mean = crate::grid::integrate(u);
    let u2 = u.map(|v| v - mean);
    let m2 = project_simplex(m.values(), grid.len() as f64);
    Ok(FeasiblePoint { u: u2, m: GridFunction::from_raw(grid, m2) })
}

fn shifted_gradient_of(spec: &ProblemSpec, u: &[f64]) -> Vec<Vec<f64>> {
    let grid = spec.grid;
    (0..grid.dim())
        .map(|k| {
            let mut d = vec![0.0; u.len()];
            central_diff_into(&grid, u, k, &mut d);
            let p = spec.drift[k];
            d.iter_mut().for_each(|v| *v += p);
            d
        })
        .collect()
}

pub(crate) fn hbar_values(spec: &ProblemSpec, floor: f64, u: &[f64], m: &[f64]) -> Vec<f64> {
    let b = shifted_gradient_of(spec, u);
    let v = spec.potential.values();
    par::map_indexed(m.len(), |i| {
        let r2: f64 = b.iter().map(|c| c[i] * c[i]).sum();
        r2.powf(0.5 * spec.gamma) / (spec.gamma * m[i].max(floor).powf(spec.alpha)) + v[i] - spec.coupling.g(m[i])
    })
}

pub(crate) fn hbar_stats(field: &[f64], m: &[f64], mass_cutoff: f64) -> Result<(f64, f64)> {
    let selected: Vec<f64> = field.iter().zip(m).filter(|(_, &m)| m > mass_cutoff).map(|(&q, _)| q).collect();
    if selected.is_empty() {
        return Err(MfgError::Degenerate(format!("no node has m > {mass_cutoff:e}")));
    }
    let n = selected.len() as f64;
    let mean = selected.iter().sum::<f64>() / n;
    let var = selected.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Nodewise `|P + D^h u|^γ / (γ m^α) + V - g(m)`, which equals `H̄` wherever
/// the Hamilton-Jacobi equation holds.
pub fn hbar_field(pt: &FeasiblePoint, obj: &DiscreteObjective) -> Result<GridFunction> {
    check_grid(pt, obj)?;
    let values = hbar_values(obj.spec(), obj.m_floor, pt.u.values(), pt.m.values());
    Ok(GridFunction::from_raw(*obj.grid(), values))
}

/// Mean and standard deviation of [`hbar_field`] over nodes with `m > mass_cutoff`.
pub fn estimate_hbar(pt: &FeasiblePoint, obj: &DiscreteObjective, mass_cutoff: f64) -> Result<(f64, f64)> {
    let field = hbar_field(pt, obj)?;
    hbar_stats(field.values(), pt.m.values(), mass_cutoff)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriDiagnostics {
    /// `∫ |(P + Du)/m^ᾱ|^γ (m^ᾱ + m^{ᾱ+1})` with `ᾱ = α/(γ-1)`.
    pub congestion_energy_weighted: f64,
    /// `∫ (m - 1) g(m)`.
    pub coupling_balance: f64,
    /// `∫ g'(m) |D^h m|²`.
    pub second_order_proxy: f64,
}

pub fn apriori_diagnostics(pt: &FeasiblePoint, obj: &DiscreteObjective) -> Result<AprioriDiagnostics> {
    check_grid(pt, obj)?;
    Ok(apriori_values(obj.spec(), obj.m_floor, pt.u.values(), pt.m.values()))
}

pub(crate) fn apriori_values(s: &ProblemSpec, floor: f64, u: &[f64], m: &[f64]) -> AprioriDiagnostics {
    let grid = s.grid;
    let abar = s.alpha / (s.gamma - 1.0);
    let b = shifted_gradient_of(s, u);
    let len = m.len() as f64;
    let congestion = par::sum_indexed(m.len(), |i| {
        let r2: f64 = b.iter().map(|c| c[i] * c[i]).sum();
        if r2 == 0.0 {
            return 0.0;
        }
        let mf = m[i].max(floor);
        r2.powf(0.5 * s.gamma) * mf.powf(-abar * s.gamma) * (m[i].powf(abar) + m[i].powf(abar + 1.0))
    }) / len;
    let balance = par::sum_indexed(m.len(), |i| (m[i] - 1.0) * s.coupling.g(m[i])) / len;
    let mut dm = vec![vec![0.0; m.len()]; grid.dim()];
    for (k, d) in dm.iter_mut().enumerate() {
        central_diff_into(&grid, m, k, d);
    }
    let proxy = par::sum_indexed(m.len(), |i| {
        let r2: f64 = dm.iter().map(|c| c[i] * c[i]).sum();
        if r2 == 0.0 {
            0.0
        } else {
            s.coupling.g_prime(m[i].max(floor)) * r2
        }
    }) / len;
    AprioriDiagnostics { congestion_energy_weighted: congestion, coupling_balance: balance, second_order_proxy: proxy }
}
