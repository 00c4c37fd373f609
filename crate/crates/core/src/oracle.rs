//! Reference solutions that need no optimizer: the explicit minimizer for
//! `P = 0`, the algebraic solve at critical congestion `α = 1`, and the check
//! for classical solutions `m = 1 + V`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, MfgError, Result};
use crate::grid::{GridFunction, TorusGrid};
use crate::model::{CouplingG, PotentialFamily, ProblemSpec};
use crate::optimizer::SolveResult;
use crate::par;
use crate::variational::{apriori_values, hbar_stats, hbar_values, DEFAULT_M_FLOOR};

/// Bisection for a root of a decreasing function on `[lo, hi]`
/// (`f(lo) >= 0 >= f(hi)`), run until the bracket stops shrinking.
fn bisect_decreasing<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> (f64, f64) {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Expands `[lo, hi]` geometrically until `f(lo) >= 0 >= f(hi)` for a
/// decreasing `f`.
fn bracket_decreasing<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, what: &str) -> Result<(f64, f64)> {
    let mut width = (hi - lo).abs().max(1.0);
    for _ in 0..200 {
        let (flo, fhi) = (f(lo), f(hi));
        if flo.is_nan() || fhi.is_nan() {
            break;
        }
        if flo >= 0.0 && fhi <= 0.0 {
            return Ok((lo, hi));
        }
        if flo < 0.0 {
            lo -= width;
        }
        if fhi > 0.0 {
            hi += width;
        }
        width *= 2.0;
    }
    Err(MfgError::Numeric(format!("could not bracket {what}")))
}

fn require_zero_drift(spec: &ProblemSpec) -> Result<()> {
    if spec.drift.iter().any(|p| *p != 0.0) {
        return invalid(format!("this oracle needs P = 0, got {:?}", spec.drift));
    }
    Ok(())
}

/// The root `H̄` of `mass(H) = mean((G*)'(V - H)) - 1` for samples `v`.
fn p0_hbar(v: &[f64], coupling: &CouplingG) -> Result<f64> {
    let len = v.len() as f64;
    let excess = |h: f64| par::sum_indexed(v.len(), |i| coupling.conjugate_deriv(v[i] - h)) / len - 1.0;
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = bracket_decreasing(&excess, vmin - coupling.g(1.0), vmax, "the effective Hamiltonian")?;
    let (lo, hi) = bisect_decreasing(excess, lo, hi);
    Ok(if excess(lo).abs() <= excess(hi).abs() { lo } else { hi })
}

fn oracle_result(spec: &ProblemSpec, u: GridFunction, m: GridFunction, hbar: f64, objective: f64) -> SolveResult {
    let field = hbar_values(spec, DEFAULT_M_FLOOR, u.values(), m.values());
    let hbar_std = hbar_stats(&field, m.values(), 1e-4).map(|(_, s)| s).unwrap_or(0.0);
    let diagnostics = apriori_values(spec, DEFAULT_M_FLOOR, u.values(), m.values());
    SolveResult {
        u,
        m,
        hbar,
        hbar_std,
        objective,
        iters: 0,
        converged: true,
        gradmap: 0.0,
        diagnostics,
        trace: Vec::new(),
    }
}

/// Explicit minimizer for `P = 0`: `u = 0`, `m = (G*)'(V - H̄)` with `H̄`
/// fixed by unit mass.
pub fn solve_p0(spec: &ProblemSpec) -> Result<SolveResult> {
    require_zero_drift(spec)?;
    let v = spec.potential.values();
    let hbar = p0_hbar(v, &spec.coupling)?;
    let m = GridFunction::from_raw(spec.grid, par::map_indexed(v.len(), |i| spec.coupling.conjugate_deriv(v[i] - hbar)));
    let mv = m.values();
    let objective = par::sum_indexed(mv.len(), |i| spec.coupling.big(mv[i]) - v[i] * mv[i]) / mv.len() as f64;
    Ok(oracle_result(spec, GridFunction::zeros(spec.grid), m, hbar, objective))
}

/// `P = 0` reference for the continuous problem, from a fine quadrature of the
/// mass constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousReference {
    pub hbar: f64,
    pub quadrature_points: usize,
}

impl ContinuousReference {
    pub fn new(family: &PotentialFamily, dim: usize, coupling: &CouplingG, points_per_axis: usize) -> Result<Self> {
        if matches!(family, PotentialFamily::CustomSamples { .. }) {
            return invalid("the continuous reference needs an analytic potential");
        }
        let fine = TorusGrid::new(dim, points_per_axis)?;
        let v = family.sample(fine)?;
        let hbar = p0_hbar(v.values(), coupling)?;
        Ok(Self { hbar, quadrature_points: points_per_axis })
    }

    /// Default resolution: `2^16` points in 1D, `1024²` in 2D.
    pub fn standard(family: &PotentialFamily, dim: usize, coupling: &CouplingG) -> Result<Self> {
        Self::new(family, dim, coupling, if dim == 1 { 1 << 16 } else { 1024 })
    }

    /// `m̄ = (G*)'(V - H̄)` at the nodes of `grid`.
    pub fn density_on(&self, family: &PotentialFamily, coupling: &CouplingG, grid: TorusGrid) -> Result<GridFunction> {
        let v = family.sample(grid)?;
        Ok(v.map(|x| coupling.conjugate_deriv(x - self.hbar)))
    }
}

/// Unique positive root of `|P|^γ/(γ m) - g(m) = rhs`; the left side falls
/// from `+∞` to `-∞`.
fn critical_node(kin: f64, coupling: &CouplingG, rhs: f64) -> f64 {
    let f = |m: f64| kin / m - coupling.g(m) - rhs;
    let mut lo = 1.0;
    while f(lo) < 0.0 {
        lo *= 0.5;
    }
    let mut hi = lo.max(1.0);
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    let (lo, hi) = bisect_decreasing(f, lo, hi);
    let mut m = 0.5 * (lo + hi);
    for _ in 0..3 {
        let step = f(m) / (-kin / (m * m) - coupling.g_prime(m));
        let next = m - step;
        if next.is_finite() && next > 0.0 && f(next).abs() < f(m).abs() {
            m = next;
        } else {
            break;
        }
    }
    m
}

/// Critical congestion `α = 1`: `u` constant and `m` solving
/// `|P|^γ/(γ m) - g(m) = H̄ - V` nodewise. The objective reported is the
/// `α → 1` analogue `∫ -|P|^γ log(m)/γ - V m + G(m)`.
pub fn solve_critical(spec: &ProblemSpec) -> Result<SolveResult> {
    if spec.alpha != 1.0 {
        return invalid(format!("critical congestion needs alpha = 1, got {}", spec.alpha));
    }
    let pn = spec.drift_norm();
    if pn == 0.0 {
        return invalid("critical congestion needs P != 0");
    }
    let kin = pn.powf(spec.gamma) / spec.gamma;
    let v = spec.potential.values();
    let len = v.len() as f64;
    let density = |h: f64| par::map_indexed(v.len(), |i| critical_node(kin, &spec.coupling, h - v[i]));
    let excess = |h: f64| par::sum(&density(h)) / len - 1.0;
    let (lo, hi) = bracket_decreasing(&excess, -1.0, 1.0, "the critical effective Hamiltonian")?;
    let (lo, hi) = bisect_decreasing(excess, lo, hi);
    let hbar = if excess(lo).abs() <= excess(hi).abs() { lo } else { hi };
    let m = GridFunction::from_raw(spec.grid, density(hbar));
    let mv = m.values();
    let objective =
        par::sum_indexed(mv.len(), |i| -kin * mv[i].ln() - v[i] * mv[i] + spec.coupling.big(mv[i])) / len;
    Ok(oracle_result(spec, GridFunction::zeros(spec.grid), m, hbar, objective))
}

/// Nodewise `|P|^γ/(γ m) - g(m) - (H̄ - V)` for a critical solution.
pub fn critical_residual(spec: &ProblemSpec, m: &GridFunction, hbar: f64) -> GridFunction {
    let kin = spec.drift_norm().powf(spec.gamma) / spec.gamma;
    let v = spec.potential.values();
    let mv = m.values();
    GridFunction::from_raw(
        spec.grid,
        par::map_indexed(mv.len(), |i| kin / mv[i] - spec.coupling.g(mv[i]) - (hbar - v[i])),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalCheck {
    pub m_formula: GridFunction,
    pub min_value: f64,
    pub classical_exists: bool,
}

/// For `P = 0`, `γ = 2`, `g(m) = m` a classical solution must be
/// `m = 1 + V - ∫V`; it exists exactly when that stays positive.
pub fn classical_existence_check(spec: &ProblemSpec) -> Result<ClassicalCheck> {
    require_zero_drift(spec)?;
    if spec.gamma != 2.0 {
        return invalid(format!("the classical check needs gamma = 2, got {}", spec.gamma));
    }
    let linear = matches!(spec.coupling.terms(), [t] if t.theta == 2.0 && t.c == 0.5);
    if !linear {
        return invalid("the classical check needs g(m) = m, i.e. G = m²/2");
    }
    let mean = crate::grid::integrate(&spec.potential);
    let m = spec.potential.map(|v| 1.0 + v - mean);
    let min_value = m.min();
    // Roundoff in sampling the cosine must not manufacture a positive minimum.
    let classical_exists = min_value > 1e-12;
    Ok(ClassicalCheck { m_formula: m, min_value, classical_exists })
}
