//! Periodic grids on the unit torus, grid functions, and the finite-difference
//! operators every solver in the crate is built from.
//!
//! Values are stored row-major: in two dimensions node `(i, j)` (with `x = i h`,
//! `y = j h`) lives at `i * n + j`. All neighbor lookups wrap modulo `n`.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::par;

/// Coefficients of the five-point central first derivative, paired with their
/// offsets; the sum is divided by `12 h`.
pub(crate) const CENTRAL_STENCIL: [(isize, f64); 4] = [(2, -1.0), (1, 8.0), (-1, -8.0), (-2, 1.0)];

pub const MIN_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return invalid(format!("dimension must be 1 or 2, got {dim}"));
        }
        if n < MIN_POINTS {
            return invalid(format!("need at least {MIN_POINTS} points per axis, got {n}"));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of nodes, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub(crate) fn stride(&self, axis: usize) -> usize {
        if self.dim == 2 && axis == 0 {
            self.n
        } else {
            1
        }
    }

    /// Index of the node reached from `idx` by moving `offset` steps along `axis`.
    #[inline]
    pub fn shift(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let stride = self.stride(axis);
        let n = self.n as isize;
        let c = ((idx / stride) % self.n) as isize;
        let target = (c + offset).rem_euclid(n);
        (idx as isize + (target - c) * stride as isize) as usize
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        match self.dim {
            1 => vec![idx],
            _ => vec![idx / self.n, idx % self.n],
        }
    }

    /// Physical position of a node in `[0, 1)^dim`.
    pub fn position(&self, idx: usize) -> Vec<f64> {
        let h = self.h();
        self.coords(idx).into_iter().map(|c| c as f64 * h).collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        match self.dim {
            1 => coords[0] % self.n,
            _ => (coords[0] % self.n) * self.n + coords[1] % self.n,
        }
    }

    pub(crate) fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            return invalid(format!(
                "grid mismatch: {}D n={} vs {}D n={}",
                self.dim, self.n, other.dim, other.n
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!(
                "expected {} values for a {}D grid with n={}, got {}",
                grid.len(),
                grid.dim(),
                grid.n(),
                values.len()
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at every node position.
    pub fn from_fn<F>(grid: TorusGrid, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        let values = par::map_indexed(grid.len(), |i| f(&grid.position(i)));
        Self { grid, values }
    }

    pub(crate) fn from_raw(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Periodic access by (possibly out-of-range) signed coordinates.
    pub fn at(&self, coords: &[isize]) -> f64 {
        let n = self.grid.n as isize;
        let wrapped: Vec<usize> = coords.iter().map(|c| c.rem_euclid(n) as usize).collect();
        self.values[self.grid.index(&wrapped)]
    }

    pub fn map<F>(&self, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Sync + Send,
    {
        let v = &self.values;
        Self { grid: self.grid, values: par::map_indexed(v.len(), |i| f(v[i])) }
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        let (a, b) = (&self.values, &other.values);
        par::max_abs_indexed(a.len(), |i| a[i] - b[i])
    }

    pub fn max_abs(&self) -> f64 {
        let a = &self.values;
        par::max_abs_indexed(a.len(), |i| a[i])
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        integrate(self)
    }

    /// Shifts node indices by `offset` along `axis`: `out[i] = self[i + offset]`.
    pub fn translate(&self, axis: usize, offset: isize) -> Self {
        let g = self.grid;
        let v = &self.values;
        Self { grid: g, values: par::map_indexed(v.len(), |i| v[g.shift(i, axis, offset)]) }
    }

    /// One `x[,y],value` row per node in storage order, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 48);
        out.push_str(if self.grid.dim == 1 { "x,value\n" } else { "x,y,value\n" });
        for (i, v) in self.values.iter().enumerate() {
            for x in self.grid.position(i) {
                let _ = write!(out, "{x:.16e},");
            }
            let _ = writeln!(out, "{v:.16e}");
        }
        out
    }

    /// Gnuplot-friendly whitespace table; 2D output has blank lines between
    /// scan rows so `splot` draws a surface.
    pub fn to_dat(&self) -> String {
        let mut out = String::new();
        let n = self.grid.n;
        for (i, v) in self.values.iter().enumerate() {
            let pos = self.grid.position(i);
            for x in &pos {
                let _ = write!(out, "{x:.16e} ");
            }
            let _ = writeln!(out, "{v:.16e}");
            if self.grid.dim == 2 && (i + 1) % n == 0 {
                out.push('\n');
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "dim": self.grid.dim, "n": self.grid.n, "values": self.values })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            dim: usize,
            n: usize,
            values: Vec<f64>,
        }
        let raw: Raw = serde_json::from_value(value.clone())?;
        GridFunction::new(TorusGrid::new(raw.dim, raw.n)?, raw.values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridVectorField {
    grid: TorusGrid,
    components: Vec<GridFunction>,
}

impl GridVectorField {
    pub fn new(components: Vec<GridFunction>) -> Result<Self> {
        let Some(first) = components.first() else {
            return invalid("vector field needs at least one component");
        };
        let grid = *first.grid();
        for c in &components {
            grid.check_same(c.grid())?;
        }
        if components.len() != grid.dim() {
            return invalid(format!(
                "a {}D field needs {} components, got {}",
                grid.dim(),
                grid.dim(),
                components.len()
            ));
        }
        Ok(Self { grid, components })
    }

    pub fn constant(grid: TorusGrid, v: &[f64]) -> Result<Self> {
        if v.len() != grid.dim() {
            return invalid("constant vector has the wrong dimension");
        }
        Self::new(v.iter().map(|&c| GridFunction::constant(grid, c)).collect())
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn component(&self, k: usize) -> &GridFunction {
        &self.components[k]
    }

    pub fn components(&self) -> &[GridFunction] {
        &self.components
    }
}

/// Raw-slice five-point derivative used by the hot loops.
pub(crate) fn central_diff_into(grid: &TorusGrid, f: &[f64], axis: usize, out: &mut [f64]) {
    let inv = 1.0 / (12.0 * grid.h());
    par::fill(out, |i| {
        let d1 = f[grid.shift(i, axis, 1)] - f[grid.shift(i, axis, -1)];
        let d2 = f[grid.shift(i, axis, 2)] - f[grid.shift(i, axis, -2)];
        (8.0 * d1 - d2) * inv
    });
}

/// Five-point central difference along `axis`:
/// `(-f[i+2] + 8 f[i+1] - 8 f[i-1] + f[i-2]) / (12 h)`.
pub fn central_diff(f: &GridFunction, axis: usize) -> Result<GridFunction> {
    let grid = *f.grid();
    if axis >= grid.dim() {
        return invalid(format!("axis {axis} out of range for a {}D grid", grid.dim()));
    }
    let mut out = vec![0.0; grid.len()];
    central_diff_into(&grid, f.values(), axis, &mut out);
    Ok(GridFunction::from_raw(grid, out))
}

pub fn gradient_central(f: &GridFunction) -> GridVectorField {
    let comps = (0..f.grid().dim())
        .map(|k| central_diff(f, k).expect("axis is in range"))
        .collect();
    GridVectorField { grid: *f.grid(), components: comps }
}

pub fn divergence_central(v: &GridVectorField) -> GridFunction {
    let grid = *v.grid();
    let mut acc = vec![0.0; grid.len()];
    let mut tmp = vec![0.0; grid.len()];
    for (k, comp) in v.components().iter().enumerate() {
        central_diff_into(&grid, comp.values(), k, &mut tmp);
        for (a, t) in acc.iter_mut().zip(&tmp) {
            *a += t;
        }
    }
    GridFunction::from_raw(grid, acc)
}

/// `Σ_k D_k D_k f`, the Laplacian built from the five-point first derivative.
pub fn laplacian_central(f: &GridFunction) -> GridFunction {
    let grad = gradient_central(f);
    divergence_central(&grad)
}

/// Second-order central divergence `(v[i+1] - v[i-1]) / 2h`. It is a different
/// consistent discretization from [`divergence_central`], so it can measure how
/// far a discrete flux is from being divergence-free without being annihilated
/// by the optimality conditions of the five-point objective.
pub fn divergence_second_order(v: &GridVectorField) -> GridFunction {
    let grid = *v.grid();
    let inv = 0.5 / grid.h();
    let comps = v.components();
    let values = par::map_indexed(grid.len(), |i| {
        comps
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let vals = c.values();
                (vals[grid.shift(i, k, 1)] - vals[grid.shift(i, k, -1)]) * inv
            })
            .sum()
    });
    GridFunction::from_raw(grid, values)
}

/// Per-node value of the monotone upwind approximation of `|P + Du|^γ`:
/// `Σ_k max(-p_k - D⁺_k u[i], 0)^γ + max(p_k + D⁺_k u[i - e_k], 0)^γ` with
/// forward differences `D⁺_k u[i] = (u[i + e_k] - u[i]) / h`.
#[inline]
pub(crate) fn upwind_node(grid: &TorusGrid, u: &[f64], drift: &[f64], gamma: f64, i: usize) -> f64 {
    let inv_h = 1.0 / grid.h();
    let ui = u[i];
    let mut acc = 0.0;
    for (k, &p) in drift.iter().enumerate() {
        let fwd = (u[grid.shift(i, k, 1)] - ui) * inv_h;
        let bwd = (ui - u[grid.shift(i, k, -1)]) * inv_h;
        let a = (-p - fwd).max(0.0);
        let b = (p + bwd).max(0.0);
        acc += a.powf(gamma) + b.powf(gamma);
    }
    acc
}

/// Per-axis monotone upwind approximation of `|P + Du|^γ`:
/// `Σ_k max(-P_k - D⁺_k u, 0)^γ + max(P_k + D⁻_k u, 0)^γ`. For constant `u`
/// this is `Σ_k |P_k|^γ`; in 2D that equals `|P|^γ` only for `γ = 2` or an
/// axis-aligned drift.
pub fn upwind_grad_power(u: &GridFunction, drift: &[f64], gamma: f64) -> Result<GridFunction> {
    let grid = *u.grid();
    if drift.len() != grid.dim() {
        return invalid(format!("drift has {} components, grid is {}D", drift.len(), grid.dim()));
    }
    if gamma <= 1.0 {
        return invalid(format!("gamma must exceed 1, got {gamma}"));
    }
    let uv = u.values();
    let values = par::map_indexed(grid.len(), |i| upwind_node(&grid, uv, drift, gamma, i));
    Ok(GridFunction::from_raw(grid, values))
}

/// `h^dim Σ f`, evaluated as `Σ f / n^dim` so that the constant one integrates
/// to exactly one.
pub fn integrate(f: &GridFunction) -> f64 {
    par::sum(f.values()) / f.grid().len() as f64
}

/// Removes the components of `u` in the kernel of the five-point stencil:
/// constants and, for even `n`, the alternating modes `(-1)^i` on each axis.
pub fn remove_stencil_kernel(u: &mut GridFunction) {
    let grid = *u.grid();
    remove_stencil_kernel_slice(&grid, u.values_mut());
}

pub(crate) fn remove_stencil_kernel_slice(grid: &TorusGrid, u: &mut [f64]) {
    let n = grid.n();
    let sign = |c: usize| if c % 2 == 0 { 1.0 } else { -1.0 };
    let mode = |k: usize, i: usize| -> f64 {
        match (grid.dim(), k) {
            (_, 0) => 1.0,
            (1, _) => sign(i),
            (_, 1) => sign(i / n),
            (_, 2) => sign(i % n),
            _ => sign(i / n) * sign(i % n),
        }
    };
    let count = match (n % 2 == 0, grid.dim()) {
        (false, _) => 1,
        (true, 1) => 2,
        (true, _) => 4,
    };
    // The modes are mutually orthogonal with squared norm equal to the node count.
    let len = u.len() as f64;
    let mut coef = [0.0; 4];
    for (i, v) in u.iter().enumerate() {
        for (k, c) in coef.iter_mut().enumerate().take(count) {
            *c += v * mode(k, i);
        }
    }
    for (i, v) in u.iter_mut().enumerate() {
        for (k, c) in coef.iter().enumerate().take(count) {
            *v -= c / len * mode(k, i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_fn(grid: TorusGrid, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        GridFunction::new(grid, v).unwrap()
    }

    #[test]
    fn rejects_small_grids_and_bad_dims() {
        assert!(TorusGrid::new(1, 4).is_err());
        assert!(TorusGrid::new(3, 10).is_err());
        assert!(TorusGrid::new(2, 5).is_ok());
    }

    #[test]
    fn periodic_access_wraps() {
        let g = TorusGrid::new(2, 6).unwrap();
        let f = random_fn(g, 1);
        assert_eq!(f.at(&[1, 2]), f.at(&[7, -4]));
        assert_eq!(g.shift(g.index(&[5, 0]), 0, 1), g.index(&[0, 0]));
        assert_eq!(g.shift(g.index(&[0, 0]), 1, -2), g.index(&[0, 4]));
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let g = TorusGrid::new(2, 8).unwrap();
        let d = central_diff(&GridFunction::constant(g, 3.5), 1).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn axis_out_of_range_is_rejected() {
        let g = TorusGrid::new(1, 8).unwrap();
        assert!(central_diff(&GridFunction::zeros(g), 1).is_err());
    }

    fn sine_error(n: usize) -> f64 {
        let g = TorusGrid::new(1, n).unwrap();
        let f = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let exact = GridFunction::from_fn(g, |x| 2.0 * PI * (2.0 * PI * x[0]).cos());
        central_diff(&f, 0).unwrap().max_abs_diff(&exact)
    }

    #[test]
    fn central_diff_is_fourth_order() {
        let e: Vec<f64> = [32, 64, 128].iter().map(|&n| sine_error(n)).collect();
        for w in e.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 3.8, "observed order {order}");
        }
        assert!(e[1] <= 1e-4);
    }

    #[test]
    fn summation_by_parts_is_exact() {
        let g = TorusGrid::new(1, 16).unwrap();
        let (f, q) = (random_fn(g, 2), random_fn(g, 3));
        let df = central_diff(&f, 0).unwrap();
        let dq = central_diff(&q, 0).unwrap();
        let lhs: f64 = q.values().iter().zip(df.values()).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.values().iter().zip(dq.values()).map(|(a, b)| a * b).sum();
        assert!((lhs + rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn gradient_components_match_axis_derivatives() {
        let g = TorusGrid::new(2, 9).unwrap();
        let f = random_fn(g, 4);
        let grad = gradient_central(&f);
        for k in 0..2 {
            assert_eq!(grad.component(k), &central_diff(&f, k).unwrap());
        }
        let s = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        assert!(gradient_central(&s).component(1).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_of_gradient_converges_to_laplacian() {
        let err = |n| {
            let g = TorusGrid::new(1, n).unwrap();
            let f = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).sin());
            let exact = GridFunction::from_fn(g, |x| -(2.0 * PI).powi(2) * (2.0 * PI * x[0]).sin());
            divergence_central(&gradient_central(&f)).max_abs_diff(&exact)
        };
        let order = (err(32) / err(64)).log2();
        assert!(order > 3.7, "order {order}");
    }

    #[test]
    fn divergence_integrates_to_zero_and_kills_constants() {
        let g = TorusGrid::new(2, 7).unwrap();
        let v = GridVectorField::new(vec![random_fn(g, 5), random_fn(g, 6)]).unwrap();
        assert!(integrate(&divergence_central(&v)).abs() < 1e-12);
        let c = GridVectorField::constant(g, &[1.0, -2.0]).unwrap();
        assert!(divergence_central(&c).max_abs() == 0.0);
    }

    #[test]
    fn upwind_on_constants() {
        let g = TorusGrid::new(2, 6).unwrap();
        let u = GridFunction::constant(g, 0.7);
        let out = upwind_grad_power(&u, &[1.5, -2.0], 2.5).unwrap();
        let expected = 1.5f64.powf(2.5) + 2.0f64.powf(2.5);
        assert!(out.values().iter().all(|&v| (v - expected).abs() < 1e-14));
        let zero = upwind_grad_power(&u, &[0.0, 0.0], 2.5).unwrap();
        assert!(zero.max_abs() == 0.0);
    }

    #[test]
    fn upwind_is_first_order_for_quadratic_power() {
        let err = |n| {
            let g = TorusGrid::new(1, n).unwrap();
            let u = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).sin() / (2.0 * PI));
            let exact = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).cos().powi(2));
            upwind_grad_power(&u, &[0.0], 2.0).unwrap().max_abs_diff(&exact)
        };
        let (e64, e128, e256) = (err(64), err(128), err(256));
        assert!(e128 <= 8.0 / 128.0, "{e128}");
        let order = (e64 / e256).log2() / 2.0;
        assert!((order - 1.0).abs() <= 0.3, "order {order}");
    }

    #[test]
    fn integrate_constant_and_cosines() {
        for n in [5, 7, 49, 200] {
            let g = TorusGrid::new(1, n).unwrap();
            assert_eq!(integrate(&GridFunction::constant(g, 1.0)), 1.0);
            let c = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).cos());
            assert!(integrate(&c).abs() < 1e-15);
        }
        let g = TorusGrid::new(1, 200).unwrap();
        let v = GridFunction::from_fn(g, |x| 10.0 * (2.0 * PI * (x[0] - 0.25)).cos());
        assert!(integrate(&v).abs() < 1e-12);
    }

    #[test]
    fn kernel_removal_leaves_nonzero_gradient_only() {
        let g = TorusGrid::new(2, 8).unwrap();
        let mut f = random_fn(g, 9);
        let before = gradient_central(&f);
        remove_stencil_kernel(&mut f);
        let after = gradient_central(&f);
        assert!(integrate(&f).abs() < 1e-15);
        for k in 0..2 {
            assert!(before.component(k).max_abs_diff(after.component(k)) < 1e-12);
        }
    }

    #[test]
    fn csv_and_json_layout() {
        let g = TorusGrid::new(2, 5).unwrap();
        let f = GridFunction::from_fn(g, |x| x[0] + 10.0 * x[1]);
        let csv = f.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x,y,value"));
        let second: Vec<f64> = lines.nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(second, vec![0.0, 0.2, 2.0]);
        let back = GridFunction::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
    }
}
