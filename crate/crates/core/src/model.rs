//! Problem descriptions: exponents, drift, the potential catalog, the convex
//! coupling `G` with its derivative and conjugate, and the extended congestion
//! integrand together with its recession function.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::grid::{GridFunction, TorusGrid};

/// One term `c z^θ` of a coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub c: f64,
    pub theta: f64,
}

/// Convex coupling `G(z) = Σ c_k z^{θ_k}` with `c_k > 0`, `θ_k > 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PowerTerm>", into = "Vec<PowerTerm>")]
pub struct CouplingG {
    terms: Vec<PowerTerm>,
}

impl TryFrom<Vec<PowerTerm>> for CouplingG {
    type Error = crate::MfgError;

    fn try_from(terms: Vec<PowerTerm>) -> Result<Self> {
        CouplingG::new(terms)
    }
}

impl From<CouplingG> for Vec<PowerTerm> {
    fn from(g: CouplingG) -> Self {
        g.terms
    }
}

impl CouplingG {
    pub fn new(terms: Vec<PowerTerm>) -> Result<Self> {
        if terms.is_empty() {
            return invalid("coupling needs at least one power term");
        }
        for t in &terms {
            if !(t.c > 0.0 && t.c.is_finite()) || !(t.theta > 1.0 && t.theta.is_finite()) {
                return invalid(format!(
                    "coupling term {} z^{} violates c > 0, theta > 1",
                    t.c, t.theta
                ));
            }
        }
        Ok(Self { terms })
    }

    /// `c z^θ`.
    pub fn power(c: f64, theta: f64) -> Result<Self> {
        Self::new(vec![PowerTerm { c, theta }])
    }

    /// `G(m) = m²/2`.
    pub fn quadratic() -> Self {
        Self { terms: vec![PowerTerm { c: 0.5, theta: 2.0 }] }
    }

    pub fn terms(&self) -> &[PowerTerm] {
        &self.terms
    }

    /// The same coupling multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.terms.iter().map(|t| PowerTerm { c: t.c * factor, theta: t.theta }).collect())
    }

    pub fn eval_g_big(&self, z: f64) -> Result<f64> {
        if z < 0.0 || z.is_nan() {
            return invalid(format!("G is defined on z >= 0, got {z}"));
        }
        Ok(self.big(z))
    }

    pub fn eval_g(&self, z: f64) -> Result<f64> {
        if z < 0.0 || z.is_nan() {
            return invalid(format!("g is defined on z >= 0, got {z}"));
        }
        Ok(self.g(z))
    }

    #[inline]
    pub(crate) fn big(&self, z: f64) -> f64 {
        self.terms.iter().map(|t| t.c * z.powf(t.theta)).sum()
    }

    /// `g = G'`. At zero this is the right limit, which is 0 for `θ > 1`.
    #[inline]
    pub(crate) fn g(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        self.terms.iter().map(|t| t.c * t.theta * z.powf(t.theta - 1.0)).sum()
    }

    /// `g'`, infinite at zero when some `θ < 2`.
    #[inline]
    pub(crate) fn g_prime(&self, z: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let e = t.theta - 2.0;
                if e == 0.0 {
                    t.c * t.theta * (t.theta - 1.0)
                } else if z <= 0.0 {
                    if e > 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    t.c * t.theta * (t.theta - 1.0) * z.powf(e)
                }
            })
            .sum()
    }

    /// `(G*)'(q)`: the `m >= 0` with `g(m) = q`, or 0 when `q <= g(0+) = 0`.
    pub fn conjugate_deriv(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        if let [t] = self.terms.as_slice() {
            return (q / (t.c * t.theta)).powf(1.0 / (t.theta - 1.0));
        }
        let kmin = self.terms.iter().map(|t| t.c * t.theta).fold(f64::INFINITY, f64::min);
        let emin = self.terms.iter().map(|t| t.theta).fold(f64::INFINITY, f64::min);
        let mut hi = (q / kmin).powf(1.0 / (emin - 1.0)).max(1.0);
        while self.g(hi) < q {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        // Bisect to a relative width of 1e-15, well under the 1e-12 contract.
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.g(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Named potentials used by the experiments. All arguments are in torus units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PotentialFamily {
    /// `A cos(2π(x - shift))`, independent of `y`.
    CosineShift { amplitude: f64, shift: f64 },
    /// `A sin(2π(x + x_shift)) cos(2π(y + y_shift))`; in 1D the cosine factor is dropped.
    SineCosineProduct { amplitude: f64, x_shift: f64, y_shift: f64 },
    /// `A exp(-(x - center)² / width)` evaluated on `[0, 1)`, independent of `y`.
    GaussianBump { amplitude: f64, center: f64, width: f64 },
    /// `A exp(-sin²(2π(x + x_shift))) cos(2π(y + y_shift))`.
    ExpSinCos { amplitude: f64, x_shift: f64, y_shift: f64 },
    /// Explicit node values in storage order.
    CustomSamples { values: Vec<f64> },
}

impl PotentialFamily {
    /// Pointwise value, `None` for sampled data.
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        let tp = 2.0 * PI;
        let y = x.get(1).copied();
        Some(match self {
            Self::CosineShift { amplitude, shift } => amplitude * (tp * (x[0] - shift)).cos(),
            Self::SineCosineProduct { amplitude, x_shift, y_shift } => {
                let sx = (tp * (x[0] + x_shift)).sin();
                amplitude * sx * y.map_or(1.0, |y| (tp * (y + y_shift)).cos())
            }
            Self::GaussianBump { amplitude, center, width } => {
                amplitude * (-(x[0] - center).powi(2) / width).exp()
            }
            Self::ExpSinCos { amplitude, x_shift, y_shift } => {
                let s = (tp * (x[0] + x_shift)).sin();
                amplitude * (-s * s).exp() * y.map_or(1.0, |y| (tp * (y + y_shift)).cos())
            }
            Self::CustomSamples { .. } => return None,
        })
    }

    pub fn sample(&self, grid: TorusGrid) -> Result<GridFunction> {
        let v = match self {
            Self::CustomSamples { values } => GridFunction::new(grid, values.clone())?,
            f => GridFunction::from_fn(grid, |x| f.eval(x).expect("analytic family")),
        };
        if v.values().iter().any(|x| !x.is_finite()) {
            return invalid("potential has non-finite samples");
        }
        Ok(v)
    }
}

/// Everything needed to set up a discrete problem on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub grid: TorusGrid,
    pub alpha: f64,
    pub gamma: f64,
    pub drift: Vec<f64>,
    pub potential: GridFunction,
    pub coupling: CouplingG,
}

impl ProblemSpec {
    pub fn new(
        grid: TorusGrid,
        alpha: f64,
        gamma: f64,
        drift: Vec<f64>,
        potential: GridFunction,
        coupling: CouplingG,
    ) -> Result<Self> {
        if !(gamma > 1.0 && gamma.is_finite()) {
            return invalid(format!("gamma must exceed 1, got {gamma}"));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return invalid(format!("alpha must be positive, got {alpha}"));
        }
        if drift.len() != grid.dim() {
            return invalid(format!("drift has {} components, grid is {}D", drift.len(), grid.dim()));
        }
        grid.check_same(potential.grid())?;
        Ok(Self { grid, alpha, gamma, drift, potential, coupling })
    }

    /// Builds a spec by sampling a catalog potential.
    pub fn from_family(
        grid: TorusGrid,
        alpha: f64,
        gamma: f64,
        drift: Vec<f64>,
        family: &PotentialFamily,
        coupling: CouplingG,
    ) -> Result<Self> {
        let v = family.sample(grid)?;
        Self::new(grid, alpha, gamma, drift, v, coupling)
    }

    /// The variational range `1 < α <= γ`.
    pub fn require_variational(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha <= self.gamma) {
            return invalid(format!(
                "the variational path needs 1 < alpha <= gamma, got alpha={} gamma={}",
                self.alpha, self.gamma
            ));
        }
        Ok(())
    }

    pub fn drift_norm(&self) -> f64 {
        self.drift.iter().map(|p| p * p).sum::<f64>().sqrt()
    }

    pub fn with_potential(&self, potential: GridFunction) -> Result<Self> {
        Self::new(self.grid, self.alpha, self.gamma, self.drift.clone(), potential, self.coupling.clone())
    }
}

fn shifted_norm(p: &[f64], drift: &[f64]) -> f64 {
    p.iter().zip(drift).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt()
}

/// The congestion integrand extended to `m = 0`:
/// `|P+p|^γ / (γ(α-1) m^{α-1})` for `m > 0`, and at `m = 0` either 0 (when
/// `p = -P` exactly) or `+∞`.
pub fn barf(p: &[f64], m: f64, drift: &[f64], alpha: f64, gamma: f64) -> f64 {
    debug_assert!(alpha > 1.0 && alpha <= gamma);
    let r = shifted_norm(p, drift);
    if m > 0.0 {
        r.powf(gamma) / (gamma * (alpha - 1.0) * m.powf(alpha - 1.0))
    } else if p.iter().zip(drift).all(|(a, b)| *a == -*b) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Recession function of [`barf`]: `|p|^γ / (γ(γ-1) m^{γ-1})`, extended by 0
/// at the origin and `+∞` elsewhere on `m = 0`.
pub fn barf_recession(p: &[f64], m: f64, gamma: f64) -> f64 {
    let r = p.iter().map(|a| a * a).sum::<f64>().sqrt();
    if m > 0.0 {
        r.powf(gamma) / (gamma * (gamma - 1.0) * m.powf(gamma - 1.0))
    } else if r == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}
