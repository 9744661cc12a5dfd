//! Drift fields `b_k(t, x, μ)` with declared bounds.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::spectrum::{holder_envelope, HurstSpectrum, Regime};

/// Statistics of the current law that a drift reads. Built once per node.
#[derive(Debug, Clone, PartialEq)]
pub struct LawSummary {
    pub mean: Vec<f64>,
}

impl LawSummary {
    pub fn of(law: &EmpiricalMeasure) -> Self {
        Self { mean: law.mean() }
    }
}

pub trait DriftField: Send + Sync {
    fn depends_on_law(&self) -> bool;

    fn summarize(&self, law: &EmpiricalMeasure) -> LawSummary {
        LawSummary::of(law)
    }

    /// Unclamped `b_k(t, x, μ)`.
    fn component(&self, k: usize, t: f64, x: &[f64], law: &LawSummary) -> f64;
}

pub struct Zero;

impl DriftField for Zero {
    fn depends_on_law(&self) -> bool {
        false
    }

    fn component(&self, _: usize, _: f64, _: &[f64], _: &LawSummary) -> f64 {
        0.0
    }
}

pub struct Constant(pub Vec<f64>);

impl DriftField for Constant {
    fn depends_on_law(&self) -> bool {
        false
    }

    fn component(&self, k: usize, _: f64, _: &[f64], _: &LawSummary) -> f64 {
        self.0[k]
    }
}

/// `b_k = -theta (x_k - coupling * m_k)`; `coupling = 0` is plain OU.
pub struct MeanFieldOu {
    pub theta: f64,
    pub coupling: f64,
}

impl DriftField for MeanFieldOu {
    fn depends_on_law(&self) -> bool {
        self.coupling != 0.0
    }

    fn component(&self, k: usize, _: f64, x: &[f64], law: &LawSummary) -> f64 {
        -self.theta * (x[k] - self.coupling * law.mean[k])
    }
}

/// `b_k = a_k tanh(x_k - coupling * m_k)`.
pub struct TanhMode {
    pub amplitude: Vec<f64>,
    pub coupling: f64,
}

impl DriftField for TanhMode {
    fn depends_on_law(&self) -> bool {
        self.coupling != 0.0
    }

    fn component(&self, k: usize, _: f64, x: &[f64], law: &LawSummary) -> f64 {
        self.amplitude[k] * (x[k] - self.coupling * law.mean[k]).tanh()
    }
}

/// Gridded drift: piecewise constant in time (value at the last grid time
/// `<= t`), bilinear in the mode's own coordinate `x_k` and the law mean `m_k`,
/// clamped at the grid edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomTable {
    pub times: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub m_grid: Vec<f64>,
    /// `values[time][mode][x][m]`, flattened row-major.
    pub values: Vec<f64>,
    pub modes: usize,
}

fn bracket(grid: &[f64], v: f64) -> (usize, f64) {
    if grid.len() == 1 || v <= grid[0] {
        return (0, 0.0);
    }
    let last = grid.len() - 1;
    if v >= grid[last] {
        return (last - 1, 1.0);
    }
    let j = grid.partition_point(|g| *g <= v) - 1;
    (j, (v - grid[j]) / (grid[j + 1] - grid[j]))
}

impl CustomTable {
    pub fn validate(&self) -> Result<()> {
        let sorted = |g: &[f64]| !g.is_empty() && g.windows(2).all(|w| w[0] < w[1]);
        if !sorted(&self.times) || !sorted(&self.x_grid) || !sorted(&self.m_grid) {
            return Err(Error::domain("custom table grids must be nonempty and increasing"));
        }
        let need = self.times.len() * self.modes * self.x_grid.len() * self.m_grid.len();
        if self.values.len() != need {
            return Err(Error::domain(format!(
                "custom table needs {need} values, got {}",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("custom table values must be finite"));
        }
        Ok(())
    }

    fn at(&self, ti: usize, k: usize, i: usize, j: usize) -> f64 {
        let (nx, nm) = (self.x_grid.len(), self.m_grid.len());
        self.values[((ti * self.modes + k) * nx + i) * nm + j]
    }
}

impl DriftField for CustomTable {
    fn depends_on_law(&self) -> bool {
        self.m_grid.len() > 1
    }

    fn component(&self, k: usize, t: f64, x: &[f64], law: &LawSummary) -> f64 {
        let ti = self.times.partition_point(|s| *s <= t).saturating_sub(1);
        let (i, fx) = bracket(&self.x_grid, x[k]);
        let (j, fm) = bracket(&self.m_grid, law.mean[k]);
        let i1 = (i + 1).min(self.x_grid.len() - 1);
        let j1 = (j + 1).min(self.m_grid.len() - 1);
        let v00 = self.at(ti, k, i, j);
        let v10 = self.at(ti, k, i1, j);
        let v01 = self.at(ti, k, i, j1);
        let v11 = self.at(ti, k, i1, j1);
        (1.0 - fx) * ((1.0 - fm) * v00 + fm * v01) + fx * ((1.0 - fm) * v10 + fm * v11)
    }
}

/// Hölder moduli `(gamma, alpha, beta)` of a regular mode's drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderModuli {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// A drift field with its declared bounds `|b_k| <= C_k λ_k`, enforced by
/// clamping. Every clamp is counted.
pub struct DriftSpec {
    field: Box<dyn DriftField>,
    bounds: Vec<f64>,
    limits: Vec<f64>,
    pub moduli: Option<Vec<Option<HolderModuli>>>,
    pub law_lipschitz: bool,
    clamps: AtomicU64,
}

impl std::fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriftSpec")
            .field("bounds", &self.bounds)
            .field("law_lipschitz", &self.law_lipschitz)
            .field("clamps", &self.clamp_events())
            .finish()
    }
}

impl DriftSpec {
    pub fn new(
        field: Box<dyn DriftField>,
        bounds: Vec<f64>,
        spec: &HurstSpectrum,
        moduli: Option<Vec<Option<HolderModuli>>>,
        law_lipschitz: bool,
    ) -> Result<Self> {
        let k = spec.modes();
        if bounds.len() != k {
            return Err(Error::domain(format!("{} drift bounds for {k} modes", bounds.len())));
        }
        if bounds.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::domain("drift bounds must be nonnegative"));
        }
        if let Some(m) = &moduli {
            if m.len() != k {
                return Err(Error::domain("moduli length does not match modes"));
            }
            let (kappa, _) = holder_envelope(spec)?;
            for (i, md) in m.iter().enumerate() {
                let (Some(md), Regime::Regular) = (md, spec.regime(i)) else {
                    continue;
                };
                let h = spec.hurst[i];
                if !(md.gamma > h - 0.5) {
                    return Err(Error::domain(format!("mode {i}: gamma {} <= H - 1/2", md.gamma)));
                }
                if !(kappa * md.alpha > 2.0 * h - 1.0 && md.alpha <= 2.0) {
                    return Err(Error::domain(format!(
                        "mode {i}: alpha {} violates kappa*alpha > 2H - 1, alpha <= 2",
                        md.alpha
                    )));
                }
                if !(kappa * md.beta > h - 0.5) {
                    return Err(Error::domain(format!("mode {i}: beta {} violates kappa*beta > H - 1/2", md.beta)));
                }
            }
        }
        let limits = bounds.iter().zip(&spec.weights).map(|(c, l)| c * l).collect();
        Ok(Self {
            field,
            bounds,
            limits,
            moduli,
            law_lipschitz,
            clamps: AtomicU64::new(0),
        })
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn modes(&self) -> usize {
        self.bounds.len()
    }

    pub fn depends_on_law(&self) -> bool {
        self.field.depends_on_law()
    }

    pub fn summarize(&self, law: &EmpiricalMeasure) -> LawSummary {
        self.field.summarize(law)
    }

    /// Clamped `b_k(t, x, μ)`.
    pub fn eval(&self, k: usize, t: f64, x: &[f64], law: &LawSummary) -> f64 {
        let v = self.field.component(k, t, x, law);
        let lim = self.limits[k];
        if v > lim || v < -lim || v.is_nan() {
            self.clamps.fetch_add(1, Ordering::Relaxed);
            if v.is_nan() {
                0.0
            } else {
                v.clamp(-lim, lim)
            }
        } else {
            v
        }
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    pub fn reset_clamp_events(&self) {
        self.clamps.store(0, Ordering::Relaxed);
    }
}
