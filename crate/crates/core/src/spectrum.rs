//! Truncated Hurst spectrum: per-mode Hurst indices, noise weights and the
//! summability diagnostics the existence theory asks for.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// H < 1/2
    Singular,
    /// H = 1/2
    Brownian,
    /// H > 1/2
    Regular,
}

impl Regime {
    pub fn of(h: f64) -> Regime {
        if h < 0.5 {
            Regime::Singular
        } else if h == 0.5 {
            Regime::Brownian
        } else {
            Regime::Regular
        }
    }
}

pub(crate) fn check_hurst(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("Hurst index {h} outside (0,1)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstSpectrum {
    pub hurst: Vec<f64>,
    pub weights: Vec<f64>,
    pub horizon: f64,
}

impl HurstSpectrum {
    /// Builds and validates a spectrum.
    pub fn new(hurst: Vec<f64>, weights: Vec<f64>, horizon: f64) -> Result<Self> {
        let spec = Self {
            hurst,
            weights,
            horizon,
        };
        validate_spectrum(&spec)?;
        Ok(spec)
    }

    pub fn modes(&self) -> usize {
        self.hurst.len()
    }

    pub fn regime(&self, k: usize) -> Regime {
        Regime::of(self.hurst[k])
    }

    /// Distinct Hurst indices in first-occurrence order.
    pub fn distinct_hurst(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &h in &self.hurst {
            if !out.iter().any(|&x| x == h) {
                out.push(h);
            }
        }
        out
    }

    pub fn l2_weight_sq(&self) -> f64 {
        self.weights.iter().map(|l| l * l).sum()
    }
}

/// Zero-based mode indices split by regime.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModePartition {
    pub singular: Vec<usize>,
    pub brownian: Vec<usize>,
    pub regular: Vec<usize>,
}

pub fn validate_spectrum(spec: &HurstSpectrum) -> Result<ModePartition> {
    let k = spec.hurst.len();
    if k == 0 {
        return Err(Error::domain("spectrum has no modes"));
    }
    if spec.weights.len() != k {
        return Err(Error::domain(format!(
            "{} Hurst indices but {} weights",
            k,
            spec.weights.len()
        )));
    }
    if !(spec.horizon >= 1.0) || !spec.horizon.is_finite() {
        return Err(Error::domain(format!("horizon {} < 1", spec.horizon)));
    }
    for &h in &spec.hurst {
        check_hurst(h)?;
    }
    if spec.weights.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::domain("weights must be finite and nonnegative"));
    }
    if spec.weights.iter().all(|&l| l == 0.0) {
        return Err(Error::domain("all weights are zero"));
    }

    let mut part = ModePartition {
        singular: vec![],
        brownian: vec![],
        regular: vec![],
    };
    for (i, &h) in spec.hurst.iter().enumerate() {
        match Regime::of(h) {
            Regime::Singular => part.singular.push(i),
            Regime::Brownian => part.brownian.push(i),
            Regime::Regular => part.regular.push(i),
        }
    }
    Ok(part)
}

/// Returns `(kappa, rho)` with `(sum_k lambda_k^2 u^{2 H_k})^{1/2} <= rho u^kappa` on `[0, T]`.
pub fn holder_envelope(spec: &HurstSpectrum) -> Result<(f64, f64)> {
    if spec.hurst.is_empty() {
        return Err(Error::domain("spectrum has no modes"));
    }
    let hmin = spec.hurst.iter().copied().fold(f64::INFINITY, f64::min);
    let hmax = spec.hurst.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rho = spec.l2_weight_sq().sqrt() * spec.horizon.powf(hmax - hmin);
    Ok((hmin, rho))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub l1_lambda: f64,
    pub l1_lambda_over_sqrt_h: f64,
    pub l1_c_over_sqrt1m_h: f64,
    pub kappa: f64,
    pub rho: f64,
    pub ok: bool,
}

pub fn admissibility(spec: &HurstSpectrum, drift_bounds: &[f64]) -> Result<AdmissibilityReport> {
    if drift_bounds.len() != spec.modes() {
        return Err(Error::domain(format!(
            "{} drift bounds for {} modes",
            drift_bounds.len(),
            spec.modes()
        )));
    }
    if drift_bounds.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::domain("drift bounds must be nonnegative"));
    }
    let l1_lambda = spec.weights.iter().sum::<f64>();
    let l1_lambda_over_sqrt_h = spec
        .hurst
        .iter()
        .zip(&spec.weights)
        .filter(|(h, _)| Regime::of(**h) == Regime::Singular)
        .map(|(h, l)| l / h.sqrt())
        .sum::<f64>();
    let l1_c_over_sqrt1m_h = spec
        .hurst
        .iter()
        .zip(drift_bounds)
        .map(|(h, c)| c / (1.0 - h).sqrt())
        .sum::<f64>();
    let (kappa, rho) = holder_envelope(spec)?;
    let ok = [l1_lambda, l1_lambda_over_sqrt_h, l1_c_over_sqrt1m_h]
        .iter()
        .all(|s| s.is_finite())
        && kappa > 0.0
        && kappa < 1.0;
    Ok(AdmissibilityReport {
        l1_lambda,
        l1_lambda_over_sqrt_h,
        l1_c_over_sqrt1m_h,
        kappa,
        rho,
        ok,
    })
}
