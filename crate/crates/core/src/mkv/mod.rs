//! Mean-field solver: the frozen-law Euler scheme, the law map `ψ` on
//! measure flows, Picard iteration with common random numbers, a uniqueness
//! probe, and the Girsanov reweighting cross-check.

mod drift;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use drift::{
    Constant, CustomTable, DriftField, DriftSpec, HolderModuli, LawSummary, MeanFieldOu, TanhMode, Zero,
};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fraccalc::TimeLattice;
use crate::girsanov::stochastic_exponential;
use crate::measure::{EmpiricalFlow, EmpiricalMeasure, FlowMetric};
use crate::noise::CylindricalPathSet;
use crate::rng::aux_rng;
use rand::Rng;
use crate::spectrum::HurstSpectrum;

/// Particle states on the lattice, laid out `states[(p * (N + 1) + i) * K + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSet {
    pub lattice: TimeLattice,
    pub particles: usize,
    pub modes: usize,
    pub states: Vec<f64>,
}

impl StateSet {
    pub fn state(&self, p: usize, i: usize) -> &[f64] {
        let o = (p * self.lattice.len() + i) * self.modes;
        &self.states[o..o + self.modes]
    }

    /// Equal-mass empirical law of the particles at node `i`.
    pub fn node_measure(&self, i: usize) -> EmpiricalMeasure {
        let mut pts = Vec::with_capacity(self.particles * self.modes);
        for p in 0..self.particles {
            pts.extend_from_slice(self.state(p, i));
        }
        EmpiricalMeasure::uniform(self.modes, pts).expect("finite states")
    }

    pub fn to_flow(&self) -> EmpiricalFlow {
        EmpiricalFlow {
            lattice: self.lattice,
            measures: (0..self.lattice.len()).map(|i| self.node_measure(i)).collect(),
        }
    }
}

fn check_inputs(
    drift: &DriftSpec,
    spec: &HurstSpectrum,
    flow: &EmpiricalFlow,
    paths: &CylindricalPathSet,
    x0: &[f64],
) -> Result<()> {
    let k = spec.modes();
    if paths.hurst != spec.hurst {
        return Err(Error::domain("path set does not match the spectrum"));
    }
    if drift.modes() != k || x0.len() != k {
        return Err(Error::domain("drift, initial state and spectrum disagree on the number of modes"));
    }
    if flow.lattice != paths.lattice {
        return Err(Error::LatticeMismatch("flow and paths live on different lattices".into()));
    }
    if flow.measures.iter().any(|m| m.dim() != k) {
        return Err(Error::domain("flow dimension does not match the spectrum"));
    }
    Ok(())
}

fn summaries(drift: &DriftSpec, flow: &EmpiricalFlow) -> Vec<LawSummary> {
    if drift.depends_on_law() {
        flow.measures.iter().map(|m| drift.summarize(m)).collect()
    } else {
        let zero = LawSummary {
            mean: vec![0.0; drift.modes()],
        };
        vec![zero; flow.measures.len()]
    }
}

/// Euler scheme with additive noise:
/// `X_{i+1} = X_i + b(t_i, X_i, μ_{t_i}) h + λ (B_{i+1} - B_i)`, `X_0 = x0`.
pub fn solve_frozen(
    drift: &DriftSpec,
    spec: &HurstSpectrum,
    flow: &EmpiricalFlow,
    paths: &CylindricalPathSet,
    x0: &[f64],
    exec: Exec,
) -> Result<StateSet> {
    check_inputs(drift, spec, flow, paths, x0)?;
    let lat = paths.lattice;
    let (k, n1) = (spec.modes(), lat.len());
    let h = lat.h();
    let sums = summaries(drift, flow);
    let mut states = vec![0.0; paths.particles * n1 * k];
    // The drift integral is accumulated apart from the noise, which enters
    // as λ B_{t_i} directly; this is the same recursion without the
    // round-off from re-summing noise increments.
    exec.fill_chunks(&mut states, n1 * k, |p, out| {
        let mut acc = vec![0.0; k];
        out[..k].copy_from_slice(x0);
        for i in 0..n1 - 1 {
            let t = lat.node(i);
            let (cur, next) = out[i * k..(i + 2) * k].split_at_mut(k);
            for m in 0..k {
                acc[m] += drift.eval(m, t, cur, &sums[i]) * h;
            }
            for m in 0..k {
                next[m] = x0[m] + acc[m] + spec.weights[m] * paths.fbm(p, m)[i + 1];
            }
        }
    });
    Ok(StateSet {
        lattice: lat,
        particles: paths.particles,
        modes: k,
        states,
    })
}

/// `ψ(μ)`: node-wise empirical laws of the frozen-law solution.
pub fn psi_map(
    drift: &DriftSpec,
    spec: &HurstSpectrum,
    flow: &EmpiricalFlow,
    paths: &CylindricalPathSet,
    x0: &[f64],
    exec: Exec,
) -> Result<EmpiricalFlow> {
    Ok(solve_frozen(drift, spec, flow, paths, x0, exec)?.to_flow())
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Mass on the new iterate; 1 is plain Picard iteration.
    pub damping: f64,
    pub metric: FlowMetric,
    /// Record per-iteration wall-clock time (not reproducible).
    pub timing: bool,
    pub exec: Exec,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 0.02,
            max_iter: 20,
            damping: 1.0,
            metric: FlowMetric::default(),
            timing: false,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointTrace {
    /// `μ^(0), μ^(1), ...`; `μ^(0)` is the initial flow and `μ^(1) = ψ(μ^(0))`.
    pub iterates: Vec<EmpiricalFlow>,
    /// `d_n = K(μ^(n+1), μ^(n))` for `n = 1..=iterations_used`.
    pub distances: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    pub wallclock_ms: Vec<Option<f64>>,
}

impl FixedPointTrace {
    pub fn limit(&self) -> &EmpiricalFlow {
        self.iterates.last().expect("trace holds the initial flow")
    }
}

/// θ-mixture of atoms: each particle independently keeps its new position
/// with probability θ and its old one otherwise, so particle identities (and
/// the common random numbers) survive damping.
fn damp(new: EmpiricalFlow, old: &EmpiricalFlow, theta: f64, seed: u64) -> Result<EmpiricalFlow> {
    let m = new.measures[0].len();
    if old.measures.iter().any(|o| o.len() != m) {
        // the initial flow is not particle-aligned; take the undamped update
        return Ok(new);
    }
    let mut rng = aux_rng(seed, 2);
    let keep: Vec<bool> = (0..m).map(|_| rng.random::<f64>() < theta).collect();
    let dim = new.measures[0].dim();
    let measures = new
        .measures
        .iter()
        .zip(&old.measures)
        .map(|(a, b)| {
            let mut pts = Vec::with_capacity(m * dim);
            for (p, k) in keep.iter().enumerate() {
                pts.extend_from_slice(if *k { a.point(p) } else { b.point(p) });
            }
            EmpiricalMeasure::new(dim, pts, a.masses().to_vec())
        })
        .collect::<Result<_>>()?;
    EmpiricalFlow::new(new.lattice, measures)
}

/// Picard iteration `μ^(n+1) = ψ(μ^(n))` from the constant flow `δ_{x0}`.
pub fn fixed_point(
    drift: &DriftSpec,
    spec: &HurstSpectrum,
    paths: &CylindricalPathSet,
    x0: &[f64],
    opts: &FixedPointOptions,
) -> Result<FixedPointTrace> {
    let init = EmpiricalFlow::constant(paths.lattice, EmpiricalMeasure::dirac(x0.to_vec())?);
    fixed_point_from(drift, spec, paths, x0, init, opts)
}

/// Picard iteration from a given initial flow. Running out of iterations is
/// reported through `converged = false`, not as an error.
pub fn fixed_point_from(
    drift: &DriftSpec,
    spec: &HurstSpectrum,
    paths: &CylindricalPathSet,
    x0: &[f64],
    init: EmpiricalFlow,
    opts: &FixedPointOptions,
) -> Result<FixedPointTrace> {
    if !(opts.tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::domain(format!("damping {} outside (0,1]", opts.damping)));
    }
    if opts.max_iter == 0 {
        return Err(Error::domain("max_iter must be at least 1"));
    }
    let first = psi_map(drift, spec, &init, paths, x0, opts.exec)?;
    let mut iterates = vec![init, first];
    let mut distances = Vec::new();
    let mut wallclock_ms = Vec::new();
    let mut converged = false;
    for n in 1..=opts.max_iter {
        let start = Instant::now();
        let cur = iterates.last().unwrap();
        let mut next = psi_map(drift, spec, cur, paths, x0, opts.exec)?;
        if opts.damping < 1.0 {
            next = damp(next, cur, opts.damping, paths.seed ^ ((n as u64) << 48) ^ 0x5eed)?;
        }
        let d = opts.metric.sup_distance(&next, cur)?;
        iterates.push(next);
        distances.push(d);
        wallclock_ms.push(opts.timing.then(|| start.elapsed().as_secs_f64() * 1e3));
        if d <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FixedPointTrace {
        iterations_used: distances.len(),
        iterates,
        distances,
        converged,
        wallclock_ms,
    })
}

/// `K(ψ(μ), μ)` sup over nodes, on the same paths.
pub fn residual(
    drift: &DriftSpec,
    spec: &HurstSpectrum,
    paths: &CylindricalPathSet,
    x0: &[f64],
    flow: &EmpiricalFlow,
    metric: &FlowMetric,
) -> Result<f64> {
    let next = psi_map(drift, spec, flow, paths, x0, metric.exec)?;
    metric.sup_distance(&next, flow)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub distance: f64,
    pub traces: [FixedPointTrace; 2],
}

/// Runs the iteration from two initial flows and measures the distance
/// between the two limits.
pub fn uniqueness_probe(
    drift: &DriftSpec,
    spec: &HurstSpectrum,
    paths: &CylindricalPathSet,
    x0: &[f64],
    inits: [EmpiricalFlow; 2],
    opts: &FixedPointOptions,
) -> Result<UniquenessReport> {
    if !drift.law_lipschitz {
        return Err(Error::domain("uniqueness probe needs a law-Lipschitz drift"));
    }
    let [a, b] = inits;
    let ta = fixed_point_from(drift, spec, paths, x0, a, opts)?;
    let tb = fixed_point_from(drift, spec, paths, x0, b, opts)?;
    for t in [&ta, &tb] {
        if !t.converged {
            return Err(Error::NonConvergence {
                iterations: t.iterations_used,
            });
        }
    }
    let distance = opts.metric.sup_distance(ta.limit(), tb.limit())?;
    Ok(UniquenessReport {
        distance,
        traces: [ta, tb],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweightEstimate {
    /// Mean of `f(X_T)` over Euler particles.
    pub direct: f64,
    /// Mean of `f(Y_T) ℰ_T` over driftless particles `Y = x0 + λB`.
    pub reweighted: f64,
    /// `sqrt(se_direct² + se_reweighted²)`.
    pub stderr: f64,
    /// Standard error of the per-particle difference (same paths).
    pub paired_stderr: f64,
    pub mean_weight: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, (var / n).sqrt())
}

/// Estimates `E f(X_T)` for the drifted equation both by Euler and by
/// weighting driftless paths with the stochastic exponential of `b / λ`.
pub fn reweighted_expectation(
    drift: &DriftSpec,
    spec: &HurstSpectrum,
    flow: &EmpiricalFlow,
    paths: &CylindricalPathSet,
    x0: &[f64],
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    exec: Exec,
) -> Result<ReweightEstimate> {
    let states = solve_frozen(drift, spec, flow, paths, x0, exec)?;
    let sums = summaries(drift, flow);
    let lam = &spec.weights;
    let u = |_: usize, i: usize, t: f64, y: &[f64], out: &mut [f64]| {
        for (m, o) in out.iter_mut().enumerate() {
            *o = if lam[m] > 0.0 {
                drift.eval(m, t, y, &sums[i]) / lam[m]
            } else {
                0.0
            };
        }
    };
    let samples = stochastic_exponential(spec, paths, x0, &u, exec)?;
    let n = paths.steps();
    let k = spec.modes();
    let rows = exec.map(paths.particles, |p| {
        let y: Vec<f64> = (0..k).map(|m| x0[m] + lam[m] * paths.fbm(p, m)[n]).collect();
        let w = samples[p].density();
        let direct = f(states.state(p, n));
        let rew = f(&y) * w;
        (direct, rew, w)
    });
    let d: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let r: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let diff: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
    let (direct, se_d) = mean_se(&d);
    let (reweighted, se_r) = mean_se(&r);
    let (_, paired) = mean_se(&diff);
    Ok(ReweightEstimate {
        direct,
        reweighted,
        stderr: se_d.hypot(se_r),
        paired_stderr: paired,
        mean_weight: rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64,
    })
}

#[cfg(test)]
mod tests;
