//! Empirical measures on the truncated space and the dual bounded-Lipschitz
//! (Kantorovich) metric between them.
//!
//! For a fixed split `a + L = 1` the BL supremum over `|f| <= a, Lip f <= L`
//! is the optimal transport cost for `c_a = min(L d, 2a)`. So
//! `K(μ,ν) = max_{a in [0,1]} W_{c_a}(μ,ν)`, a concave function of `a`, which
//! is maximised by cutting planes: every transport plan found gives an upper
//! bound `a -> Σ π c_a` and every exact solve gives a lower bound.

pub mod lp;
pub(crate) mod transport;

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fraccalc::TimeLattice;
use crate::rng::aux_rng;
use transport::Transport;

pub use lp::bl_distance_primal;

pub const DEFAULT_CAP: usize = 2000;

/// Finitely supported probability measure on `R^K`; atoms stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    masses: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if dim == 0 || masses.is_empty() || points.len() != dim * masses.len() {
            return Err(Error::domain(format!(
                "{} coordinates for {} atoms in dimension {dim}",
                points.len(),
                masses.len()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("atoms must be finite"));
        }
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::domain("masses must be nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { dim, points, masses })
    }

    /// Equal masses `1/n` on the given atoms.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        let n = if dim == 0 { 0 } else { points.len() / dim };
        if n == 0 {
            return Err(Error::domain("empty support"));
        }
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        Self::new(point.len(), point, vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (i, w) in self.masses.iter().enumerate() {
            for (mk, x) in m.iter_mut().zip(self.point(i)) {
                *mk += w * x;
            }
        }
        m
    }

    /// Total order on the raw representation, used to make the metric exactly
    /// symmetric.
    fn repr_cmp(&self, other: &Self) -> Ordering {
        let key = |m: &Self| {
            (m.dim, m.masses.len())
        };
        key(self)
            .cmp(&key(other))
            .then_with(|| cmp_bits(&self.masses, &other.masses))
            .then_with(|| cmp_bits(&self.points, &other.points))
    }
}

fn cmp_bits(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .map(|x| x.to_bits())
        .cmp(b.iter().map(|x| x.to_bits()))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Union of two supports with signed weights `μ - ν`, identical atoms merged.
pub(crate) struct Combined {
    dim: usize,
    points: Vec<f64>,
    pub(crate) weights: Vec<f64>,
}

impl Combined {
    pub(crate) fn new(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<Self> {
        if mu.dim != nu.dim {
            return Err(Error::domain("measures live in different dimensions"));
        }
        let mut idx: std::collections::HashMap<Vec<u64>, usize> = Default::default();
        let mut points = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (m, sign) in [(mu, 1.0), (nu, -1.0)] {
            for i in 0..m.len() {
                let p = m.point(i);
                let key: Vec<u64> = p.iter().map(|x| (x + 0.0).to_bits()).collect();
                let j = *idx.entry(key).or_insert_with(|| {
                    points.extend_from_slice(p);
                    weights.push(0.0);
                    weights.len() - 1
                });
                weights[j] += sign * m.masses[i];
            }
        }
        Ok(Self {
            dim: mu.dim,
            points,
            weights,
        })
    }

    pub(crate) fn dist(&self, i: usize, j: usize) -> f64 {
        let d = self.dim;
        dist(&self.points[i * d..(i + 1) * d], &self.points[j * d..(j + 1) * d])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlOptions {
    /// Largest combined support accepted.
    pub cap: usize,
    /// Stop when the cutting-plane upper bound is within this of the best value.
    pub tol: f64,
}

impl Default for BlOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_CAP,
            tol: 1e-11,
        }
    }
}

/// Transport between the positive and negative parts of `μ - ν`.
struct Problem {
    a: Vec<f64>,
    b: Vec<f64>,
    d: Vec<f64>,
}

impl Problem {
    fn new(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<Option<Self>> {
        let c = Combined::new(mu, nu)?;
        let mut src = Vec::new();
        let mut snk = Vec::new();
        for (i, w) in c.weights.iter().enumerate() {
            if *w > 0.0 {
                src.push((i, *w));
            } else if *w < 0.0 {
                snk.push((i, -*w));
            }
        }
        if src.is_empty() || snk.is_empty() {
            return Ok(None);
        }
        // the two parts can differ by rounding; rescale the sinks to match
        let sa: f64 = src.iter().map(|x| x.1).sum();
        let sb: f64 = snk.iter().map(|x| x.1).sum();
        let mut d = Vec::with_capacity(src.len() * snk.len());
        for &(i, _) in &src {
            for &(j, _) in &snk {
                d.push(c.dist(i, j));
            }
        }
        Ok(Some(Self {
            a: src.iter().map(|x| x.1).collect(),
            b: snk.iter().map(|x| x.1 * sa / sb).collect(),
            d,
        }))
    }

    fn cost(&self, alpha: f64, out: &mut [f64]) {
        for (c, d) in out.iter_mut().zip(&self.d) {
            *c = ((1.0 - alpha) * d).min(2.0 * alpha);
        }
    }
}

fn plan_value(p: &Problem, plan: &[(usize, f64)], alpha: f64) -> f64 {
    plan.iter()
        .map(|&(k, f)| f * ((1.0 - alpha) * p.d[k]).min(2.0 * alpha))
        .sum()
}

/// Maximises a concave function on [0,1] by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-14 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Dual bounded-Lipschitz distance between two finitely supported measures.
pub fn bl_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    bl_distance_with(mu, nu, &BlOptions::default())
}

pub fn bl_distance_with(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, opts: &BlOptions) -> Result<f64> {
    let size = mu.len() + nu.len();
    if size > opts.cap {
        return Err(Error::Capacity { size, cap: opts.cap });
    }
    let (mu, nu) = match mu.repr_cmp(nu) {
        Ordering::Equal => return Ok(0.0),
        Ordering::Greater => (nu, mu),
        Ordering::Less => (mu, nu),
    };
    let Some(p) = Problem::new(mu, nu)? else {
        return Ok(0.0);
    };
    let mut tp = Transport::new(&p.a, &p.b, 2.0);
    let mut cost = vec![0.0; p.d.len()];
    let mut plans: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut best = 0.0f64;
    let mut alpha = 1.0 / 3.0;
    for _ in 0..500 {
        p.cost(alpha, &mut cost);
        let v = tp.solve(&cost)?;
        best = best.max(v);
        plans.push(tp.plan());
        let upper = |x: f64| {
            plans
                .iter()
                .map(|pl| plan_value(&p, pl, x))
                .fold(f64::INFINITY, f64::min)
        };
        let (x, u) = golden_max(upper);
        if u - best <= opts.tol {
            return Ok(best.clamp(0.0, 2.0));
        }
        alpha = x;
    }
    Err(Error::Solver("cutting planes did not close the BL gap".into()))
}

/// Wasserstein-1 distance (Euclidean ground cost) by the same transport solver.
pub fn wasserstein1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    let Some(p) = Problem::new(mu, nu)? else {
        return Ok(0.0);
    };
    let bound = p.d.iter().copied().fold(0.0, f64::max);
    Transport::new(&p.a, &p.b, bound).solve(&p.d)
}

/// Time-indexed measures, one per lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalFlow {
    pub lattice: TimeLattice,
    pub measures: Vec<EmpiricalMeasure>,
}

impl EmpiricalFlow {
    pub fn new(lattice: TimeLattice, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        if measures.len() != lattice.len() {
            return Err(Error::LatticeMismatch(format!(
                "{} measures for {} nodes",
                measures.len(),
                lattice.len()
            )));
        }
        Ok(Self { lattice, measures })
    }

    pub fn constant(lattice: TimeLattice, m: EmpiricalMeasure) -> Self {
        Self {
            lattice,
            measures: vec![m; lattice.len()],
        }
    }
}

/// Node-wise metric settings for flows.
#[derive(Debug, Clone, Copy)]
pub struct FlowMetric {
    pub bl: BlOptions,
    /// Subsample each node measure to at most this many atoms first.
    pub subsample: Option<usize>,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for FlowMetric {
    fn default() -> Self {
        Self {
            bl: BlOptions::default(),
            subsample: None,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl FlowMetric {
    fn prepare<'a>(&self, m: &'a EmpiricalMeasure, node: usize) -> std::borrow::Cow<'a, EmpiricalMeasure> {
        match self.subsample {
            Some(t) if t < m.len() => std::borrow::Cow::Owned(subsample(m, t, self.seed ^ ((node as u64) << 32))),
            _ => std::borrow::Cow::Borrowed(m),
        }
    }

    /// Node-wise distances.
    pub fn nodewise(&self, mu: &EmpiricalFlow, nu: &EmpiricalFlow) -> Result<Vec<f64>> {
        if mu.lattice != nu.lattice {
            return Err(Error::LatticeMismatch("flows live on different lattices".into()));
        }
        self.exec.try_map(mu.measures.len(), |i| {
            let a = self.prepare(&mu.measures[i], i);
            let b = self.prepare(&nu.measures[i], i);
            bl_distance_with(&a, &b, &self.bl)
        })
    }

    pub fn sup_distance(&self, mu: &EmpiricalFlow, nu: &EmpiricalFlow) -> Result<f64> {
        Ok(self.nodewise(mu, nu)?.into_iter().fold(0.0, f64::max))
    }
}

/// `sup_t K(μ_t, ν_t)` over lattice nodes.
pub fn flow_sup_distance(mu: &EmpiricalFlow, nu: &EmpiricalFlow) -> Result<f64> {
    FlowMetric::default().sup_distance(mu, nu)
}

/// Empirical Hölder constant `max_i K(μ_{t_{i+1}}, μ_{t_i}) / h^kappa`.
pub fn holder_modulus(flow: &EmpiricalFlow, kappa: f64) -> Result<f64> {
    holder_modulus_with(flow, kappa, &FlowMetric::default())
}

pub fn holder_modulus_with(flow: &EmpiricalFlow, kappa: f64, metric: &FlowMetric) -> Result<f64> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::domain(format!("kappa {kappa} outside (0,1]")));
    }
    let n = flow.lattice.steps();
    let scale = flow.lattice.h().powf(kappa);
    let d = metric.exec.try_map(n, |i| {
        let a = metric.prepare(&flow.measures[i + 1], i + 1);
        let b = metric.prepare(&flow.measures[i], i);
        bl_distance_with(&a, &b, &metric.bl)
    })?;
    Ok(d.into_iter().fold(0.0, f64::max) / scale)
}

/// Mass-proportional resampling to `target` equal-mass atoms (systematic
/// resampling over a seeded permutation). Returns the input when it already
/// has at most `target` atoms.
pub fn subsample(measure: &EmpiricalMeasure, target: usize, seed: u64) -> EmpiricalMeasure {
    let target = target.max(1);
    if target >= measure.len() {
        return measure.clone();
    }
    let mut rng = aux_rng(seed, 1);
    let mut order: Vec<usize> = (0..measure.len()).collect();
    order.shuffle(&mut rng);
    let u0: f64 = rng.random::<f64>() / target as f64;
    let step = 1.0 / target as f64;
    let mut points = Vec::with_capacity(target * measure.dim);
    let mut cum = 0.0;
    let mut it = order.iter().peekable();
    let mut cur = *it.next().unwrap();
    cum += measure.masses[cur];
    for i in 0..target {
        let u = u0 + i as f64 * step;
        while u >= cum {
            match it.next() {
                Some(&j) => {
                    cur = j;
                    cum += measure.masses[j];
                }
                None => break,
            }
        }
        points.extend_from_slice(measure.point(cur));
    }
    EmpiricalMeasure {
        dim: measure.dim,
        points,
        masses: vec![step; target],
    }
}
