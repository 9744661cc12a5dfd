//! Riemann-Liouville operators on a uniform lattice and the fBm transfer
//! operators built from them.
//!
//! Every operator is a lower-triangular matrix acting on node values. Singular
//! weights are integrated exactly against the piecewise-linear interpolant
//! (product integration), so power weights `s^beta` inside the compositions
//! never meet a Riemann sum.

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta, beta_reg};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::spectrum::{check_hurst, Regime};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeLattice {
    horizon: f64,
    steps: usize,
}

impl TimeLattice {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("lattice needs at least one step"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::domain(format!("horizon {horizon} must be positive")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFunction {
    pub lattice: TimeLattice,
    pub values: Vec<f64>,
}

impl LatticeFunction {
    pub fn new(lattice: TimeLattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::LatticeMismatch(format!(
                "{} values on a lattice of {} nodes",
                values.len(),
                lattice.len()
            )));
        }
        Ok(Self { lattice, values })
    }

    pub fn from_fn(lattice: TimeLattice, f: impl Fn(f64) -> f64) -> Self {
        let values = lattice.nodes().into_iter().map(f).collect();
        Self { lattice, values }
    }

    pub fn constant(lattice: TimeLattice, c: f64) -> Self {
        Self {
            lattice,
            values: vec![c; lattice.len()],
        }
    }

    /// Max absolute difference over nodes `1..=N`.
    pub fn sup_dist_interior(&self, other: &LatticeFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .skip(1)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Dense operator on node values. Mostly lower-triangular, but the starting
/// weights and the centered derivative stencil reach one or two columns past
/// the diagonal.
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    n: usize,
    a: Vec<f64>,
}

impl Dense {
    pub(crate) fn zeros(n: usize) -> Self {
        Self { n, a: vec![0.0; n * n] }
    }

    #[inline]
    pub(crate) fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.a[i * self.n + j]
    }

    pub(crate) fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn scale_rows(&mut self, d: &[f64]) {
        for (i, di) in d.iter().enumerate() {
            for v in &mut self.a[i * self.n..(i + 1) * self.n] {
                *v *= di;
            }
        }
    }

    fn scale(&mut self, c: f64) {
        self.a.iter_mut().for_each(|v| *v *= c);
    }

    fn set_row0(&mut self, v: f64) {
        self.a[..self.n].iter_mut().for_each(|x| *x = 0.0);
        self.a[0] = v;
    }
}

/// `B(a,b) * I_x(a,b)` with `x` clamped into `[0,1]`.
fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x == 0.0 {
        return 0.0;
    }
    beta(a, b) * beta_reg(a, b, x)
}

/// Matrix of `I^alpha[s^beta f]` for piecewise-linear `f`. Row 0 holds the
/// `t -> 0` limit: `Gamma(1+beta) f(0)` when `alpha + beta = 0`, zero when positive.
pub(crate) fn weighted_integral(lat: &TimeLattice, alpha: f64, beta_: f64) -> Dense {
    let n = lat.steps();
    let h = lat.h();
    let mut m = Dense::zeros(n + 1);
    let ga = gamma(alpha);
    if beta_ == 0.0 {
        // Diethelm weights for the unweighted case
        let c = h.powf(alpha) / gamma(alpha + 2.0);
        for i in 1..=n {
            let nf = i as f64;
            *m.at(i, 0) = c * ((nf - 1.0).powf(alpha + 1.0) - (nf - 1.0 - alpha) * nf.powf(alpha));
            for j in 1..i {
                let d = (i - j) as f64;
                *m.at(i, j) = c
                    * ((d + 1.0).powf(alpha + 1.0) - 2.0 * d.powf(alpha + 1.0)
                        + (d - 1.0).powf(alpha + 1.0));
            }
            *m.at(i, i) = c;
        }
    } else {
        let t = lat.nodes();
        for i in 1..=n {
            let ti = t[i];
            let p0 = ti.powf(alpha + beta_);
            let p1 = p0 * ti;
            let mut prev0 = 0.0;
            let mut prev1 = 0.0;
            for j in 0..i {
                let x = if j + 1 == i { 1.0 } else { t[j + 1] / ti };
                let c0 = inc_beta(beta_ + 1.0, alpha, x);
                let c1 = inc_beta(beta_ + 2.0, alpha, x);
                let m0 = p0 * (c0 - prev0);
                let m1 = p1 * (c1 - prev1);
                prev0 = c0;
                prev1 = c1;
                *m.at(i, j) += (t[j + 1] * m0 - m1) / (h * ga);
                *m.at(i, j + 1) += (m1 - t[j] * m0) / (h * ga);
            }
        }
    }
    if alpha + beta_ == 0.0 {
        m.set_row0(gamma(1.0 + beta_));
    }
    m
}

/// Marchaud-form `D^alpha` by product integration, with starting weights on
/// nodes 1 and 2 that make it exact on `{1, t, t^alpha}`. Row 0 is left zero.
pub(crate) fn marchaud(lat: &TimeLattice, alpha: f64) -> Dense {
    let n = lat.steps();
    let h = lat.h();
    let t = lat.nodes();
    let mut d = Dense::zeros(n + 1);
    let c = 1.0 / gamma(1.0 - alpha);
    for i in 1..=n {
        *d.at(i, i) += c * t[i].powf(-alpha);
        for j in 0..i {
            let a = (i - j - 1) as f64 * h;
            let b = (i - j) as f64 * h;
            if j + 1 == i {
                let m = b.powf(1.0 - alpha) / (1.0 - alpha) / h;
                *d.at(i, i) += c * alpha * m;
                *d.at(i, i - 1) -= c * alpha * m;
            } else {
                let m_1 = (a.powf(-alpha) - b.powf(-alpha)) / alpha;
                let m0 = (b.powf(1.0 - alpha) - a.powf(1.0 - alpha)) / (1.0 - alpha);
                *d.at(i, i) += c * alpha * m_1;
                *d.at(i, j) -= c * alpha * m_1;
                let k = (b * m_1 - m0) / h;
                *d.at(i, j + 1) -= c * alpha * k;
                *d.at(i, j) += c * alpha * k;
            }
        }
    }
    if n >= 2 {
        let ta: Vec<f64> = t.iter().map(|s| s.powf(alpha)).collect();
        let r1 = d.apply(&ta);
        let r2 = d.apply(&t);
        let g1 = gamma(alpha + 1.0);
        let g2 = 1.0 / gamma(2.0 - alpha);
        // [[h^a, (2h)^a], [h, 2h]] w = residuals, balanced on node 0
        let (m11, m12, m21, m22) = (h.powf(alpha), (2.0 * h).powf(alpha), h, 2.0 * h);
        let det = m11 * m22 - m12 * m21;
        for i in 1..=n {
            let e1 = g1 - r1[i];
            let e2 = t[i].powf(1.0 - alpha) * g2 - r2[i];
            let w1 = (m22 * e1 - m12 * e2) / det;
            let w2 = (m11 * e2 - m21 * e1) / det;
            // keep constants exact
            *d.at(i, 0) -= w1 + w2;
            *d.at(i, 1) += w1;
            *d.at(i, 2) += w2;
        }
    }
    d
}

/// Nodal values of `q = s^{-w} F'` from weighted cell averages
/// `dF / int_cell s^w ds`; centered inside, extrapolated at the ends.
pub(crate) fn weighted_derivative(lat: &TimeLattice, w: f64) -> Dense {
    let n = lat.steps();
    let t = lat.nodes();
    let inv: Vec<f64> = (0..n)
        .map(|i| {
            let cw = if w == 0.0 {
                t[i + 1] - t[i]
            } else {
                (t[i + 1].powf(w + 1.0) - t[i].powf(w + 1.0)) / (w + 1.0)
            };
            1.0 / cw
        })
        .collect();
    // row r gets coef * (F[c+1] - F[c]) * inv[c]
    let mut q = Dense::zeros(n + 1);
    let put = |q: &mut Dense, r: usize, c: usize, coef: f64| {
        let n1 = n + 1;
        q.a[r * n1 + c + 1] += coef * inv[c];
        q.a[r * n1 + c] -= coef * inv[c];
    };
    if n == 1 {
        put(&mut q, 0, 0, 1.0);
        put(&mut q, 1, 0, 1.0);
        return q;
    }
    put(&mut q, 0, 0, 1.5);
    put(&mut q, 0, 1, -0.5);
    for r in 1..n {
        put(&mut q, r, r - 1, 0.5);
        put(&mut q, r, r, 0.5);
    }
    put(&mut q, n, n - 1, 1.5);
    put(&mut q, n, n - 2, -0.5);
    q
}

/// Normalising constant of the singular kernel.
pub fn b_h(h: f64) -> f64 {
    (2.0 * h / ((1.0 - 2.0 * h) * beta(1.0 - 2.0 * h, h + 0.5))).sqrt()
}

/// Normalising constant of the regular kernel.
pub fn c_h(h: f64) -> f64 {
    (h * (2.0 * h - 1.0) / beta(2.0 - 2.0 * h, h - 0.5)).sqrt()
}

pub fn frac_integral(f: &LatticeFunction, alpha: f64) -> Result<LatticeFunction> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::domain(format!("integral order {alpha} must be positive")));
    }
    let m = weighted_integral(&f.lattice, alpha, 0.0);
    Ok(LatticeFunction {
        lattice: f.lattice,
        values: m.apply(&f.values),
    })
}

/// `D^alpha g` for `alpha in (0,1)`. Node 0 is 0 when `g(0) = 0` and NaN otherwise
/// (the derivative then blows up like `t^{-alpha}`).
pub fn frac_derivative(g: &LatticeFunction, alpha: f64) -> Result<LatticeFunction> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("derivative order {alpha} outside (0,1)")));
    }
    let m = marchaud(&g.lattice, alpha);
    let mut values = m.apply(&g.values);
    values[0] = if g.values[0] == 0.0 { 0.0 } else { f64::NAN };
    Ok(LatticeFunction {
        lattice: g.lattice,
        values,
    })
}

pub(crate) fn k_matrices(lat: &TimeLattice, h: f64) -> (Dense, Option<Dense>) {
    match Regime::of(h) {
        Regime::Brownian => (weighted_integral(lat, 1.0, 0.0), None),
        Regime::Singular => {
            let inner = weighted_integral(lat, 0.5 - h, h - 0.5);
            let mut outer = weighted_integral(lat, 2.0 * h, 0.5 - h);
            outer.scale(b_h(h) * gamma(h + 0.5));
            (inner, Some(outer))
        }
        Regime::Regular => {
            let inner = weighted_integral(lat, h - 0.5, 0.5 - h);
            let mut outer = weighted_integral(lat, 1.0, h - 0.5);
            outer.scale(c_h(h) * gamma(h - 0.5));
            (inner, Some(outer))
        }
    }
}

/// `K_H f`, normalised so that it equals `int_0^t K_H(t,s) f(s) ds`.
pub fn k_op(f: &LatticeFunction, h: f64) -> Result<LatticeFunction> {
    check_hurst(h)?;
    let (a, b) = k_matrices(&f.lattice, h);
    let mut v = a.apply(&f.values);
    if let Some(b) = b {
        v = b.apply(&v);
    }
    Ok(LatticeFunction {
        lattice: f.lattice,
        values: v,
    })
}

pub fn k_op_inverse(big_f: &LatticeFunction, h: f64) -> Result<LatticeFunction> {
    check_hurst(h)?;
    if big_f.values[0].abs() > 1e-12 {
        return Err(Error::domain(format!(
            "F(0) = {} is not zero; not in the range of K_H",
            big_f.values[0]
        )));
    }
    let lat = &big_f.lattice;
    let q = weighted_derivative(lat, h - 0.5).apply(&big_f.values);
    let t = lat.nodes();
    let values = match Regime::of(h) {
        Regime::Brownian => q,
        Regime::Singular => {
            let a = 0.5 - h;
            let mut s = weighted_integral(lat, a, 0.0);
            let d: Vec<f64> = t.iter().map(|x| if *x > 0.0 { x.powf(-a) } else { 0.0 }).collect();
            s.scale_rows(&d);
            s.set_row0(1.0 / gamma(1.0 + a));
            s.scale(1.0 / (b_h(h) * gamma(h + 0.5)));
            s.apply(&q)
        }
        Regime::Regular => {
            let a = h - 0.5;
            let mut s = marchaud(lat, a);
            let d: Vec<f64> = t.iter().map(|x| x.powf(a)).collect();
            s.scale_rows(&d);
            s.set_row0(1.0 / gamma(1.0 - a));
            s.scale(1.0 / (c_h(h) * gamma(h - 0.5)));
            s.apply(&q)
        }
    };
    Ok(LatticeFunction {
        lattice: *lat,
        values,
    })
}
