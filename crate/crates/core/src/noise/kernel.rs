//! Closed-form Volterra kernel of fBm and its exact cell integrals.
//!
//! With `x = s/t`, both regimes collapse to
//! `K(t,s) = A t^{H-1/2} s^{1/2-H} (t-s)^{H-1/2} + B s^{H-1/2} (1 - I_x(p,q))`
//! where `I_x` is the regularised incomplete beta function.

use statrs::function::beta::{beta, beta_reg};

use crate::fraccalc::{b_h, c_h};
use crate::spectrum::{check_hurst, Regime};
use crate::Result;

#[derive(Debug, Clone, Copy)]
struct Coefs {
    h: f64,
    a: f64,
    b: f64,
    p: f64,
    q: f64,
}

impl Coefs {
    fn new(h: f64) -> Self {
        if h < 0.5 {
            let bh = b_h(h);
            Coefs {
                h,
                a: bh,
                b: bh * (0.5 - h) * beta(1.0 - 2.0 * h, h + 0.5),
                p: 1.0 - 2.0 * h,
                q: h + 0.5,
            }
        } else {
            let ch = c_h(h);
            Coefs {
                h,
                a: ch / (2.0 * h - 1.0),
                b: ch / 2.0 * beta(2.0 - 2.0 * h, h - 0.5),
                p: 2.0 - 2.0 * h,
                q: h - 0.5,
            }
        }
    }

    fn tail(&self, x: f64) -> f64 {
        1.0 - beta_reg(self.p, self.q, x.clamp(0.0, 1.0))
    }
}

/// `K_H(t,s)` for `0 < s < t`; zero for `s >= t`.
pub fn kernel(h: f64, t: f64, s: f64) -> Result<f64> {
    check_hurst(h)?;
    if s >= t || s <= 0.0 {
        return Ok(if Regime::of(h) == Regime::Brownian && s < t { 1.0 } else { 0.0 });
    }
    if Regime::of(h) == Regime::Brownian {
        return Ok(1.0);
    }
    let c = Coefs::new(h);
    let g = h - 0.5;
    Ok(c.a * t.powf(g) * s.powf(-g) * (t - s).powf(g) + c.b * s.powf(g) * c.tail(s / t))
}

/// `int_a^b K_H(t,s) ds` with `0 <= a < b <= t`.
fn cell_integral(c: &Coefs, t: f64, a: f64, b: f64) -> f64 {
    let g = c.h - 0.5;
    // leading term in closed form: int s^{-g}(t-s)^g ds = t B(1-g, 1+g) [I_{b/t} - I_{a/t}]
    let (pa, pb) = (1.0 - g, 1.0 + g);
    let ia = if a > 0.0 { beta_reg(pa, pb, (a / t).min(1.0)) } else { 0.0 };
    let ib = beta_reg(pa, pb, (b / t).min(1.0));
    let lead = c.a * t.powf(g) * t * beta(pa, pb) * (ib - ia);
    let rest = tail_antiderivative(c, t, b) - tail_antiderivative(c, t, a);
    lead + c.b * rest
}

/// Antiderivative of `s^g (1 - I_{s/t}(p,q))` vanishing at 0, by parts:
/// `s^{g+1}/(g+1) (1 - I_x(p,q)) + t^{g+1}/(g+1) B(g+p+1,q)/B(p,q) I_x(g+p+1,q)`.
fn tail_antiderivative(c: &Coefs, t: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let g1 = c.h + 0.5;
    let x = (s / t).min(1.0);
    let r = c.p + g1;
    s.powf(g1) / g1 * c.tail(x) + t.powf(g1) / g1 * (beta(r, c.q) / beta(c.p, c.q)) * beta_reg(r, c.q, x)
}

/// Cell-averaged kernel `V[i][j] = (1/h) int_{t_j}^{t_{j+1}} K(t_{i+1}, s) ds`
/// for `j <= i`, rows for nodes `t_1..t_rows`. Row `i` holds `i + 1` entries.
#[derive(Debug, Clone)]
pub struct VolterraMatrix {
    hurst: f64,
    step: f64,
    rows: usize,
    data: Vec<f64>,
}

impl VolterraMatrix {
    pub fn new(hurst: f64, step: f64, rows: usize) -> Result<Self> {
        check_hurst(hurst)?;
        let mut data = Vec::with_capacity(rows * (rows + 1) / 2);
        if Regime::of(hurst) == Regime::Brownian {
            data.resize(rows * (rows + 1) / 2, 1.0);
        } else {
            let c = Coefs::new(hurst);
            for i in 0..rows {
                let t = (i + 1) as f64 * step;
                for j in 0..=i {
                    let a = j as f64 * step;
                    let b = if j == i { t } else { (j + 1) as f64 * step };
                    data.push(cell_integral(&c, t, a, b) / step);
                }
            }
        }
        Ok(Self {
            hurst,
            step,
            rows,
            data,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Row for node `t_{i+1}`.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.data[start..start + i + 1]
    }

    /// Writes `B(t_0..t_n)` into `out` (length `n + 1`) from `n` increments.
    pub fn synthesize(&self, increments: &[f64], out: &mut [f64]) {
        let n = increments.len();
        debug_assert!(n <= self.rows && out.len() == n + 1);
        out[0] = 0.0;
        for i in 0..n {
            out[i + 1] = self.row(i).iter().zip(increments).map(|(v, w)| v * w).sum();
        }
    }

    /// Inverts [`VolterraMatrix::synthesize`] by forward substitution.
    pub fn solve(&self, path: &[f64], increments: &mut [f64]) {
        let n = increments.len();
        debug_assert!(n <= self.rows && path.len() > n);
        for i in 0..n {
            let r = self.row(i);
            let acc: f64 = r[..i].iter().zip(&increments[..i]).map(|(v, w)| v * w).sum();
            increments[i] = (path[i + 1] - acc) / r[i];
        }
    }
}
