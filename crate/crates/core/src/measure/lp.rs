//! Direct primal LP for the BL distance. Quadratic in the support size, so
//! only meant for small instances and as a cross-check.

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use super::{Combined, EmpiricalMeasure};
use crate::error::{Error, Result};

/// max Σ (μ_i - ν_i) f_i  s.t. |f_i| <= a, |f_i - f_j| <= L d_ij, a + L <= 1.
pub fn bl_distance_primal(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    let c = Combined::new(mu, nu)?;
    let n = c.weights.len();
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let f: Vec<_> = c
        .weights
        .iter()
        .map(|w| p.add_var(*w, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let a = p.add_var(0.0, (0.0, 1.0));
    let l = p.add_var(0.0, (0.0, 1.0));
    p.add_constraint(&[(a, 1.0), (l, 1.0)], ComparisonOp::Le, 1.0);
    for i in 0..n {
        p.add_constraint(&[(f[i], 1.0), (a, -1.0)], ComparisonOp::Le, 0.0);
        p.add_constraint(&[(f[i], 1.0), (a, 1.0)], ComparisonOp::Ge, 0.0);
        for j in i + 1..n {
            let d = c.dist(i, j);
            p.add_constraint(&[(f[i], 1.0), (f[j], -1.0), (l, -d)], ComparisonOp::Le, 0.0);
            p.add_constraint(&[(f[i], 1.0), (f[j], -1.0), (l, d)], ComparisonOp::Ge, 0.0);
        }
    }
    let sol = p
        .solve()
        .map_err(|e| Error::Solver(e.to_string()))?
        .into_solution()
        .map_err(|_| Error::Solver("LP solve interrupted".into()))?;
    Ok(sol.objective().max(0.0))
}
