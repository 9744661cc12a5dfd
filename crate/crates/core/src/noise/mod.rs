//! Per-mode fBm synthesis and the weighted cylindrical noise built from it.

pub mod dump;
pub mod kernel;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fraccalc::TimeLattice;
use crate::rng::StreamKey;
use crate::spectrum::{check_hurst, HurstSpectrum, Regime};

pub use kernel::{kernel, VolterraMatrix};

pub fn fbm_covariance(h: f64, t: f64, s: f64) -> Result<f64> {
    check_hurst(h)?;
    if t < 0.0 || s < 0.0 {
        return Err(Error::domain(format!("negative time ({t}, {s})")));
    }
    let e = 2.0 * h;
    Ok(0.5 * (t.powf(e) + s.powf(e) - (t - s).abs().powf(e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Cholesky,
    Volterra,
}

/// `M` particle paths of the K-mode noise, with generating increments.
///
/// Layout is particle-major: `fbm[(p * K + k) * (N + 1) + i]`,
/// `increments[(p * K + k) * N + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CylindricalPathSet {
    pub lattice: TimeLattice,
    pub hurst: Vec<f64>,
    pub particles: usize,
    pub seed: u64,
    pub fbm: Vec<f64>,
    pub increments: Vec<f64>,
}

impl CylindricalPathSet {
    pub fn modes(&self) -> usize {
        self.hurst.len()
    }

    pub fn steps(&self) -> usize {
        self.lattice.steps()
    }

    pub fn fbm(&self, p: usize, k: usize) -> &[f64] {
        let n1 = self.steps() + 1;
        let o = (p * self.modes() + k) * n1;
        &self.fbm[o..o + n1]
    }

    pub fn increments(&self, p: usize, k: usize) -> &[f64] {
        let n = self.steps();
        let o = (p * self.modes() + k) * n;
        &self.increments[o..o + n]
    }
}

fn check_args(spec: &HurstSpectrum, particles: usize) -> Result<()> {
    crate::spectrum::validate_spectrum(spec)?;
    if particles == 0 {
        return Err(Error::domain("need at least one particle"));
    }
    Ok(())
}

/// Lower Cholesky factor of `[R_H(t_i, t_j)]_{i,j >= 1}`.
fn cholesky_factor(h: f64, lat: &TimeLattice) -> Result<DMatrix<f64>> {
    let n = lat.steps();
    let t = lat.nodes();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let c = fbm_covariance(h, t[i + 1], t[j + 1])?;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    cov.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Numerical(format!("fBm covariance for H = {h}, N = {n} is not positive definite")))
}

/// Exact-in-distribution paths by Cholesky factorisation, one factor per
/// distinct `H`. For `H != 1/2` the increments are recovered by inverting the
/// discrete Volterra synthesis, so they are consistent with `volterra_fbm`.
pub fn cholesky_fbm(
    spec: &HurstSpectrum,
    lattice: &TimeLattice,
    particles: usize,
    seed: u64,
    exec: Exec,
) -> Result<CylindricalPathSet> {
    check_args(spec, particles)?;
    let n = lattice.steps();
    let sqrt_h = lattice.h().sqrt();
    let mut factors: Vec<(f64, Option<(DMatrix<f64>, VolterraMatrix)>)> = Vec::new();
    for h in spec.distinct_hurst() {
        let f = if Regime::of(h) == Regime::Brownian {
            None
        } else {
            Some((cholesky_factor(h, lattice)?, VolterraMatrix::new(h, lattice.h(), n)?))
        };
        factors.push((h, f));
    }
    let per_mode: Vec<usize> = spec
        .hurst
        .iter()
        .map(|h| factors.iter().position(|(x, _)| x == h).unwrap())
        .collect();
    let k = spec.modes();

    let mut fbm = vec![0.0; particles * k * (n + 1)];
    let mut increments = vec![0.0; particles * k * n];
    fill_particles(exec, &mut fbm, &mut increments, k, n, |p, m, path, inc| {
        let mut z = vec![0.0; n];
        StreamKey::new(seed, p, m).fill_normals(&mut z);
        match &factors[per_mode[m]].1 {
            None => {
                path[0] = 0.0;
                for i in 0..n {
                    inc[i] = sqrt_h * z[i];
                    path[i + 1] = path[i] + inc[i];
                }
            }
            Some((l, v)) => {
                path[0] = 0.0;
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += l[(i, j)] * z[j];
                    }
                    path[i + 1] = acc;
                }
                v.solve(path, inc);
            }
        }
    });
    Ok(CylindricalPathSet {
        lattice: *lattice,
        hurst: spec.hurst.clone(),
        particles,
        seed,
        fbm,
        increments,
    })
}

/// Paths from the Volterra representation `B_t = int_0^t K_H(t,s) dW_s` with
/// a cell-averaged kernel.
pub fn volterra_fbm(
    spec: &HurstSpectrum,
    lattice: &TimeLattice,
    particles: usize,
    seed: u64,
    exec: Exec,
) -> Result<CylindricalPathSet> {
    check_args(spec, particles)?;
    let n = lattice.steps();
    let k = spec.modes();
    let sqrt_h = lattice.h().sqrt();
    let mut increments = vec![0.0; particles * k * n];
    exec.fill_chunks(&mut increments, n, |c, inc| {
        StreamKey::new(seed, c / k, c % k).fill_normals(inc);
        inc.iter_mut().for_each(|x| *x *= sqrt_h);
    });
    let mut out = volterra_from_increments(spec, lattice, particles, increments, exec)?;
    out.seed = seed;
    Ok(out)
}

/// Volterra synthesis from caller-supplied increments `[M x K x N]`.
pub fn volterra_from_increments(
    spec: &HurstSpectrum,
    lattice: &TimeLattice,
    particles: usize,
    increments: Vec<f64>,
    exec: Exec,
) -> Result<CylindricalPathSet> {
    check_args(spec, particles)?;
    let n = lattice.steps();
    let k = spec.modes();
    if increments.len() != particles * k * n {
        return Err(Error::domain(format!(
            "expected {} increments, got {}",
            particles * k * n,
            increments.len()
        )));
    }
    let mats: Vec<(f64, VolterraMatrix)> = spec
        .distinct_hurst()
        .into_iter()
        .map(|h| VolterraMatrix::new(h, lattice.h(), n).map(|v| (h, v)))
        .collect::<Result<_>>()?;
    let per_mode: Vec<&VolterraMatrix> = spec
        .hurst
        .iter()
        .map(|h| &mats.iter().find(|(x, _)| x == h).unwrap().1)
        .collect();
    let mut fbm = vec![0.0; particles * k * (n + 1)];
    exec.fill_chunks(&mut fbm, n + 1, |c, path| {
        let inc = &increments[c * n..(c + 1) * n];
        let v = per_mode[c % k];
        if Regime::of(v.hurst()) == Regime::Brownian {
            path[0] = 0.0;
            for i in 0..n {
                path[i + 1] = path[i] + inc[i];
            }
        } else {
            v.synthesize(inc, path);
        }
    });
    Ok(CylindricalPathSet {
        lattice: *lattice,
        hurst: spec.hurst.clone(),
        particles,
        seed: 0,
        fbm,
        increments,
    })
}

fn fill_particles<F>(exec: Exec, fbm: &mut [f64], inc: &mut [f64], k: usize, n: usize, f: F)
where
    F: Fn(usize, usize, &mut [f64], &mut [f64]) + Sync + Send,
{
    let run = |c: usize, path: &mut [f64], incs: &mut [f64]| f(c / k, c % k, path, incs);
    match exec {
        Exec::Sequential => fbm
            .chunks_mut(n + 1)
            .zip(inc.chunks_mut(n))
            .enumerate()
            .for_each(|(c, (p, i))| run(c, p, i)),
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            fbm.par_chunks_mut(n + 1)
                .zip(inc.par_chunks_mut(n))
                .enumerate()
                .for_each(|(c, (p, i))| run(c, p, i))
        }
    }
}

/// `λ`-scaled view of a path set: `𝔹^{(k)}_t = λ_k B^{H_k}_t`.
#[derive(Debug, Clone, Copy)]
pub struct WeightedNoiseView<'a> {
    pub paths: &'a CylindricalPathSet,
    pub weights: &'a [f64],
}

pub fn weighted_view<'a>(paths: &'a CylindricalPathSet, spec: &'a HurstSpectrum) -> Result<WeightedNoiseView<'a>> {
    if paths.modes() != spec.modes() {
        return Err(Error::domain(format!(
            "path set has {} modes, spectrum {}",
            paths.modes(),
            spec.modes()
        )));
    }
    Ok(WeightedNoiseView {
        paths,
        weights: &spec.weights,
    })
}

impl WeightedNoiseView<'_> {
    pub fn value(&self, p: usize, k: usize, i: usize) -> f64 {
        self.weights[k] * self.paths.fbm(p, k)[i]
    }

    pub fn norm(&self, p: usize, i: usize) -> f64 {
        (0..self.paths.modes())
            .map(|k| self.value(p, k, i).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Sample mean and standard error of `‖𝔹_{t_i}‖²` at every node.
    pub fn second_moment(&self) -> Vec<(f64, f64)> {
        let m = self.paths.particles as f64;
        (0..=self.paths.steps())
            .map(|i| {
                let (mut s, mut s2) = (0.0, 0.0);
                for p in 0..self.paths.particles {
                    let v = self.norm(p, i).powi(2);
                    s += v;
                    s2 += v * v;
                }
                let mean = s / m;
                let var = (s2 / m - mean * mean).max(0.0) * m / (m - 1.0).max(1.0);
                (mean, (var / m).sqrt())
            })
            .collect()
    }
}

/// Per-mode `(mean of sup_t |B_t|, T^H / sqrt(H))`; reported, not asserted.
pub fn expected_sup_diagnostic(paths: &CylindricalPathSet) -> Vec<(f64, f64)> {
    let t = paths.lattice.horizon();
    (0..paths.modes())
        .map(|k| {
            let mean = (0..paths.particles)
                .map(|p| paths.fbm(p, k).iter().fold(0.0f64, |a, b| a.max(b.abs())))
                .sum::<f64>()
                / paths.particles as f64;
            let h = paths.hurst[k];
            (mean, t.powf(h) / h.sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(h: &[f64]) -> HurstSpectrum {
        HurstSpectrum::new(h.to_vec(), vec![1.0; h.len()], 1.0).unwrap()
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(fbm_covariance(0.5, 2.0, 1.0).unwrap(), 1.0);
        for h in [0.2, 0.5, 0.9] {
            assert!((fbm_covariance(h, 1.7, 1.7).unwrap() - 1.7f64.powf(2.0 * h)).abs() < 1e-14);
        }
        assert!((fbm_covariance(0.75, 1.0, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(fbm_covariance(0.5, -1.0, 0.0).is_err());
    }

    #[test]
    fn brownian_volterra_is_cumsum() {
        let l = TimeLattice::new(1.0, 8).unwrap();
        let p = volterra_fbm(&spec(&[0.5]), &l, 3, 11, Exec::default()).unwrap();
        for q in 0..3 {
            let mut acc = 0.0;
            for (i, d) in p.increments(q, 0).iter().enumerate() {
                acc += d;
                assert_eq!(p.fbm(q, 0)[i + 1], acc);
            }
        }
    }

    #[test]
    fn zero_increments_zero_path() {
        let l = TimeLattice::new(1.0, 8).unwrap();
        let p = volterra_from_increments(&spec(&[0.3, 0.7]), &l, 2, vec![0.0; 32], Exec::default()).unwrap();
        assert!(p.fbm.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn deterministic_across_policies() {
        let l = TimeLattice::new(1.0, 12).unwrap();
        let s = spec(&[0.3, 0.5, 0.7]);
        for gen in [cholesky_fbm, volterra_fbm] {
            let a = gen(&s, &l, 17, 5, Exec::Sequential).unwrap();
            let b = gen(&s, &l, 17, 5, Exec::default()).unwrap();
            assert_eq!(a, b);
            let c = gen(&s, &l, 3, 5, Exec::default()).unwrap();
            assert_eq!(a.fbm(0, 1), c.fbm(0, 1));
        }
    }

    #[test]
    fn cholesky_increments_regenerate_path() {
        let l = TimeLattice::new(1.0, 16).unwrap();
        let s = spec(&[0.3]);
        let c = cholesky_fbm(&s, &l, 4, 9, Exec::default()).unwrap();
        let v = volterra_from_increments(&s, &l, 4, c.increments.clone(), Exec::default()).unwrap();
        for (a, b) in c.fbm.iter().zip(&v.fbm) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn view_norm() {
        let l = TimeLattice::new(1.0, 8).unwrap();
        let s = HurstSpectrum::new(vec![0.3, 0.7], vec![1.0, 0.0], 1.0).unwrap();
        let p = volterra_fbm(&s, &l, 2, 1, Exec::default()).unwrap();
        let v = weighted_view(&p, &s).unwrap();
        for i in 0..=8 {
            assert_eq!(v.norm(1, i), p.fbm(1, 0)[i].abs());
        }
        assert_eq!(v.norm(0, 0), 0.0);
        let other = spec(&[0.5]);
        assert!(weighted_view(&p, &other).is_err());
    }
}
