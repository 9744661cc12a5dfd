use super::*;
use crate::noise::{cholesky_fbm, volterra_fbm};

fn setup(hurst: Vec<f64>, weights: Vec<f64>, n: usize, m: usize, seed: u64) -> (HurstSpectrum, CylindricalPathSet) {
    let spec = HurstSpectrum::new(hurst, weights, 1.0).unwrap();
    let lat = TimeLattice::new(1.0, n).unwrap();
    let paths = volterra_fbm(&spec, &lat, m, seed, Exec::default()).unwrap();
    (spec, paths)
}

fn dirac_flow(paths: &CylindricalPathSet, x0: &[f64]) -> EmpiricalFlow {
    EmpiricalFlow::constant(paths.lattice, EmpiricalMeasure::dirac(x0.to_vec()).unwrap())
}

fn ou(spec: &HurstSpectrum, coupling: f64, bound: f64) -> DriftSpec {
    let k = spec.modes();
    DriftSpec::new(
        Box::new(MeanFieldOu { theta: 1.0, coupling }),
        vec![bound; k],
        spec,
        None,
        true,
    )
    .unwrap()
}

fn opts(tol: f64) -> FixedPointOptions {
    FixedPointOptions {
        tol,
        max_iter: 20,
        metric: FlowMetric {
            subsample: Some(100),
            seed: 11,
            ..FlowMetric::default()
        },
        ..FixedPointOptions::default()
    }
}

#[test]
fn zero_drift_is_pure_noise() {
    let (spec, paths) = setup(vec![0.3, 0.7], vec![1.0, 0.5], 16, 20, 3);
    let x0 = [0.5, -1.0];
    let d = DriftSpec::new(Box::new(Zero), vec![1.0; 2], &spec, None, false).unwrap();
    let s = solve_frozen(&d, &spec, &dirac_flow(&paths, &x0), &paths, &x0, Exec::default()).unwrap();
    for p in 0..20 {
        for i in 0..=16 {
            for k in 0..2 {
                assert_eq!(s.state(p, i)[k], x0[k] + spec.weights[k] * paths.fbm(p, k)[i]);
            }
        }
    }
}

#[test]
fn constant_drift_is_exact() {
    let (spec, paths) = setup(vec![0.3, 0.5], vec![1.0, 0.5], 32, 10, 4);
    let x0 = [0.5, -1.0];
    let c = [0.7, -0.2];
    let d = DriftSpec::new(Box::new(Constant(c.to_vec())), vec![1.0; 2], &spec, None, false).unwrap();
    let s = solve_frozen(&d, &spec, &dirac_flow(&paths, &x0), &paths, &x0, Exec::default()).unwrap();
    for p in 0..10 {
        for i in 0..=32 {
            let t = paths.lattice.node(i);
            for k in 0..2 {
                let ex = x0[k] + c[k] * t + spec.weights[k] * paths.fbm(p, k)[i];
                assert!((s.state(p, i)[k] - ex).abs() < 1e-13);
            }
        }
    }
    assert_eq!(d.clamp_events(), 0);
}

#[test]
fn ou_variance() {
    let spec = HurstSpectrum::new(vec![0.5], vec![1.0], 1.0).unwrap();
    let lat = TimeLattice::new(1.0, 64).unwrap();
    let m = 20_000;
    let paths = cholesky_fbm(&spec, &lat, m, 5, Exec::default()).unwrap();
    let d = ou(&spec, 0.0, 50.0);
    let s = solve_frozen(&d, &spec, &dirac_flow(&paths, &[0.0]), &paths, &[0.0], Exec::default()).unwrap();
    for i in (4..=64).step_by(4) {
        let t = lat.node(i);
        let v: Vec<f64> = (0..m).map(|p| s.state(p, i)[0]).collect();
        let mean = v.iter().sum::<f64>() / m as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let ex = (1.0 - (-2.0 * t).exp()) / 2.0;
        let se = ex * (2.0 / m as f64).sqrt();
        assert!((var - ex).abs() < 5.0 * se + lat.h(), "{t} {var} {ex}");
    }
    assert_eq!(d.clamp_events(), 0);

    let tight = ou(&spec, 0.0, 0.1);
    solve_frozen(&tight, &spec, &dirac_flow(&paths, &[0.0]), &paths, &[0.0], Exec::default()).unwrap();
    assert!(tight.clamp_events() > 0);
}

#[test]
fn psi_ignores_flow_for_law_free_drift() {
    let (spec, paths) = setup(vec![0.3], vec![1.0], 16, 50, 6);
    let d = ou(&spec, 0.0, 10.0);
    let a = psi_map(&d, &spec, &dirac_flow(&paths, &[0.0]), &paths, &[0.0], Exec::default()).unwrap();
    let b = psi_map(&d, &spec, &dirac_flow(&paths, &[3.0]), &paths, &[0.0], Exec::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_particle_gives_diracs() {
    let (spec, paths) = setup(vec![0.7], vec![2.0], 8, 1, 7);
    let d = DriftSpec::new(Box::new(Zero), vec![1.0], &spec, None, false).unwrap();
    let f = psi_map(&d, &spec, &dirac_flow(&paths, &[1.0]), &paths, &[1.0], Exec::default()).unwrap();
    for (i, m) in f.measures.iter().enumerate() {
        assert_eq!(m.len(), 1);
        assert_eq!(m.point(0)[0], 1.0 + 2.0 * paths.fbm(0, 0)[i]);
    }
}

#[test]
fn lattice_mismatch() {
    let (spec, paths) = setup(vec![0.3], vec![1.0], 8, 4, 1);
    let d = DriftSpec::new(Box::new(Zero), vec![1.0], &spec, None, false).unwrap();
    let other = EmpiricalFlow::constant(TimeLattice::new(1.0, 4).unwrap(), EmpiricalMeasure::dirac(vec![0.0]).unwrap());
    assert!(solve_frozen(&d, &spec, &other, &paths, &[0.0], Exec::default()).is_err());
}

#[test]
fn law_free_drift_converges_in_one_iteration() {
    let (spec, paths) = setup(vec![0.3, 0.7], vec![1.0, 0.5], 16, 200, 8);
    let d = DriftSpec::new(Box::new(Constant(vec![0.3, 0.1])), vec![1.0; 2], &spec, None, true).unwrap();
    let tr = fixed_point(&d, &spec, &paths, &[0.0, 0.0], &opts(0.02)).unwrap();
    assert!(tr.converged);
    assert_eq!(tr.iterations_used, 1);
    assert_eq!(tr.distances, vec![0.0]);
    assert_eq!(tr.iterates[1], tr.iterates[2]);

    let inits = [dirac_flow(&paths, &[0.0, 0.0]), dirac_flow(&paths, &[5.0, -5.0])];
    let u = uniqueness_probe(&d, &spec, &paths, &[0.0, 0.0], inits, &opts(0.02)).unwrap();
    assert_eq!(u.distance, 0.0);
}

#[test]
fn infinite_tolerance() {
    let (spec, paths) = setup(vec![0.5], vec![1.0], 8, 50, 9);
    let d = ou(&spec, 1.0, 10.0);
    let tr = fixed_point(&d, &spec, &paths, &[0.0], &opts(f64::INFINITY)).unwrap();
    assert!(tr.converged);
    assert_eq!(tr.iterations_used, 1);
    assert!(fixed_point(&d, &spec, &paths, &[0.0], &opts(0.0)).is_err());
}

#[test]
fn mean_field_ou_contracts_and_is_unique() {
    let (spec, paths) = setup(vec![0.3], vec![1.0], 16, 300, 10);
    let d = ou(&spec, 1.0, 20.0);
    let o = opts(0.02);
    let tr = fixed_point(&d, &spec, &paths, &[1.0], &o).unwrap();
    assert!(tr.converged, "{:?}", tr.distances);
    let res = residual(&d, &spec, &paths, &[1.0], tr.limit(), &o.metric).unwrap();
    assert!(res <= o.tol, "{res}");

    let wide: Vec<f64> = (0..300).map(|i| 4.0 + 6.0 * (i as f64 / 299.0 - 0.5)).collect();
    let wide = EmpiricalFlow::constant(paths.lattice, EmpiricalMeasure::uniform(1, wide).unwrap());
    let u = uniqueness_probe(&d, &spec, &paths, &[1.0], [dirac_flow(&paths, &[1.0]), wide], &o).unwrap();
    assert!(u.distance <= 3.0 * o.tol, "{}", u.distance);
    assert!(u.traces[1].iterations_used > 1);

    let same = uniqueness_probe(&d, &spec, &paths, &[1.0], [dirac_flow(&paths, &[1.0]), dirac_flow(&paths, &[1.0])], &o).unwrap();
    assert_eq!(same.distance, 0.0);
}

#[test]
fn damped_iteration_converges() {
    let (spec, paths) = setup(vec![0.7], vec![1.0], 16, 200, 12);
    let d = ou(&spec, 1.0, 20.0);
    let o = FixedPointOptions { damping: 0.5, max_iter: 30, ..opts(0.05) };
    let tr = fixed_point(&d, &spec, &paths, &[2.0], &o).unwrap();
    assert!(tr.converged, "{:?}", tr.distances);
    assert!(tr.limit().measures.iter().all(|m| m.len() == 200));
}

#[test]
fn trace_is_reproducible() {
    let (spec, paths) = setup(vec![0.3, 0.5], vec![1.0, 0.5], 16, 150, 13);
    let d = ou(&spec, 1.0, 20.0);
    let mut a = opts(0.01);
    a.exec = Exec::Sequential;
    a.metric.exec = Exec::Sequential;
    let ta = fixed_point(&d, &spec, &paths, &[1.0, 0.0], &a).unwrap();
    let tb = fixed_point(&d, &spec, &paths, &[1.0, 0.0], &opts(0.01)).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn reweighting_zero_drift_is_exact() {
    let (spec, paths) = setup(vec![0.3, 0.7], vec![1.0, 0.5], 16, 100, 14);
    let d = DriftSpec::new(Box::new(Zero), vec![1.0; 2], &spec, None, false).unwrap();
    let f = |x: &[f64]| x[0].clamp(-1.0, 1.0) * 0.5;
    let r = reweighted_expectation(&d, &spec, &dirac_flow(&paths, &[0.0, 0.0]), &paths, &[0.0, 0.0], &f, Exec::default()).unwrap();
    assert_eq!(r.direct, r.reweighted);
    assert_eq!(r.mean_weight, 1.0);
}

#[test]
fn reweighting_constant_brownian() {
    let (spec, paths) = setup(vec![0.5], vec![1.0], 16, 20_000, 15);
    let d = DriftSpec::new(Box::new(Constant(vec![0.5])), vec![1.0], &spec, None, false).unwrap();
    let f = |x: &[f64]| x[0].clamp(-1.0, 1.0);
    let r = reweighted_expectation(&d, &spec, &dirac_flow(&paths, &[0.0]), &paths, &[0.0], &f, Exec::default()).unwrap();
    assert!((r.direct - r.reweighted).abs() < 5.0 * r.stderr, "{r:?}");
    assert!(r.paired_stderr < r.stderr);
}
