//! Command implementations. Each writes its tables into an [`Outputs`].

use std::path::{Path, PathBuf};

use mkvcyl_core::fraccalc::TimeLattice;
use mkvcyl_core::girsanov::{certificate, stochastic_exponential};
use mkvcyl_core::measure::{
    bl_distance_with, subsample, wasserstein1, BlOptions, EmpiricalFlow, EmpiricalMeasure, FlowMetric,
};
use mkvcyl_core::mkv::{
    fixed_point, residual, solve_frozen, uniqueness_probe, reweighted_expectation, Constant, CustomTable, DriftField,
    DriftSpec, FixedPointOptions, HolderModuli, MeanFieldOu, TanhMode, Zero,
};
use mkvcyl_core::noise::{cholesky_fbm, dump, fbm_covariance, volterra_fbm, weighted_view, CylindricalPathSet};
use mkvcyl_core::spectrum::{admissibility, holder_envelope, HurstSpectrum};
use mkvcyl_core::{girsanov, Error, Exec};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{Command, Family, Format, GeneratorKind, MeasureBlock, RunConfig};
use crate::error::CliError;
use crate::table::{emit_csv, write_file, Cell, Table};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Files written so far plus a free-form summary.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub dir: PathBuf,
    pub files: Vec<OutputFile>,
    pub summary: Map<String, Value>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            summary: Map::new(),
        })
    }

    pub fn table(&mut self, name: &str, t: &Table) -> Result<(), CliError> {
        let sha256 = emit_csv(&self.dir.join(name), t)?;
        self.files.push(OutputFile {
            file: name.into(),
            sha256,
        });
        Ok(())
    }

    pub fn bytes(&mut self, name: &str, b: &[u8]) -> Result<(), CliError> {
        let sha256 = write_file(&self.dir.join(name), b)?;
        self.files.push(OutputFile {
            file: name.into(),
            sha256,
        });
        Ok(())
    }

    pub fn note(&mut self, key: &str, v: impl Serialize) {
        self.summary.insert(key.into(), serde_json::to_value(v).expect("summary serializes"));
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    spec: HurstSpectrum,
    lattice: TimeLattice,
    exec: Exec,
}

impl Ctx<'_> {
    fn paths(&self) -> Result<CylindricalPathSet, CliError> {
        let e = &self.cfg.ensemble;
        Ok(match e.generator {
            GeneratorKind::Volterra => volterra_fbm(&self.spec, &self.lattice, e.particles, e.seed, self.exec)?,
            GeneratorKind::Cholesky => cholesky_fbm(&self.spec, &self.lattice, e.particles, e.seed, self.exec)?,
        })
    }

    fn x0(&self) -> Result<Vec<f64>, CliError> {
        match &self.cfg.drift.x0 {
            Some(r) => r.resolve(self.spec.modes(), "x0"),
            None => Ok(vec![0.0; self.spec.modes()]),
        }
    }

    fn metric(&self) -> FlowMetric {
        FlowMetric {
            bl: BlOptions {
                cap: self.cfg.command.metric_cap,
                ..BlOptions::default()
            },
            subsample: self.cfg.command.subsample,
            seed: self.cfg.ensemble.seed,
            exec: self.exec,
        }
    }

    fn dirac_flow(&self, x0: &[f64]) -> Result<EmpiricalFlow, CliError> {
        Ok(EmpiricalFlow::constant(self.lattice, EmpiricalMeasure::dirac(x0.to_vec())?))
    }
}

pub fn build_drift(cfg: &RunConfig, spec: &HurstSpectrum) -> Result<DriftSpec, CliError> {
    let d = &cfg.drift;
    let k = spec.modes();
    let field: Box<dyn DriftField> = match d.family {
        Family::Zero => Box::new(Zero),
        Family::Constant => Box::new(Constant(d.values.as_ref().expect("validated").resolve(k, "drift.values")?)),
        Family::MeanFieldOu => Box::new(MeanFieldOu {
            theta: d.theta.unwrap_or(1.0),
            coupling: d.coupling.unwrap_or(1.0),
        }),
        Family::TanhMode => Box::new(TanhMode {
            amplitude: d.amplitude.as_ref().expect("validated").resolve(k, "drift.amplitude")?,
            coupling: d.coupling.unwrap_or(0.0),
        }),
        Family::CustomTable => {
            let t = d.table.as_ref().expect("validated");
            let table = CustomTable {
                times: t.times.clone(),
                x_grid: t.x_grid.clone(),
                m_grid: t.m_grid.clone(),
                values: t.values.clone(),
                modes: k,
            };
            table.validate()?;
            Box::new(table)
        }
    };
    let moduli = (!d.moduli.is_empty()).then(|| {
        (0..k)
            .map(|i| {
                d.moduli.get(i).map(|m| HolderModuli {
                    gamma: m.gamma,
                    alpha: m.alpha,
                    beta: m.beta,
                })
            })
            .collect()
    });
    Ok(DriftSpec::new(field, d.bound.resolve(k, "drift.bound")?, spec, moduli, d.law_lipschitz)?)
}

fn state_columns(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("x_{i}")).collect()
}

fn flow_table(flow: &EmpiricalFlow, limit: Option<usize>) -> Table {
    let k = flow.measures[0].dim();
    let mut cols = vec!["t".to_string(), "particle_id".to_string()];
    cols.extend(state_columns(k));
    cols.push("mass".into());
    let mut t = Table::new(cols);
    for (i, m) in flow.measures.iter().enumerate() {
        let ti = flow.lattice.node(i);
        for a in 0..m.len().min(limit.unwrap_or(usize::MAX)) {
            let mut row = vec![ti.into(), a.into()];
            row.extend(m.point(a).iter().map(|v| Cell::from(*v)));
            row.push(m.masses()[a].into());
            t.push(row);
        }
    }
    t
}

fn measure_table(m: &EmpiricalMeasure) -> Table {
    let mut cols = vec!["particle_id".to_string()];
    cols.extend(state_columns(m.dim()));
    cols.push("mass".into());
    let mut t = Table::new(cols);
    for a in 0..m.len() {
        let mut row = vec![a.into()];
        row.extend(m.point(a).iter().map(|v| Cell::from(*v)));
        row.push(m.masses()[a].into());
        t.push(row);
    }
    t
}

fn read_measure_csv(path: &Path) -> Result<EmpiricalMeasure, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = r.headers()?.len().checked_sub(2).filter(|d| *d > 0).ok_or_else(|| {
        CliError::Config(format!("{}: expected columns particle_id, x_1..x_K, mass", path.display()))
    })?;
    let (mut pts, mut masses) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| CliError::Config(format!("{}: bad number {s:?}", path.display())))
        };
        for j in 1..=dim {
            pts.push(num(&rec[j])?);
        }
        masses.push(num(&rec[dim + 1])?);
    }
    Ok(EmpiricalMeasure::new(dim, pts, masses)?)
}

fn load_measure(b: &MeasureBlock, base: &Path) -> Result<EmpiricalMeasure, CliError> {
    match (b, &b.csv) {
        (
            MeasureBlock {
                points: Some(p),
                masses,
                csv: None,
            },
            _,
        ) => {
            let dim = p.first().map_or(0, Vec::len);
            if dim == 0 || p.iter().any(|q| q.len() != dim) {
                return Err(CliError::Config("measure points must be nonempty rows of equal length".into()));
            }
            let flat: Vec<f64> = p.iter().flatten().copied().collect();
            Ok(match masses {
                Some(w) => EmpiricalMeasure::new(dim, flat, w.clone())?,
                None => EmpiricalMeasure::uniform(dim, flat)?,
            })
        }
        (
            MeasureBlock {
                points: None,
                masses: None,
                ..
            },
            Some(file),
        ) => {
            let p = Path::new(file);
            read_measure_csv(&if p.is_absolute() { p.to_path_buf() } else { base.join(p) })
        }
        _ => Err(CliError::Config("a measure needs either points (and optional masses) or csv".into())),
    }
}

fn second_moment_table(paths: &CylindricalPathSet, spec: &HurstSpectrum) -> Result<(Table, f64), CliError> {
    let view = weighted_view(paths, spec)?;
    let bound = spec.l2_weight_sq() * spec.horizon.powi(2);
    let mut t = Table::new(["t", "mean", "se", "analytic", "bound", "z"]);
    let mut max_z = 0.0f64;
    for (i, (mean, se)) in view.second_moment().into_iter().enumerate() {
        let ti = paths.lattice.node(i);
        let analytic: f64 = spec.hurst.iter().zip(&spec.weights).map(|(h, l)| l * l * ti.powf(2.0 * h)).sum();
        let z = if se > 0.0 { (mean - analytic) / se } else if mean == analytic { 0.0 } else { f64::INFINITY };
        max_z = max_z.max(z.abs());
        t.push(vec![ti.into(), mean.into(), se.into(), analytic.into(), bound.into(), z.into()]);
    }
    Ok((t, max_z))
}

fn sweep(ctx: &Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let s = &ctx.cfg.spectrum;
    if s.sweep.is_empty() {
        return Ok(());
    }
    let mut t = Table::new([
        "modes",
        "l1_lambda",
        "l1_lambda_over_sqrt_h",
        "l1_c_over_sqrt1m_h",
        "kappa",
        "rho",
        "dk_sum",
        "ok",
    ]);
    for &k in &s.sweep {
        let spec = s.build(k)?;
        let c = ctx.cfg.drift.bound.resolve(k, "drift.bound")?;
        let a = admissibility(&spec, &c)?;
        let dk: f64 = (0..k).map(|m| girsanov::dk_bound(c[m], spec.hurst[m], spec.horizon)).sum();
        t.push(vec![
            k.into(),
            a.l1_lambda.into(),
            a.l1_lambda_over_sqrt_h.into(),
            a.l1_c_over_sqrt1m_h.into(),
            a.kappa.into(),
            a.rho.into(),
            dk.into(),
            a.ok.into(),
        ]);
    }
    out.table("sweep.csv", &t)
}

fn fbm_test(ctx: &Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let paths = ctx.paths()?;
    let m = paths.particles as f64;
    let n1 = ctx.lattice.len();
    let mut cov = Table::new(["hurst", "i", "j", "t_i", "t_j", "sample_cov", "exact_cov", "deviation", "se", "z"]);
    let mut var = Table::new(["hurst", "i", "t", "sample_var", "exact_var", "se"]);
    let mut summary = Table::new(["hurst", "pairs", "max_deviation", "max_z"]);
    for h in ctx.spec.distinct_hurst() {
        let k = ctx.spec.hurst.iter().position(|x| *x == h).expect("distinct index");
        let (mut max_dev, mut max_z, mut pairs) = (0.0f64, 0.0f64, 0usize);
        for i in 1..n1 {
            let ti = ctx.lattice.node(i);
            for j in i..n1 {
                let tj = ctx.lattice.node(j);
                let s = (0..paths.particles).map(|p| {
                    let b = paths.fbm(p, k);
                    b[i] * b[j]
                });
                let sample = s.sum::<f64>() / m;
                let exact = fbm_covariance(h, ti, tj)?;
                // Var(B_s B_t) = R(s,s) R(t,t) + R(s,t)^2 for centered Gaussians
                let se = ((fbm_covariance(h, ti, ti)? * fbm_covariance(h, tj, tj)? + exact * exact) / m).sqrt();
                let dev = sample - exact;
                let z = dev / se;
                max_dev = max_dev.max(dev.abs());
                max_z = max_z.max(z.abs());
                pairs += 1;
                cov.push(vec![h.into(), i.into(), j.into(), ti.into(), tj.into(), sample.into(), exact.into(), dev.into(), se.into(), z.into()]);
                if i == j {
                    var.push(vec![h.into(), i.into(), ti.into(), sample.into(), exact.into(), (exact * 2f64.sqrt() / m.sqrt()).into()]);
                }
            }
        }
        summary.push(vec![h.into(), pairs.into(), max_dev.into(), max_z.into()]);
        out.note(&format!("max_z_h{h}"), max_z);
    }
    out.table("covariance.csv", &cov)?;
    out.table("variance.csv", &var)?;
    out.table("covariance_summary.csv", &summary)?;
    let (sm, max_z) = second_moment_table(&paths, &ctx.spec)?;
    out.table("second_moment.csv", &sm)?;
    out.note("second_moment_max_z", max_z);
    maybe_dump(ctx, out, &paths)
}

fn maybe_dump(ctx: &Ctx, out: &mut Outputs, paths: &CylindricalPathSet) -> Result<(), CliError> {
    if ctx.cfg.output.formats.contains(&Format::Binary) {
        let mut buf = Vec::new();
        dump::write_paths(&mut buf, paths, &ctx.spec.weights)?;
        out.bytes("paths.bin", &buf)?;
    }
    Ok(())
}

fn simulate(ctx: &Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let paths = ctx.paths()?;
    let drift = build_drift(ctx.cfg, &ctx.spec)?;
    let x0 = ctx.x0()?;
    let states = solve_frozen(&drift, &ctx.spec, &ctx.dirac_flow(&x0)?, &paths, &x0, ctx.exec)?;
    let flow = states.to_flow();
    out.table("flows.csv", &flow_table(&flow, ctx.cfg.command.export_particles))?;
    out.table("terminal.csv", &measure_table(flow.measures.last().expect("nonempty lattice")))?;
    let (sm, max_z) = second_moment_table(&paths, &ctx.spec)?;
    out.table("second_moment.csv", &sm)?;
    out.note("second_moment_max_z", max_z);
    out.note("terminal_mean", flow.measures.last().unwrap().mean());
    out.note("clamp_events", drift.clamp_events());
    maybe_dump(ctx, out, &paths)
}

fn dispersed_flow(ctx: &Ctx, x0: &[f64], atoms: usize) -> Result<EmpiricalFlow, CliError> {
    let k = x0.len();
    let spread = ctx.cfg.command.spread;
    let mut pts = Vec::with_capacity(atoms * k);
    for a in 0..atoms {
        // one-sided, so its mean differs from x0
        let u = if atoms > 1 { 2.0 * a as f64 / (atoms - 1) as f64 } else { 1.0 };
        pts.extend(x0.iter().map(|x| x + spread * u));
    }
    Ok(EmpiricalFlow::constant(ctx.lattice, EmpiricalMeasure::uniform(k, pts)?))
}

fn fixpoint(ctx: &Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let c = &ctx.cfg.command;
    let paths = ctx.paths()?;
    let drift = build_drift(ctx.cfg, &ctx.spec)?;
    let x0 = ctx.x0()?;
    let opts = FixedPointOptions {
        tol: c.tol,
        max_iter: c.max_iter,
        damping: c.damping,
        metric: ctx.metric(),
        timing: c.timing,
        exec: ctx.exec,
    };
    let trace = fixed_point(&drift, &ctx.spec, &paths, &x0, &opts)?;
    let mut t = Table::new(["iter", "sup_distance", "wallclock_ms"]);
    for (n, (d, w)) in trace.distances.iter().zip(&trace.wallclock_ms).enumerate() {
        t.push(vec![(n + 1).into(), (*d).into(), (*w).into()]);
    }
    out.table("trace.csv", &t)?;
    let limit = trace.limit();
    out.table("flow.csv", &flow_table(limit, c.export_particles))?;
    out.table("terminal.csv", &measure_table(limit.measures.last().expect("nonempty lattice")))?;
    out.note("iterations_used", trace.iterations_used);
    out.note("converged", trace.converged);
    out.note("distances", &trace.distances);
    if trace.converged {
        let r = residual(&drift, &ctx.spec, &paths, &x0, limit, &opts.metric)?;
        out.note("residual", r);
    }
    if c.uniqueness {
        let inits = [ctx.dirac_flow(&x0)?, dispersed_flow(ctx, &x0, paths.particles)?];
        let u = uniqueness_probe(&drift, &ctx.spec, &paths, &x0, inits, &opts)?;
        out.note("uniqueness_distance", u.distance);
        out.note("uniqueness_iterations", [u.traces[0].iterations_used, u.traces[1].iterations_used]);
    }
    out.note("clamp_events", drift.clamp_events());
    Ok(())
}

fn girsanov_check(ctx: &Ctx, out: &mut Outputs) -> Result<(), CliError> {
    let paths = ctx.paths()?;
    let drift = build_drift(ctx.cfg, &ctx.spec)?;
    let x0 = ctx.x0()?;
    let frozen = ctx.dirac_flow(&x0)?;
    let summary = drift.summarize(&frozen.measures[0]);
    let lam = &ctx.spec.weights;
    let u = |_: usize, _: usize, t: f64, y: &[f64], o: &mut [f64]| {
        for (m, v) in o.iter_mut().enumerate() {
            *v = if lam[m] > 0.0 { drift.eval(m, t, y, &summary) / lam[m] } else { 0.0 };
        }
    };
    let cert = certificate(&ctx.spec, drift.bounds(), &paths, &x0, &u, ctx.exec)?;
    out.bytes("certificate.json", format!("{}\n", serde_json::to_string_pretty(&cert).expect("serializes")).as_bytes())?;

    let samples = stochastic_exponential(&ctx.spec, &paths, &x0, &u, ctx.exec)?;
    let mut dens = Table::new(["particle_id", "log_density", "ito_term", "quadratic_term"]);
    for (p, s) in samples.iter().enumerate() {
        dens.push(vec![p.into(), s.log_density.into(), s.ito_term.into(), s.quadratic_term.into()]);
    }
    out.table("density.csv", &dens)?;
    let m = samples.len() as f64;
    let mean = samples.iter().map(|s| s.density()).sum::<f64>() / m;
    let var = samples.iter().map(|s| (s.density() - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    let se = (var / m).sqrt();
    let z = if se > 0.0 { (mean - 1.0) / se } else if mean == 1.0 { 0.0 } else { f64::INFINITY };
    let mut e = Table::new(["mean_density", "se", "z"]);
    e.push(vec![mean.into(), se.into(), z.into()]);
    out.table("martingale.csv", &e)?;

    let coord = ctx.cfg.command.coordinate;
    let f = move |x: &[f64]| 0.5 * x[coord].clamp(-1.0, 1.0);
    let r = reweighted_expectation(&drift, &ctx.spec, &frozen, &paths, &x0, &f, ctx.exec)?;
    let mut rt = Table::new(["direct", "reweighted", "stderr", "paired_stderr", "mean_weight"]);
    rt.push(vec![r.direct.into(), r.reweighted.into(), r.stderr.into(), r.paired_stderr.into(), r.mean_weight.into()]);
    out.table("reweight.csv", &rt)?;
    out.note("martingale_z", z);
    out.note("reweight_gap_over_stderr", if r.stderr > 0.0 { (r.direct - r.reweighted).abs() / r.stderr } else { 0.0 });
    out.note("clamp_events", drift.clamp_events());
    out.note("conditions_ok", cert.conditions_ok);
    if !cert.conditions_ok {
        return Err(Error::Certificate {
            modes: cert.violating_modes.clone(),
            certificate: Box::new(cert),
        }
        .into());
    }
    Ok(())
}

fn metric(ctx: &Ctx, out: &mut Outputs, base: &Path) -> Result<(), CliError> {
    let c = &ctx.cfg.command;
    let (Some(mb), Some(nb)) = (&c.mu, &c.nu) else {
        return Err(CliError::Config("metric needs command.mu and command.nu".into()));
    };
    let mut mu = load_measure(mb, base)?;
    let mut nu = load_measure(nb, base)?;
    if let Some(s) = c.subsample {
        mu = subsample(&mu, s, ctx.cfg.ensemble.seed);
        nu = subsample(&nu, s, ctx.cfg.ensemble.seed ^ 1);
    }
    let bl = bl_distance_with(&mu, &nu, &BlOptions { cap: c.metric_cap, ..BlOptions::default() })?;
    let w1 = wasserstein1(&mu, &nu)?;
    let mut t = Table::new(["bl", "w1", "atoms_mu", "atoms_nu"]);
    t.push(vec![bl.into(), w1.into(), mu.len().into(), nu.len().into()]);
    out.table("metric.csv", &t)?;
    out.note("bl", bl);
    Ok(())
}

/// Runs one command; outputs land in `out` even when a later step fails.
pub fn execute(cfg: &RunConfig, command: Command, out: &mut Outputs, config_dir: &Path, exec: Exec) -> Result<(), CliError> {
    cfg.validate()?;
    if cfg.command.name != command {
        return Err(CliError::Config(format!(
            "command block is for {} but {} was requested",
            cfg.command.name.name(),
            command.name()
        )));
    }
    let spec = cfg.spectrum.build(cfg.spectrum.modes)?;
    let lattice = TimeLattice::new(spec.horizon, cfg.lattice.steps)?;
    let (kappa, rho) = holder_envelope(&spec)?;
    out.note("kappa", kappa);
    out.note("rho", rho);
    let ctx = Ctx {
        cfg,
        spec,
        lattice,
        exec,
    };
    sweep(&ctx, out)?;
    match command {
        Command::FbmTest => fbm_test(&ctx, out),
        Command::Simulate => simulate(&ctx, out),
        Command::Fixpoint => fixpoint(&ctx, out),
        Command::GirsanovCheck => girsanov_check(&ctx, out),
        Command::Metric => metric(&ctx, out, config_dir),
    }
}
