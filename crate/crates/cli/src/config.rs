//! Run configuration. TOML, every block `deny_unknown_fields`.

use std::path::Path;

use mkvcyl_core::spectrum::HurstSpectrum;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Fixpoint,
    GirsanovCheck,
    Metric,
    FbmTest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fixpoint => "fixpoint",
            Command::GirsanovCheck => "girsanov-check",
            Command::Metric => "metric",
            Command::FbmTest => "fbm-test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spectrum: SpectrumBlock,
    pub lattice: LatticeBlock,
    pub ensemble: EnsembleBlock,
    #[serde(default)]
    pub drift: DriftBlock,
    pub command: CommandBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Per-mode value rule, resolved for any number of modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeRule {
    /// Same value for every mode.
    Constant(f64),
    /// `q^(k-1)` for mode `k = 1, 2, ...`.
    Geometric(f64),
    /// Explicit values; needs at least as many entries as modes.
    List(Vec<f64>),
    /// Values repeated in order.
    Cycle(Vec<f64>),
}

impl ModeRule {
    pub fn resolve(&self, k: usize, what: &str) -> Result<Vec<f64>, CliError> {
        Ok(match self {
            ModeRule::Constant(v) => vec![*v; k],
            ModeRule::Geometric(q) => (0..k).map(|i| q.powi(i as i32)).collect(),
            ModeRule::List(v) => {
                if v.len() < k {
                    return Err(CliError::Config(format!("{what} list has {} entries for {k} modes", v.len())));
                }
                v[..k].to_vec()
            }
            ModeRule::Cycle(v) => {
                if v.is_empty() {
                    return Err(CliError::Config(format!("{what} cycle is empty")));
                }
                (0..k).map(|i| v[i % v.len()]).collect()
            }
        })
    }
}

fn default_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBlock {
    pub modes: usize,
    pub hurst: ModeRule,
    pub lambda: ModeRule,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Mode counts for the admissibility sweep; empty disables it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<usize>,
}

impl SpectrumBlock {
    pub fn build(&self, modes: usize) -> Result<HurstSpectrum, CliError> {
        if modes == 0 {
            return Err(CliError::Config("spectrum needs at least one mode".into()));
        }
        let h = self.hurst.resolve(modes, "hurst")?;
        let l = self.lambda.resolve(modes, "lambda")?;
        Ok(HurstSpectrum::new(h, l, self.horizon)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Volterra,
    Cholesky,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleBlock {
    pub particles: usize,
    pub seed: u64,
    #[serde(default)]
    pub generator: GeneratorKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Zero,
    Constant,
    MeanFieldOu,
    TanhMode,
    CustomTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableBlock {
    pub times: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub m_grid: Vec<f64>,
    /// `values[time][mode][x][m]`, flattened row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuliBlock {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftBlock {
    #[serde(default)]
    pub family: Family,
    /// `C_k`; the drift is clamped to `C_k λ_k`.
    pub bound: ModeRule,
    /// Initial state; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<ModeRule>,
    #[serde(default = "yes")]
    pub law_lipschitz: bool,
    /// `constant`: per-mode values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<ModeRule>,
    /// `mean_field_ou`: mean reversion rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// `mean_field_ou`, `tanh_mode`: weight of the law mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    /// `tanh_mode`: per-mode amplitudes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<ModeRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableBlock>,
    /// Per-mode Hölder moduli for regular modes; modes beyond the list have none.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moduli: Vec<ModuliBlock>,
}

impl Default for DriftBlock {
    fn default() -> Self {
        Self {
            family: Family::Zero,
            bound: ModeRule::Constant(1.0),
            x0: None,
            law_lipschitz: true,
            values: None,
            theta: None,
            coupling: None,
            amplitude: None,
            table: None,
            moduli: Vec::new(),
        }
    }
}

/// A measure given inline or read from a measure CSV
/// (`particle_id, x_1..x_K, mass`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

fn yes() -> bool {
    true
}

fn default_tol() -> f64 {
    0.02
}
fn default_max_iter() -> usize {
    20
}
fn default_damping() -> f64 {
    1.0
}
fn default_cap() -> usize {
    2000
}
fn default_spread() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandBlock {
    /// Must match the command given on the command line.
    pub name: Command,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Largest merged support the BL solver accepts.
    #[serde(default = "default_cap")]
    pub metric_cap: usize,
    /// Subsample node measures to this many atoms before metric evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<usize>,
    /// Fill the `wallclock_ms` trace column (breaks byte reproducibility).
    #[serde(default)]
    pub timing: bool,
    /// `fixpoint`: also run the uniqueness probe from a dispersed flow.
    #[serde(default)]
    pub uniqueness: bool,
    /// Dispersed initial flow: atoms spread evenly over `[x0, x0 + 2 spread]`.
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// Particles written to flow CSVs; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub export_particles: Option<usize>,
    /// `girsanov-check`: coordinate read by the test functional.
    #[serde(default)]
    pub coordinate: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<MeasureBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<MeasureBlock>,
}

impl CommandBlock {
    pub fn new(name: Command) -> Self {
        Self {
            name,
            tol: default_tol(),
            max_iter: default_max_iter(),
            damping: default_damping(),
            metric_cap: default_cap(),
            subsample: None,
            timing: false,
            uniqueness: false,
            spread: default_spread(),
            export_particles: None,
            coordinate: 0,
            mu: None,
            nu: None,
        }
    }
}

fn default_directory() -> String {
    "out".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    /// Raw path dump next to the CSVs.
    Binary,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that does not need the numerics.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.lattice.steps == 0 {
            return bad("lattice.steps must be positive");
        }
        if self.ensemble.particles == 0 {
            return bad("ensemble.particles must be positive");
        }
        if self.spectrum.sweep.contains(&0) {
            return bad("spectrum.sweep entries must be positive");
        }
        let c = &self.command;
        if !(c.tol > 0.0) {
            return bad("command.tol must be positive");
        }
        if c.max_iter == 0 {
            return bad("command.max_iter must be positive");
        }
        if !(c.damping > 0.0 && c.damping <= 1.0) {
            return bad("command.damping must lie in (0, 1]");
        }
        if c.subsample == Some(0) || c.export_particles == Some(0) {
            return bad("command.subsample and command.export_particles must be positive");
        }
        if c.coordinate >= self.spectrum.modes {
            return bad("command.coordinate is not a mode index");
        }
        let d = &self.drift;
        let unused = |name: &str, set: bool| -> Result<(), CliError> {
            if set {
                Err(CliError::Config(format!("drift.{name} is not a parameter of family {:?}", d.family)))
            } else {
                Ok(())
            }
        };
        use Family::*;
        unused("values", d.values.is_some() && d.family != Constant)?;
        unused("theta", d.theta.is_some() && d.family != MeanFieldOu)?;
        unused("coupling", d.coupling.is_some() && !matches!(d.family, MeanFieldOu | TanhMode))?;
        unused("amplitude", d.amplitude.is_some() && d.family != TanhMode)?;
        unused("table", d.table.is_some() && d.family != CustomTable)?;
        if d.family == Constant && d.values.is_none() {
            return bad("drift family constant needs drift.values");
        }
        if d.family == TanhMode && d.amplitude.is_none() {
            return bad("drift family tanh_mode needs drift.amplitude");
        }
        if d.family == CustomTable && d.table.is_none() {
            return bad("drift family custom_table needs drift.table");
        }
        Ok(())
    }
}
