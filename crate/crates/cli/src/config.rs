//! Command configs. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use fmlab::fm_analysis::{DEFAULT_MARGIN_TOL, DEFAULT_PROBE_TOL};
use fmlab::{
    ApproximatorConfig, EnsembleSpec, FitOptions, FmCertificateCandidate, GainFamily, GainFunction,
    KLFunction, LyapunovCheckSpec, MemoryKernel, ModelSpec, SignalGeneratorSpec, TimeGrid,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Configs whose random draws can be reseeded from the command line.
pub trait Seeded {
    fn override_seed(&mut self, seed: u64);
}

/// Reads and parses `path`, then applies the seed override.
pub fn load<T: DeserializeOwned + Seeded>(path: &Path, seed: Option<u64>) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: T = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    Ok(cfg)
}

fn one() -> usize {
    1
}
fn margin_tol() -> f64 {
    DEFAULT_MARGIN_TOL
}
fn probe_tol() -> f64 {
    DEFAULT_PROBE_TOL
}
fn budget_tol() -> f64 {
    1e-6
}
fn pipo_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelSpec,
    pub grid: TimeGrid,
    pub input: SignalGeneratorSpec,
    pub x0: Vec<f64>,
    #[serde(default = "one")]
    pub substeps: usize,
}

impl Seeded for SimulateConfig {
    fn override_seed(&mut self, seed: u64) {
        self.input.seed = seed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmConfig {
    pub model: ModelSpec,
    pub ensemble: EnsembleSpec,
    pub candidate: FmCertificateCandidate,
    #[serde(default = "margin_tol")]
    pub tolerance: f64,
}

impl Seeded for FmConfig {
    fn override_seed(&mut self, seed: u64) {
        self.ensemble.seed = seed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFitConfig {
    pub model: ModelSpec,
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub family: GainFamily,
    #[serde(default)]
    pub options: FitOptions,
}

impl Seeded for KernelFitConfig {
    fn override_seed(&mut self, seed: u64) {
        self.ensemble.seed = seed;
    }
}

/// Pairs on which a budget is checked against `β + r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetCheck {
    pub model: ModelSpec,
    pub beta: KLFunction,
    pub ensemble: EnsembleSpec,
    #[serde(default = "budget_tol")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub gamma: GainFunction,
    pub kernel: MemoryKernel,
    pub r: f64,
    pub t_star: f64,
    pub grid: TimeGrid,
    #[serde(default)]
    pub check: Option<BudgetCheck>,
}

impl Seeded for BudgetConfig {
    fn override_seed(&mut self, seed: u64) {
        if let Some(c) = &mut self.check {
            c.ensemble.seed = seed;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CicoConfig {
    pub model: ModelSpec,
    pub grid: TimeGrid,
    pub x0_a: Vec<f64>,
    pub x0_b: Vec<f64>,
    pub input_a: SignalGeneratorSpec,
    pub input_b: SignalGeneratorSpec,
    pub tail_window: f64,
    #[serde(default = "probe_tol")]
    pub tol: f64,
    #[serde(default = "one")]
    pub substeps: usize,
}

impl Seeded for CicoConfig {
    /// `input_a` takes the seed, `input_b` the next one.
    fn override_seed(&mut self, seed: u64) {
        self.input_a.seed = seed;
        self.input_b.seed = seed.wrapping_add(1);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipoConfig {
    pub model: ModelSpec,
    pub grid: TimeGrid,
    /// One run per initial condition; limit waveforms are compared across runs.
    pub x0: Vec<Vec<f64>>,
    pub input: SignalGeneratorSpec,
    pub period: f64,
    pub periods: usize,
    pub burn_in: f64,
    /// Bound on the last period-map gap and on the cross-run waveform gap.
    #[serde(default = "pipo_tol")]
    pub tol: f64,
    #[serde(default = "one")]
    pub substeps: usize,
}

impl Seeded for PipoConfig {
    fn override_seed(&mut self, seed: u64) {
        self.input.seed = seed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssSampleConfig {
    pub model: ModelSpec,
    pub check: LyapunovCheckSpec,
}

impl Seeded for IssSampleConfig {
    fn override_seed(&mut self, seed: u64) {
        self.check.seed = seed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxTrainConfig {
    pub target: ModelSpec,
    /// Target initial state for every training run.
    pub x0: Vec<f64>,
    /// Training inputs are the `u_a` signals of this ensemble.
    pub ensemble: EnsembleSpec,
    pub approximator: ApproximatorConfig,
}

impl Seeded for ApproxTrainConfig {
    fn override_seed(&mut self, seed: u64) {
        self.ensemble.seed = seed;
    }
}

/// Reference model for scoring a cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalTarget {
    pub model: ModelSpec,
    pub x0: Vec<f64>,
    #[serde(default = "one")]
    pub substeps: usize,
    /// Fails the command when the pooled NRMSE exceeds this.
    #[serde(default)]
    pub max_nrmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxEvalConfig {
    /// Trained cascade JSON written by `approx-train`.
    pub cascade: PathBuf,
    pub grid: TimeGrid,
    pub inputs: Vec<SignalGeneratorSpec>,
    #[serde(default)]
    pub target: Option<EvalTarget>,
}

impl Seeded for ApproxEvalConfig {
    /// Input `i` takes `seed + i`.
    fn override_seed(&mut self, seed: u64) {
        for (i, spec) in self.inputs.iter_mut().enumerate() {
            spec.seed = seed.wrapping_add(i as u64);
        }
    }
}
