//! Checking, falsifying and fitting fading-memory certificates, input budgets,
//! and the converging-input and periodic-input probes.

mod budget;
mod fit;
mod margin;
mod probes;

pub use budget::{check_budget, clip_to_budget, input_budget, BudgetReport};
pub use fit::{
    adversarial_drive, fit_exponential_rate, memristor_output_certificate, FitOptions, FitOutcome,
    GainFamily, RateTrial,
};
pub use margin::{
    falsify_fm, fm_margin, lowpass_certificate, Divergence, EnsembleSpec, FmCheckReport,
    PairSample, Witness, DEFAULT_MARGIN_TOL,
};
pub use probes::{cico_probe, pipo_probe, CicoReport, PipoReport, DEFAULT_PROBE_TOL};

use serde::{Deserialize, Serialize};

use crate::comparison::{GainFunction, KLFunction, MemoryKernel};
use crate::error::Result;

/// How the decay and input terms combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FmForm {
    /// `‖Δy(t)‖ ≤ β(‖Δx(0)‖, t) + γ(‖Δu‖_{w,t})`.
    #[default]
    Sum,
    /// `‖Δy(t)‖ ≤ max(β(‖Δx(0)‖, t), γ(‖Δu‖_{w,t}))`.
    Max,
}

/// A candidate `(β, γ, w)` for the fading-memory inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmCertificateCandidate {
    pub beta: KLFunction,
    pub gamma: GainFunction,
    pub kernel: MemoryKernel,
    #[serde(default)]
    pub form: FmForm,
}

impl FmCertificateCandidate {
    pub fn new(
        beta: KLFunction,
        gamma: GainFunction,
        kernel: MemoryKernel,
        form: FmForm,
    ) -> Result<Self> {
        let c = FmCertificateCandidate {
            beta,
            gamma,
            kernel,
            form,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.beta.validate()?;
        self.gamma.validate()?;
        self.kernel.validate()
    }

    /// Right-hand side of the inequality for given decay argument and fading norm.
    #[inline]
    pub(crate) fn bound(&self, dx0: f64, t: f64, fading: f64) -> f64 {
        let b = self.beta.value(dx0, t);
        let g = self.gamma.eval(fading);
        match self.form {
            FmForm::Sum => b + g,
            FmForm::Max => b.max(g),
        }
    }
}
