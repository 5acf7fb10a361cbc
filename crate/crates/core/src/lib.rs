//! Simulation, certification and falsification of state-space fading memory.
//!
//! Modules build on each other bottom-up: [`comparison`] functions and
//! [`signals`] feed the [`dynamics`] integrator, which [`fm_analysis`] and
//! [`approximator`] drive over seeded ensembles.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approximator;
pub mod comparison;
pub mod dynamics;
pub mod error;
pub mod fm_analysis;
pub mod signals;

pub use approximator::{
    approx_eval, build_filterbank, fit_readout, nrmse, run_bank, train_approximator,
    ApproximatorConfig, CascadeApproximator, FilterBank, PolynomialReadout, TrainingMetadata,
};
pub use comparison::{
    kernel_from_gain, kernel_monotone_envelope, GainFunction, KLFunction, MemoryKernel,
};
pub use dynamics::{
    convolution_oracle, counterexample_a1_model, counterexample_a2_model, counterexample_a3_model,
    integrate, lowpass_model, lyapunov_sample_check, memristor_internal_model, memristor_model,
    LyapunovCheckSpec, LyapunovReport, MemristorParams, ModelSpec, SystemModel, Trajectory,
};
pub use error::{Error, Result};
pub use fm_analysis::{
    check_budget, cico_probe, clip_to_budget, falsify_fm, fit_exponential_rate, fm_margin,
    input_budget, pipo_probe, EnsembleSpec, FitOptions, FitOutcome, FmCertificateCandidate,
    FmCheckReport, FmForm, GainFamily,
};
pub use signals::{
    fading_sup_norm, generate_signal, signal_diff, sup_norm_prefix, SampledSignal,
    SignalGeneratorSpec, SignalKind, TimeGrid,
};
