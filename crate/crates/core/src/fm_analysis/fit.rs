use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::margin::{
    assemble_report, run_pair, state_gap, EnsembleSpec, FmCheckReport, PairNorms, PairRun,
};
use super::{FmCertificateCandidate, FmForm, DEFAULT_MARGIN_TOL};
use crate::comparison::{kernel_monotone_envelope, GainFunction, KLFunction, MemoryKernel};
use crate::dynamics::{integrate, MemristorParams, SystemModel};
use crate::error::{domain, Error, Result};
use crate::signals::{fading_series_from_norms, signal_diff, SampledSignal, TimeGrid};

/// Probe drives are cut where their fading norm falls below this fraction
/// of the peak; smaller output differences are dominated by roundoff.
const PROBE_DYNAMIC_RANGE: f64 = 1e-9;

/// `{scale·base : scale ∈ scales}`, searched in increasing scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainFamily {
    pub base: GainFunction,
    pub scales: Vec<f64>,
}

impl Default for GainFamily {
    /// Linear gains with 21 log-spaced slopes from 0.1 to 10.
    fn default() -> Self {
        GainFamily {
            base: GainFunction::Linear { slope: 1.0 },
            scales: (0..21)
                .map(|i| 10f64.powf(-1.0 + i as f64 / 10.0))
                .collect(),
        }
    }
}

impl GainFamily {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.scales.is_empty() {
            return domain("gain family needs at least one scale");
        }
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return domain("gain family scales must be positive");
        }
        if self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return domain("gain family scales must be strictly increasing");
        }
        Ok(())
    }

    pub fn max_scale(&self) -> f64 {
        self.scales[self.scales.len() - 1]
    }

    /// Smallest member at least `required` times the base, if any.
    pub fn member_for(&self, required: f64) -> Option<f64> {
        self.scales.iter().copied().find(|&s| s >= required)
    }
}

fn default_tol() -> f64 {
    DEFAULT_MARGIN_TOL
}
fn default_ceiling() -> f64 {
    100.0
}
fn default_ratio() -> f64 {
    1.05
}
fn default_true() -> bool {
    true
}
fn default_probe_amplitude() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Smallest rate tried; defaults to `4 / horizon`.
    #[serde(default)]
    pub rate_floor: Option<f64>,
    #[serde(default = "default_ceiling")]
    pub rate_ceiling: f64,
    /// Bisection stops once `hi ≤ ratio·lo`.
    #[serde(default = "default_ratio")]
    pub bisection_ratio: f64,
    /// Adds the drive `Δu(t) ∝ e^{−α t}` to the pairs checked at each rate `α`.
    #[serde(default = "default_true")]
    pub adversarial_probe: bool,
    #[serde(default = "default_probe_amplitude")]
    pub probe_amplitude: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: DEFAULT_MARGIN_TOL,
            rate_floor: None,
            rate_ceiling: default_ceiling(),
            bisection_ratio: default_ratio(),
            adversarial_probe: true,
            probe_amplitude: 1.0,
        }
    }
}

/// One rate examined during the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTrial {
    pub rate: f64,
    /// Smallest gain scale that makes every checked pair pass.
    pub required_scale: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum FitOutcome {
    Certified {
        rate_hat: f64,
        gamma_fitted: GainFunction,
        candidate: FmCertificateCandidate,
        report: FmCheckReport,
        /// Whether `1.1·rate_hat` was confirmed to fail.
        upper_check_fails: bool,
        trials: Vec<RateTrial>,
    },
    NoCertificate {
        reason: String,
        trials: Vec<RateTrial>,
    },
}

impl FitOutcome {
    pub fn is_certified(&self) -> bool {
        matches!(self, FitOutcome::Certified { .. })
    }
}

/// `end_value·e^{α(T − t)}` on `grid`, `T` the last grid time.
pub fn adversarial_drive(grid: &TimeGrid, alpha: f64, end_value: f64) -> Result<SampledSignal> {
    let end = grid.end();
    SampledSignal::from_fn(*grid, |t| end_value * (alpha * (end - t)).exp())
}

struct FitData {
    main: Vec<PairNorms>,
    /// `‖Δy‖` for the same initial states under a shared input.
    shared: Vec<(f64, Vec<f64>)>,
}

fn simulate(
    model: &SystemModel,
    ens: &EnsembleSpec,
) -> Result<std::result::Result<FitData, (usize, f64)>> {
    type Run = std::result::Result<(PairNorms, f64, Vec<f64>), (usize, f64)>;
    let runs: Vec<Result<Run>> = (0..ens.pairs)
        .into_par_iter()
        .map(|i| {
            let pair = ens.sample_pair(i)?;
            let norms = match run_pair(model, ens, &pair, i)? {
                PairRun::Ok(p) => p,
                PairRun::Diverged { t, .. } => return Ok(Err((i, t))),
            };
            let shared = match (
                integrate(model, &pair.x0_a, &pair.u_a, ens.substeps),
                integrate(model, &pair.x0_b, &pair.u_a, ens.substeps),
            ) {
                (Ok(a), Ok(b)) => signal_diff(&a.outputs, &b.outputs)?.norms(),
                (Err(Error::Divergence { t }), _) | (_, Err(Error::Divergence { t })) => {
                    return Ok(Err((i, t)))
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            let dx0 = state_gap(&pair.x0_a, &pair.x0_b)?;
            Ok(Ok((norms, dx0, shared)))
        })
        .collect();
    let mut data = FitData {
        main: Vec::with_capacity(ens.pairs),
        shared: Vec::with_capacity(ens.pairs),
    };
    for run in runs {
        match run? {
            Ok((norms, dx0, shared)) => {
                data.main.push(norms);
                data.shared.push((dx0, shared));
            }
            Err(div) => return Ok(Err(div)),
        }
    }
    Ok(Ok(data))
}

/// `β(r, t) = K·r·env(t)` with `env` the normalized envelope of `‖Δy(t)‖/‖Δx(0)‖`
/// over shared-input pairs.
fn fit_beta(shared: &[(f64, Vec<f64>)], grid: &TimeGrid) -> Result<KLFunction> {
    let mut raw = vec![0.0f64; grid.n];
    for (dx0, dy) in shared {
        if *dx0 > 0.0 {
            for (r, &y) in raw.iter_mut().zip(dy) {
                *r = r.max(y / dx0);
            }
        }
    }
    let k = raw.iter().copied().fold(0.0, f64::max);
    if !k.is_finite() {
        return Err(Error::Numeric(
            "initial-state sensitivity is not finite".into(),
        ));
    }
    let (gain, normalized) = if k > 0.0 {
        (k, raw.iter().map(|r| r / k).collect::<Vec<_>>())
    } else {
        (1.0, raw)
    };
    let tail = normalized[normalized.len() - 1];
    let kernel = kernel_monotone_envelope(&grid.lags(), &normalized, tail)?;
    KLFunction::product(GainFunction::linear(gain)?, kernel)
}

fn kernel_for(rate: f64, grid: &TimeGrid) -> Result<MemoryKernel> {
    if rate == 0.0 {
        MemoryKernel::ones(grid.horizon())
    } else {
        MemoryKernel::exponential(rate)
    }
}

/// Smallest scale `c` with `‖Δy‖ ≤ β + c·base(F) + tol` on every pair and time.
fn required_scale(
    data: &[PairNorms],
    beta: &KLFunction,
    base: &GainFunction,
    kernel: &MemoryKernel,
    dt: f64,
    tol: f64,
) -> f64 {
    let mut c: f64 = 0.0;
    for p in data {
        let fading = fading_series_from_norms(&p.du, dt, kernel);
        for (k, (&y, &f)) in p.dy.iter().zip(&fading).enumerate() {
            let excess = y - beta.value(p.dx0, k as f64 * dt) - tol;
            if excess > 0.0 {
                let g = base.eval(f);
                c = c.max(if g > 0.0 { excess / g } else { f64::INFINITY });
            }
        }
    }
    c
}

/// Gain scale demanded by the drive `Δu(t) = P·e^{−α t}` from a common initial state.
fn probe_scale(
    model: &SystemModel,
    ens: &EnsembleSpec,
    base: &GainFunction,
    rate: f64,
    amplitude: f64,
) -> Result<f64> {
    let g = &ens.grid;
    let span = g.horizon().min(-PROBE_DYNAMIC_RANGE.ln() / rate);
    let n = ((span / g.dt).floor() as usize + 1).max(2);
    let grid = TimeGrid::new(g.t0, g.dt, n)?;
    let m = ens.input_dim;
    let per_channel = amplitude / (m as f64).sqrt();
    let drive = adversarial_drive(&grid, rate, per_channel * (-rate * grid.horizon()).exp())?;
    let u_a = SampledSignal::new(
        grid,
        m,
        drive
            .as_slice()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, m))
            .collect(),
    )?;
    let u_b = SampledSignal::zeros(grid, m)?;
    let x0: Vec<f64> = ens.x0_box.iter().map(|&[lo, hi]| 0.5 * (lo + hi)).collect();
    let ya = integrate(model, &x0, &u_a, ens.substeps);
    let yb = integrate(model, &x0, &u_b, ens.substeps);
    let (ya, yb) = match (ya, yb) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(Error::Divergence { .. }), _) | (_, Err(Error::Divergence { .. })) => {
            return Ok(f64::INFINITY)
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let dy = signal_diff(&ya.outputs, &yb.outputs)?.norms();
    let du = signal_diff(&u_a, &u_b)?.norms();
    let fading = fading_series_from_norms(&du, grid.dt, &MemoryKernel::exponential(rate)?);
    let mut c: f64 = 0.0;
    for (&y, &f) in dy.iter().zip(&fading) {
        if f >= PROBE_DYNAMIC_RANGE * amplitude {
            let gf = base.eval(f);
            c = c.max(if gf > 0.0 { y / gf } else { f64::INFINITY });
        }
    }
    Ok(c)
}

/// Largest exponential kernel rate for which some member of `family`, with a
/// fitted decay term, passes every pair of `ens`.
///
/// The search screens the plain incremental bound (all-ones kernel) first,
/// then doubles from the rate floor and bisects geometrically.
pub fn fit_exponential_rate(
    model: &SystemModel,
    family: &GainFamily,
    ens: &EnsembleSpec,
    opts: &FitOptions,
) -> Result<FitOutcome> {
    family.validate()?;
    ens.validate()?;
    let floor = opts.rate_floor.unwrap_or(4.0 / ens.grid.horizon());
    if !(floor > 0.0 && floor < opts.rate_ceiling && opts.bisection_ratio > 1.0 && opts.tol >= 0.0)
    {
        return domain(
            "fit options need 0 < rate_floor < rate_ceiling, bisection_ratio > 1, tol >= 0",
        );
    }
    if opts.adversarial_probe && !(opts.probe_amplitude > 0.0 && opts.probe_amplitude.is_finite()) {
        return domain("probe amplitude must be positive");
    }
    let data = match simulate(model, ens)? {
        Ok(d) => d,
        Err((pair, t)) => {
            return Ok(FitOutcome::NoCertificate {
                reason: format!("pair {pair} diverged at t = {t}"),
                trials: Vec::new(),
            })
        }
    };
    let beta = fit_beta(&data.shared, &ens.grid)?;
    let max_scale = family.max_scale();
    let mut trials = Vec::new();
    let scale_at = |rate: f64, trials: &mut Vec<RateTrial>| -> Result<f64> {
        let kernel = kernel_for(rate, &ens.grid)?;
        let mut c = required_scale(
            &data.main,
            &beta,
            &family.base,
            &kernel,
            ens.grid.dt,
            opts.tol,
        );
        if opts.adversarial_probe && rate > 0.0 && c <= max_scale {
            c = c.max(probe_scale(
                model,
                ens,
                &family.base,
                rate,
                opts.probe_amplitude,
            )?);
        }
        let pass = c <= max_scale;
        log::debug!(
            "rate {rate:.6}: required gain scale {c:.6} ({})",
            if pass { "pass" } else { "fail" }
        );
        trials.push(RateTrial {
            rate,
            required_scale: c,
            pass,
        });
        Ok(c)
    };

    let screen = scale_at(0.0, &mut trials)?;
    if screen > max_scale {
        return Ok(FitOutcome::NoCertificate {
            reason: format!(
                "incremental stability screen failed: gain scale {screen} needed, family allows {max_scale}"
            ),
            trials,
        });
    }
    let at_floor = scale_at(floor, &mut trials)?;
    if at_floor > max_scale {
        return Ok(FitOutcome::NoCertificate {
            reason: format!(
                "no exponential certificate found on ensemble: at rate floor {floor} gain scale {at_floor} needed, family allows {max_scale}"
            ),
            trials,
        });
    }
    let (mut lo, mut lo_scale) = (floor, at_floor);
    let mut hi = None;
    while lo < opts.rate_ceiling {
        let next = (2.0 * lo).min(opts.rate_ceiling);
        let c = scale_at(next, &mut trials)?;
        if c <= max_scale {
            lo = next;
            lo_scale = c;
        } else {
            hi = Some(next);
            break;
        }
    }
    let mut upper_check_fails = false;
    if let Some(mut hi) = hi {
        while hi > opts.bisection_ratio * lo {
            let mid = (lo * hi).sqrt();
            let c = scale_at(mid, &mut trials)?;
            if c <= max_scale {
                lo = mid;
                lo_scale = c;
            } else {
                hi = mid;
            }
        }
        upper_check_fails = scale_at(1.1 * lo, &mut trials)? > max_scale;
    }
    let slope = family.member_for(lo_scale).ok_or_else(|| {
        Error::Numeric(format!("no family member covers required scale {lo_scale}"))
    })?;
    let gamma = family.base.scaled(slope)?;
    let candidate = FmCertificateCandidate::new(
        beta,
        gamma.clone(),
        MemoryKernel::exponential(lo)?,
        FmForm::Sum,
    )?;
    let runs: Vec<PairRun> = data.main.into_iter().map(PairRun::Ok).collect();
    let report = assemble_report(&candidate, ens, &runs, opts.tol);
    Ok(FitOutcome::Certified {
        rate_hat: lo,
        gamma_fitted: gamma,
        candidate,
        report,
        upper_check_fails,
        trials,
    })
}

/// Output certificate for `U = M(x)·I` from a certificate of the internal state.
///
/// With `|I| ≤ Ī`, `M` Lipschitz with constant `λ` and bounded by `M̄`:
/// `β̃ = Ī·λ·β`, `γ̃(r) = M̄·r + Ī·λ·γ(r)`.
pub fn memristor_output_certificate(
    internal: &FmCertificateCandidate,
    params: &MemristorParams,
    current_bound: f64,
) -> Result<FmCertificateCandidate> {
    params.validate()?;
    if !(current_bound > 0.0 && current_bound.is_finite()) {
        return domain(format!(
            "current bound must be positive, got {current_bound}"
        ));
    }
    let factor = current_bound * params.lipschitz();
    if factor == 0.0 {
        return domain("memristance modulation depth must be nonzero");
    }
    FmCertificateCandidate::new(
        internal.beta.scaled(factor)?,
        internal.gamma.scaled(factor)?.plus_linear(params.m_bar())?,
        internal.kernel.clone(),
        internal.form,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{counterexample_a2_model, lowpass_model};
    use crate::signals::SignalKind;

    fn ensemble(tau: f64, pairs: usize) -> EnsembleSpec {
        EnsembleSpec {
            x0_box: vec![[-1.0, 1.0]],
            inputs: vec![
                SignalKind::PiecewiseConstant {
                    levels: 6,
                    amplitude: 2.0,
                },
                SignalKind::SmoothedNoise {
                    amplitude: 2.0,
                    correlation_time: tau,
                },
            ],
            inputs_b: None,
            input_dim: 1,
            pairs,
            grid: TimeGrid::with_horizon(0.0, 20.0 * tau, tau / 50.0).unwrap(),
            seed: 4,
            substeps: 1,
        }
    }

    #[test]
    fn default_family_spans_two_decades() {
        let f = GainFamily::default();
        assert_eq!(f.scales.len(), 21);
        assert!((f.scales[0] - 0.1).abs() < 1e-15 && (f.max_scale() - 10.0).abs() < 1e-12);
        assert_eq!(f.member_for(0.0), Some(f.scales[0]));
        assert_eq!(f.member_for(11.0), None);
    }

    #[test]
    fn lowpass_rate_is_below_one_and_scales_with_tau() {
        let m1 = lowpass_model(1.0).unwrap();
        let out1 = fit_exponential_rate(
            &m1,
            &GainFamily::default(),
            &ensemble(1.0, 60),
            &FitOptions::default(),
        )
        .unwrap();
        let FitOutcome::Certified {
            rate_hat: r1,
            report,
            upper_check_fails,
            ..
        } = out1
        else {
            panic!("expected a certificate, got {out1:?}")
        };
        assert!((0.4..1.0).contains(&r1), "rate {r1}");
        assert!(report.pass);
        assert!(upper_check_fails);

        let m2 = lowpass_model(2.0).unwrap();
        let out2 = fit_exponential_rate(
            &m2,
            &GainFamily::default(),
            &ensemble(2.0, 60),
            &FitOptions::default(),
        )
        .unwrap();
        let FitOutcome::Certified { rate_hat: r2, .. } = out2 else {
            panic!("expected a certificate")
        };
        assert!((r2 / (r1 / 2.0) - 1.0).abs() <= 0.05, "rates {r1} and {r2}");
    }

    #[test]
    fn counterexample_a2_has_no_exponential_certificate() {
        let m = counterexample_a2_model();
        let out = fit_exponential_rate(
            &m,
            &GainFamily::default(),
            &ensemble(1.0, 30),
            &FitOptions::default(),
        )
        .unwrap();
        match out {
            FitOutcome::NoCertificate { reason, .. } => {
                assert!(reason.contains("no exponential certificate"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adversarial_drive_shape() {
        let g = TimeGrid::with_horizon(0.0, 10.0, 0.01).unwrap();
        let d = adversarial_drive(&g, 1.0, 1.0).unwrap();
        assert!((d.at(0)[0] - 10f64.exp()).abs() < 1e-6);
        assert_eq!(d.at(g.n - 1)[0], 1.0);
    }

    #[test]
    fn memristor_output_certificate_adds_feedthrough_slope() {
        let p = MemristorParams {
            a: 1.0,
            saturation: 1.0,
            r0: 1.0,
            r_m: 0.5,
        };
        let internal = FmCertificateCandidate::new(
            KLFunction::exp_decay(GainFunction::linear(1.0).unwrap(), 1.0).unwrap(),
            GainFunction::linear(3.0).unwrap(),
            MemoryKernel::exponential(0.5).unwrap(),
            FmForm::Sum,
        )
        .unwrap();
        let out = memristor_output_certificate(&internal, &p, 2.0).unwrap();
        assert_eq!(out.gamma, GainFunction::Linear { slope: 4.5 });
        assert_eq!(out.beta, internal.beta);
        let out = memristor_output_certificate(&internal, &p, 4.0).unwrap();
        assert_eq!(out.gamma, GainFunction::Linear { slope: 7.5 });
        assert_eq!(out.beta.value(1.0, 0.0), 2.0);
    }
}
