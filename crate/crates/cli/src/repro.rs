//! Canned experiments with fixed seeds. Reports are byte-identical across runs
//! and thread counts; nothing time- or host-dependent is written.

use std::path::Path;

use fmlab::fm_analysis::{
    adversarial_drive, cico_probe, memristor_output_certificate, DEFAULT_MARGIN_TOL,
    DEFAULT_PROBE_TOL,
};
use fmlab::{
    counterexample_a1_model, counterexample_a2_model, counterexample_a3_model, falsify_fm,
    fit_exponential_rate, integrate, lowpass_model, memristor_internal_model, memristor_model,
    signal_diff, train_approximator, ApproximatorConfig, EnsembleSpec, FitOptions, FitOutcome,
    FmCertificateCandidate, GainFamily, MemristorParams, SampledSignal, SignalKind, TimeGrid,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::commands::{create, write_json};
use crate::{CliError, Outcome};

/// Margin floor for the low-pass certificate check.
pub const LOWPASS_MARGIN_FLOOR: f64 = -1e-6;
/// Memristor current bound.
pub const CURRENT_BOUND: f64 = 2.0;
pub const APPROX_FILTERS: [usize; 4] = [2, 4, 8, 16];
/// Allowed relative increase of validation NRMSE between consecutive bank sizes.
pub const NRMSE_BAND: f64 = 0.05;
/// Validation NRMSE of the largest bank must not exceed this; the baseline
/// run gave 8.63e-2, 3.19e-2, 2.99e-2, 2.99e-2 for 2, 4, 8, 16 filters.
pub const APPROX_NRMSE_CEILING: f64 = 0.035;

#[derive(Debug, Clone, Serialize)]
pub struct Experiment {
    pub name: &'static str,
    pub expectation: &'static str,
    pub pass: bool,
    pub observed: String,
    pub config: Value,
    pub report: Value,
}

fn grid(horizon: f64, dt: f64) -> TimeGrid {
    TimeGrid::with_horizon(0.0, horizon, dt).expect("canned grid")
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

/// Low-pass certificate ensemble: amplitude bound 2, horizon `20τ`, step `τ/100`.
pub fn lowpass_ensemble(tau: f64, pairs: usize, seed: u64) -> EnsembleSpec {
    EnsembleSpec {
        x0_box: vec![[-1.0, 1.0]],
        inputs: vec![
            SignalKind::PiecewiseConstant {
                levels: 10,
                amplitude: 2.0,
            },
            SignalKind::SmoothedNoise {
                amplitude: 2.0,
                correlation_time: tau,
            },
            SignalKind::Sinusoid {
                amplitude: 2.0,
                omega: 1.0 / tau,
                phase: 0.0,
            },
        ],
        inputs_b: None,
        input_dim: 1,
        pairs,
        grid: grid(20.0 * tau, tau / 100.0),
        seed,
        substeps: 1,
    }
}

/// Bounded currents `|I| ≤ 2` for the memristor experiments.
pub fn memristor_ensemble(pairs: usize, seed: u64) -> EnsembleSpec {
    EnsembleSpec {
        x0_box: vec![[-1.0, 1.0]],
        inputs: vec![
            SignalKind::PiecewiseConstant {
                levels: 8,
                amplitude: CURRENT_BOUND,
            },
            SignalKind::SmoothedNoise {
                amplitude: CURRENT_BOUND,
                correlation_time: 1.0,
            },
            SignalKind::Sinusoid {
                amplitude: CURRENT_BOUND,
                omega: 1.0,
                phase: 0.0,
            },
        ],
        inputs_b: None,
        input_dim: 1,
        pairs,
        grid: grid(20.0, 0.01),
        seed,
        substeps: 1,
    }
}

pub fn cex_a2_ensemble() -> EnsembleSpec {
    EnsembleSpec {
        x0_box: vec![[-1.0, 1.0]],
        inputs: vec![
            SignalKind::PiecewiseConstant {
                levels: 8,
                amplitude: 2.0,
            },
            SignalKind::SmoothedNoise {
                amplitude: 2.0,
                correlation_time: 1.0,
            },
        ],
        inputs_b: None,
        input_dim: 1,
        pairs: 200,
        grid: grid(20.0, 0.01),
        seed: 4,
        substeps: 1,
    }
}

pub fn cex_a2_fit_options() -> FitOptions {
    FitOptions {
        rate_floor: Some(0.2),
        ..FitOptions::default()
    }
}

/// Training inputs for the approximation study; `x0_box` is unused.
pub fn approx_ensemble() -> EnsembleSpec {
    EnsembleSpec {
        x0_box: vec![[0.0, 0.0]],
        inputs: vec![SignalKind::SmoothedNoise {
            amplitude: 2.0,
            correlation_time: 1.0,
        }],
        inputs_b: None,
        input_dim: 1,
        pairs: 40,
        grid: grid(40.0, 0.05),
        seed: 11,
        substeps: 1,
    }
}

pub fn approx_config(n_filters: usize) -> ApproximatorConfig {
    ApproximatorConfig {
        n_filters,
        rate_min: 0.1,
        rate_max: 10.0,
        degree: 3,
        ridge: 1e-2,
        feedthrough: true,
        validation_fraction: 0.2,
    }
}

/// `(e^{αT} − 1)/(α(T + 1))`: state gap of the time-varying counterexample
/// under the drive `e^{α(T−t)}` from equal initial states.
pub fn cex_a2_drive_gap(alpha: f64, t_end: f64) -> f64 {
    (alpha * t_end).exp_m1() / (alpha * (t_end + 1.0))
}

fn lowpass_certificate_experiment() -> Result<Experiment, CliError> {
    let tau = 1.0;
    let ens = lowpass_ensemble(tau, 1000, 1);
    let cand = fmlab::fm_analysis::lowpass_certificate(tau)?;
    let report = falsify_fm(&lowpass_model(tau)?, &cand, &ens, DEFAULT_MARGIN_TOL)?;
    Ok(Experiment {
        name: "lowpass_certificate",
        expectation: "global minimum margin >= -1e-6 with no divergences",
        pass: report.global_min_margin >= LOWPASS_MARGIN_FLOOR && report.divergences.is_empty(),
        observed: format!("min margin {:.3e}", report.global_min_margin),
        config: json!({ "model": { "model": "lowpass", "tau": tau }, "ensemble": ens, "candidate": cand }),
        report: to_value(&report),
    })
}

fn memristor_fm_experiment() -> Result<Experiment, CliError> {
    let params = MemristorParams::default();
    let fit_ens = memristor_ensemble(1000, 1);
    let check_ens = memristor_ensemble(2000, 2);
    let family = GainFamily::default();
    let opts = FitOptions::default();
    let internal = memristor_internal_model(params)?;
    let fit = fit_exponential_rate(&internal, &family, &fit_ens, &opts)?;
    let config = json!({ "params": params, "fit_ensemble": fit_ens, "check_ensemble": check_ens, "current_bound": CURRENT_BOUND });
    let FitOutcome::Certified {
        rate_hat,
        candidate,
        ..
    } = &fit
    else {
        return Ok(Experiment {
            name: "memristor_fm",
            expectation:
                "internal state certified; certificate and output certificate pass fresh pairs",
            pass: false,
            observed: "no certificate".into(),
            config,
            report: to_value(&fit),
        });
    };
    let state_report = falsify_fm(&internal, candidate, &check_ens, DEFAULT_MARGIN_TOL)?;
    let output_cand: FmCertificateCandidate =
        memristor_output_certificate(candidate, &params, CURRENT_BOUND)?;
    let output_report = falsify_fm(
        &memristor_model(params)?,
        &output_cand,
        &check_ens,
        DEFAULT_MARGIN_TOL,
    )?;
    Ok(Experiment {
        name: "memristor_fm",
        expectation:
            "internal state certified; certificate and output certificate pass fresh pairs",
        pass: state_report.pass && output_report.pass,
        observed: format!(
            "rate {rate_hat:.4}, state min margin {:.3e}, output min margin {:.3e}",
            state_report.global_min_margin, output_report.global_min_margin
        ),
        config,
        report: json!({ "fit": fit, "state_check": state_report, "output_check": output_report }),
    })
}

fn cex_a1_cico_experiment() -> Result<Experiment, CliError> {
    let g = grid(10.0, 0.01);
    let pulse = SampledSignal::from_fn(g, |t| if t <= 1.0 { 1.0 } else { 0.0 })?;
    let zero = SampledSignal::zeros(g, 1)?;
    let (window, tol) = (0.1, DEFAULT_PROBE_TOL);
    let a1 = cico_probe(
        &counterexample_a1_model(),
        &[0.0, 0.0],
        &[0.0, 0.0],
        &pulse,
        &zero,
        window,
        tol,
        1,
    )?;
    let lp = cico_probe(
        &lowpass_model(1.0)?,
        &[0.0],
        &[0.0],
        &pulse,
        &zero,
        window,
        tol,
        1,
    )?;
    Ok(Experiment {
        name: "cex_a1_cico",
        expectation:
            "counterexample does not converge with tail sup in [0.98, 1]; low-pass converges",
        pass: !a1.converged && (0.98..=1.0).contains(&a1.tail_sup) && lp.converged,
        observed: format!(
            "tail sup {:.6}, low-pass tail sup {:.3e}",
            a1.tail_sup, lp.tail_sup
        ),
        config: json!({ "horizon": 10.0, "dt": 0.01, "pulse_end": 1.0, "tail_window": window, "tol": tol }),
        report: json!({ "counterexample": a1, "lowpass": lp }),
    })
}

fn cex_a2_kernel_fit_experiment() -> Result<Experiment, CliError> {
    let ens = cex_a2_ensemble();
    let opts = cex_a2_fit_options();
    let model = counterexample_a2_model();
    let fit = fit_exponential_rate(&model, &GainFamily::default(), &ens, &opts)?;
    let rejected = matches!(&fit, FitOutcome::NoCertificate { reason, .. } if reason.contains("no exponential certificate found"));
    let (alpha, t_end) = (1.0, 10.0);
    let g = grid(t_end, 0.01);
    let drive = adversarial_drive(&g, alpha, 1.0)?;
    let xa = integrate(&model, &[0.0], &drive, 1)?;
    let xb = integrate(&model, &[0.0], &SampledSignal::zeros(g, 1)?, 1)?;
    let gap = xa.final_state()[0] - xb.final_state()[0];
    let expected = cex_a2_drive_gap(alpha, t_end);
    let rel = (gap / expected - 1.0).abs();
    Ok(Experiment {
        name: "cex_a2_kernel_fit",
        expectation: "no exponential certificate; drive gap matches closed form within 0.1%",
        pass: rejected && rel <= 1e-3,
        observed: format!(
            "certified {}, drive gap {gap:.6} vs {expected:.6}",
            fit.is_certified()
        ),
        config: json!({ "ensemble": ens, "options": opts, "alpha": alpha, "t_end": t_end }),
        report: json!({ "fit": fit, "drive_gap": gap, "closed_form": expected, "relative_error": rel }),
    })
}

fn cex_a3_reduction_experiment() -> Result<Experiment, CliError> {
    let ens = EnsembleSpec {
        pairs: 20,
        seed: 5,
        ..cex_a2_ensemble()
    };
    let (a2, a3) = (counterexample_a2_model(), counterexample_a3_model());
    let mut gaps = Vec::with_capacity(ens.pairs);
    for i in 0..ens.pairs {
        let pair = ens.sample_pair(i)?;
        let x = integrate(&a2, &pair.x0_a, &pair.u_a, 1)?.outputs;
        let x2 = integrate(&a3, &[1.0, pair.x0_a[0]], &pair.u_a, 1)?.outputs;
        gaps.push(signal_diff(&x, &x2)?.max_norm());
    }
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    Ok(Experiment {
        name: "cex_a3_reduction",
        expectation: "x2 of the autonomous extension tracks the time-varying system within 1e-5",
        pass: worst <= 1e-5,
        observed: format!("max sup gap {worst:.3e}"),
        config: json!({ "ensemble": ens, "x1_0": 1.0 }),
        report: json!({ "sup_gaps": gaps }),
    })
}

fn memristor_approximation_experiment() -> Result<Experiment, CliError> {
    let target = memristor_model(MemristorParams::default())?;
    let ens = approx_ensemble();
    let mut rows = Vec::with_capacity(APPROX_FILTERS.len());
    for n in APPROX_FILTERS {
        let cascade = train_approximator(&target, &[0.0], &ens, &approx_config(n))?;
        let meta = cascade.metadata.expect("training records metadata");
        log::info!("{n} filters: validation NRMSE {:.6}", meta.validation_nrmse);
        rows.push(json!({
            "n_filters": n,
            "train_nrmse": meta.train_nrmse,
            "validation_nrmse": meta.validation_nrmse,
            "screen_passed": meta.screen_passed,
        }));
    }
    let val: Vec<f64> = rows
        .iter()
        .map(|r| r["validation_nrmse"].as_f64().unwrap_or(f64::NAN))
        .collect();
    let monotone = val.windows(2).all(|w| w[1] <= (1.0 + NRMSE_BAND) * w[0]);
    let last = val[val.len() - 1];
    Ok(Experiment {
        name: "memristor_approximation",
        expectation:
            "validation NRMSE nonincreasing within 5%, 16 filters beat 2, 16-filter NRMSE <= 0.035",
        pass: monotone && last < val[0] && last <= APPROX_NRMSE_CEILING,
        observed: format!(
            "validation NRMSE {}",
            val.iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
        config: json!({
            "x0": [0.0],
            "ensemble": ens,
            "approximators": APPROX_FILTERS.iter().map(|&n| approx_config(n)).collect::<Vec<_>>(),
        }),
        report: json!({ "runs": rows }),
    })
}

/// Runs every canned experiment and writes one report per experiment,
/// `summary.csv` and `manifest.json` under `out`.
pub fn run(out: &Path) -> Result<Outcome, CliError> {
    let runners: [fn() -> Result<Experiment, CliError>; 6] = [
        lowpass_certificate_experiment,
        memristor_fm_experiment,
        cex_a1_cico_experiment,
        cex_a2_kernel_fit_experiment,
        cex_a3_reduction_experiment,
        memristor_approximation_experiment,
    ];
    let mut summary = csv::Writer::from_writer(create(out, "summary.csv")?);
    summary
        .write_record(["experiment", "pass", "observed", "expectation"])
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut manifest = Vec::with_capacity(runners.len());
    let mut failed = Vec::new();
    for (i, run) in runners.iter().enumerate() {
        let exp = run()?;
        log::info!(
            "{}: {} ({})",
            exp.name,
            if exp.pass { "pass" } else { "FAIL" },
            exp.observed
        );
        let file = format!("{:02}_{}.json", i + 1, exp.name);
        write_json(out, &file, &exp)?;
        summary
            .write_record([
                exp.name,
                if exp.pass { "pass" } else { "fail" },
                &exp.observed,
                exp.expectation,
            ])
            .map_err(|e| CliError::Config(e.to_string()))?;
        manifest.push(json!({ "name": exp.name, "report": file, "config": exp.config }));
        if !exp.pass {
            failed.push(exp.name);
        }
    }
    summary.flush()?;
    write_json(
        out,
        "manifest.json",
        &json!({
            "experiments": manifest,
            "thresholds": {
                "lowpass_margin_floor": LOWPASS_MARGIN_FLOOR,
                "nrmse_band": NRMSE_BAND,
                "approx_nrmse_ceiling": APPROX_NRMSE_CEILING,
            },
        }),
    )?;
    Ok(Outcome::new(failed.is_empty())
        .with("experiments", runners.len())
        .with("failed", failed))
}
