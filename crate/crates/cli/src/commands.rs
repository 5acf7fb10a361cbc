//! One function per subcommand: run the module operation, write artifacts, summarize.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use fmlab::fm_analysis::{check_budget, cico_probe, pipo_probe};
use fmlab::{
    falsify_fm, fit_exponential_rate, generate_signal, input_budget, integrate,
    lyapunov_sample_check, nrmse, train_approximator, CascadeApproximator, FitOutcome,
    SampledSignal,
};
use serde::Serialize;
use serde_json::json;

use crate::config::*;
use crate::{CliError, Outcome};

pub(crate) fn create(out: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(out)?;
    let path = out.join(name);
    let file = File::create(&path)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

/// Pretty JSON with a trailing newline.
pub(crate) fn write_json(out: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::Numeric(format!("cannot serialize {name}: {e}")))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_signal(out: &Path, name: &str, s: &SampledSignal) -> Result<(), CliError> {
    let mut w = create(out, name)?;
    s.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn simulate(cfg: &SimulateConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model.build()?;
    let u = generate_signal(&cfg.input, &cfg.grid)?;
    let traj = integrate(&model, &cfg.x0, &u, cfg.substeps)?;
    let mut w = create(out, "states.csv")?;
    traj.write_states_csv(&mut w)?;
    w.flush()?;
    write_signal(out, "outputs.csv", &traj.outputs)?;
    log::info!("{}: integrated {} steps", model.label, cfg.grid.n - 1);
    Ok(Outcome::new(true)
        .with("model", cfg.model.label())
        .with("terminal_time", cfg.grid.end())
        .with("terminal_state", traj.final_state())
        .with("terminal_output", traj.outputs.at(cfg.grid.n - 1)))
}

pub fn fm(cfg: &FmConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model.build()?;
    let report = falsify_fm(&model, &cfg.candidate, &cfg.ensemble, cfg.tolerance)?;
    write_json(out, "fm_report.json", &report)?;
    log::info!(
        "{}: minimum margin {:e} over {} pairs",
        model.label,
        report.global_min_margin,
        cfg.ensemble.pairs
    );
    Ok(Outcome::new(report.pass)
        .with("model", cfg.model.label())
        .with("global_min_margin", report.global_min_margin)
        .with("witness", &report.witness)
        .with("divergences", report.divergences.len()))
}

pub fn kernel_fit(cfg: &KernelFitConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model.build()?;
    let fit = fit_exponential_rate(&model, &cfg.family, &cfg.ensemble, &cfg.options)?;
    write_json(out, "kernel_fit.json", &fit)?;
    let outcome = Outcome::new(fit.is_certified()).with("model", cfg.model.label());
    Ok(match &fit {
        FitOutcome::Certified {
            rate_hat,
            gamma_fitted,
            upper_check_fails,
            ..
        } => {
            log::info!("{}: certified kernel rate {rate_hat:.6}", model.label);
            outcome
                .with("rate_hat", rate_hat)
                .with("gamma", gamma_fitted)
                .with("upper_check_fails", upper_check_fails)
        }
        FitOutcome::NoCertificate { reason, .. } => {
            log::info!("{}: {reason}", model.label);
            outcome.with("reason", reason)
        }
    })
}

pub fn budget(cfg: &BudgetConfig, out: &Path) -> Result<Outcome, CliError> {
    let budget = input_budget(&cfg.gamma, &cfg.kernel, cfg.r, cfg.t_star, &cfg.grid)?;
    write_signal(out, "budget.csv", &budget)?;
    let outcome = Outcome::new(true).with(
        "budget_at_t_star",
        budget.at(cfg.grid.index_of(cfg.t_star))[0],
    );
    let Some(check) = &cfg.check else {
        return Ok(outcome);
    };
    if check.ensemble.grid != cfg.grid {
        return Err(CliError::Config(
            "check ensemble must use the budget grid".into(),
        ));
    }
    let model = check.model.build()?;
    let report = check_budget(
        &model,
        &check.beta,
        &budget,
        cfg.r,
        cfg.t_star,
        &check.ensemble,
        check.tolerance,
    )?;
    write_json(out, "budget_check.json", &report)?;
    log::info!(
        "{}: budget check minimum margin {:e}",
        model.label,
        report.global_min_margin
    );
    Ok(Outcome {
        pass: report.pass,
        ..outcome
    }
    .with("global_min_margin", report.global_min_margin)
    .with("witness", &report.witness))
}

pub fn cico(cfg: &CicoConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model.build()?;
    let u_a = generate_signal(&cfg.input_a, &cfg.grid)?;
    let u_b = generate_signal(&cfg.input_b, &cfg.grid)?;
    let report = cico_probe(
        &model,
        &cfg.x0_a,
        &cfg.x0_b,
        &u_a,
        &u_b,
        cfg.tail_window,
        cfg.tol,
        cfg.substeps,
    )?;
    write_json(out, "cico.json", &report)?;
    Ok(Outcome::new(report.converged)
        .with("model", cfg.model.label())
        .with("tail_sup", report.tail_sup)
        .with("input_tail_sup", report.input_tail_sup))
}

pub fn pipo(cfg: &PipoConfig, out: &Path) -> Result<Outcome, CliError> {
    if cfg.x0.is_empty() {
        return Err(CliError::Config(
            "pipo needs at least one initial condition".into(),
        ));
    }
    let model = cfg.model.build()?;
    let u = generate_signal(&cfg.input, &cfg.grid)?;
    let runs = cfg
        .x0
        .iter()
        .map(|x0| {
            pipo_probe(
                &model,
                x0,
                &u,
                cfg.period,
                cfg.periods,
                cfg.burn_in,
                cfg.substeps,
            )
        })
        .collect::<fmlab::Result<Vec<_>>>()?;
    let waveform_gap = runs
        .iter()
        .flat_map(|r| {
            r.limit_waveform
                .iter()
                .zip(&runs[0].limit_waveform)
                .map(|(a, b)| (a - b).abs())
        })
        .fold(0.0, f64::max);
    let last_gap = runs
        .iter()
        .map(|r| *r.period_map_gaps.last().unwrap_or(&0.0))
        .fold(0.0, f64::max);
    write_json(
        out,
        "pipo.json",
        &json!({ "runs": runs, "waveform_gap": waveform_gap, "tol": cfg.tol }),
    )?;
    Ok(Outcome::new(last_gap <= cfg.tol && waveform_gap <= cfg.tol)
        .with("model", cfg.model.label())
        .with("amplitude", runs[0].amplitude)
        .with("phase", runs[0].phase)
        .with("last_period_gap", last_gap)
        .with("waveform_gap", waveform_gap))
}

pub fn iss_sample(cfg: &IssSampleConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model.build()?;
    let report = lyapunov_sample_check(&model, &cfg.check)?;
    write_json(out, "iss_sample.json", &report)?;
    Ok(Outcome::new(report.violation_count == 0)
        .with("model", cfg.model.label())
        .with("premise_hits", report.premise_hits)
        .with("violation_count", report.violation_count)
        .with("first_violation", report.first_violation))
}

pub fn approx_train(cfg: &ApproxTrainConfig, out: &Path) -> Result<Outcome, CliError> {
    let target = cfg.target.build()?;
    let cascade = train_approximator(&target, &cfg.x0, &cfg.ensemble, &cfg.approximator)?;
    write_json(out, "cascade.json", &cascade)?;
    let meta = cascade
        .metadata
        .as_ref()
        .expect("training records metadata");
    log::info!(
        "{}: validation NRMSE {:.6}",
        target.label,
        meta.validation_nrmse
    );
    Ok(Outcome::new(meta.screen_passed)
        .with("target", cfg.target.label())
        .with("train_nrmse", meta.train_nrmse)
        .with("validation_nrmse", meta.validation_nrmse)
        .with("screen_passed", meta.screen_passed))
}

pub fn approx_eval(cfg: &ApproxEvalConfig, out: &Path) -> Result<Outcome, CliError> {
    let file = File::open(&cfg.cascade)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", cfg.cascade.display())))?;
    let cascade: CascadeApproximator = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| CliError::Config(format!("{}: {e}", cfg.cascade.display())))?;
    cascade.validate()?;
    let mut predictions = Vec::with_capacity(cfg.inputs.len());
    let mut inputs = Vec::with_capacity(cfg.inputs.len());
    for (i, spec) in cfg.inputs.iter().enumerate() {
        let u = generate_signal(spec, &cfg.grid)?;
        let y = fmlab::approx_eval(&cascade, &u)?;
        write_signal(out, &format!("prediction_{i}.csv"), &y)?;
        predictions.push(y);
        inputs.push(u);
    }
    let outcome = Outcome::new(true).with("signals", cfg.inputs.len());
    let Some(target) = &cfg.target else {
        return Ok(outcome);
    };
    let model = target.model.build()?;
    let truth = inputs
        .iter()
        .map(|u| integrate(&model, &target.x0, u, target.substeps).map(|t| t.outputs))
        .collect::<fmlab::Result<Vec<_>>>()?;
    let score = nrmse(&predictions, &truth)?;
    let pass = target.max_nrmse.is_none_or(|m| score <= m);
    Ok(Outcome { pass, ..outcome }.with("nrmse", score))
}
