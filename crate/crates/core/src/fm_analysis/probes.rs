use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, SystemModel};
use crate::error::{domain, Error, Result};
use crate::signals::{signal_diff, SampledSignal};

pub const DEFAULT_PROBE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CicoReport {
    pub converged: bool,
    /// `sup ‖Δy‖` over the tail window.
    pub tail_sup: f64,
    /// `sup ‖Δu‖` over the tail window.
    pub input_tail_sup: f64,
    pub window_start: f64,
    pub tol: f64,
}

/// Checks whether outputs converge together when inputs do.
///
/// The tail window is the final `tail_window` time units of the grid; the
/// input mismatch must already be below `tol` there.
#[allow(clippy::too_many_arguments)]
pub fn cico_probe(
    model: &SystemModel,
    x0_a: &[f64],
    x0_b: &[f64],
    u_a: &SampledSignal,
    u_b: &SampledSignal,
    tail_window: f64,
    tol: f64,
    substeps: usize,
) -> Result<CicoReport> {
    if !(tol > 0.0) {
        return domain(format!("tolerance must be positive, got {tol}"));
    }
    let grid = *u_a.grid();
    if !(tail_window >= 0.0 && tail_window < grid.horizon()) {
        return domain(format!(
            "tail window {tail_window} must lie within the horizon {}",
            grid.horizon()
        ));
    }
    let start = grid.index_of(grid.end() - tail_window);
    let du = signal_diff(u_a, u_b)?.norms();
    let input_tail_sup = du[start..].iter().copied().fold(0.0, f64::max);
    if input_tail_sup >= tol {
        return Err(Error::Precondition(format!(
            "input mismatch {input_tail_sup} has not decayed below {tol} in the tail window"
        )));
    }
    let ya = integrate(model, x0_a, u_a, substeps)?;
    let yb = integrate(model, x0_b, u_b, substeps)?;
    let dy = signal_diff(&ya.outputs, &yb.outputs)?.norms();
    let tail_sup = dy[start..].iter().copied().fold(0.0, f64::max);
    Ok(CicoReport {
        converged: tail_sup < tol,
        tail_sup,
        input_tail_sup,
        window_start: grid.time(start),
        tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipoReport {
    /// `d_k = max_δ ‖y(b + kT + δ) − y(b + (k+1)T + δ)‖`, `k = 0..K−1`.
    pub period_map_gaps: Vec<f64>,
    /// Output samples over the last period, row-major.
    pub limit_waveform: Vec<f64>,
    pub output_dim: usize,
    /// First-harmonic amplitude and phase of output channel 0 over the last period.
    pub amplitude: f64,
    pub phase: f64,
    pub samples_per_period: usize,
}

/// Integrates under a `period`-periodic input and measures convergence of the
/// output to a periodic waveform over `periods` periods after `burn_in`.
pub fn pipo_probe(
    model: &SystemModel,
    x0: &[f64],
    u: &SampledSignal,
    period: f64,
    periods: usize,
    burn_in: f64,
    substeps: usize,
) -> Result<PipoReport> {
    let grid = *u.grid();
    let steps = period / grid.dt;
    let p = steps.round() as usize;
    if p == 0 || (steps - p as f64).abs() > 1e-9 * steps.max(1.0) {
        return domain(format!(
            "period {period} is not a whole number of grid steps {}",
            grid.dt
        ));
    }
    if periods < 2 {
        return domain("need at least two periods");
    }
    if !(burn_in >= 0.0) {
        return domain("burn-in must be nonnegative");
    }
    let b = grid.index_of(grid.t0 + burn_in);
    if b + periods * p > grid.n {
        return domain(format!(
            "horizon {} is shorter than burn-in plus {periods} periods",
            grid.horizon()
        ));
    }
    let traj = integrate(model, x0, u, substeps)?;
    let y = &traj.outputs;
    let q = y.dim();
    let gaps = (0..periods - 1)
        .map(|k| {
            (0..p)
                .map(|d| {
                    let (ya, yb) = (y.at(b + k * p + d), y.at(b + (k + 1) * p + d));
                    ya.iter()
                        .zip(yb)
                        .map(|(s, t)| (s - t) * (s - t))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let last = b + (periods - 1) * p;
    let limit_waveform = y.as_slice()[last * q..(last + p) * q].to_vec();
    let omega = 2.0 * std::f64::consts::PI / period;
    let (mut s, mut c) = (0.0, 0.0);
    for d in 0..p {
        let t = grid.time(last + d);
        let v = y.at(last + d)[0];
        s += v * (omega * t).sin();
        c += v * (omega * t).cos();
    }
    let (s, c) = (2.0 * s / p as f64, 2.0 * c / p as f64);
    Ok(PipoReport {
        period_map_gaps: gaps,
        limit_waveform,
        output_dim: q,
        amplitude: s.hypot(c),
        phase: c.atan2(s),
        samples_per_period: p,
    })
}
