use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FmCertificateCandidate, FmForm};
use crate::comparison::{GainFunction, KLFunction, MemoryKernel};
use crate::dynamics::{integrate, SystemModel, Trajectory};
use crate::error::{domain, Error, Result};
use crate::signals::{
    euclid, fading_series_from_norms, generate_signal, signal_diff, SampledSignal,
    SignalGeneratorSpec, SignalKind, TimeGrid,
};

pub const DEFAULT_MARGIN_TOL: f64 = 1e-7;

fn one() -> usize {
    1
}

/// Random pairs `(x_a(0), x_b(0), u_a, u_b)` on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    /// Per-coordinate `[lo, hi]` of the initial-condition box.
    pub x0_box: Vec<[f64; 2]>,
    /// Generator families for `u_a`; each pair picks one uniformly.
    pub inputs: Vec<SignalKind>,
    /// Families for `u_b`; defaults to `inputs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs_b: Option<Vec<SignalKind>>,
    #[serde(default = "one")]
    pub input_dim: usize,
    pub pairs: usize,
    pub grid: TimeGrid,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub substeps: usize,
}

/// One concrete pair, reproducible from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub seed: u64,
    pub x0_a: Vec<f64>,
    pub x0_b: Vec<f64>,
    pub u_a: SampledSignal,
    pub u_b: SampledSignal,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.x0_box.is_empty() {
            return domain("initial-condition box must have at least one coordinate");
        }
        for &[lo, hi] in &self.x0_box {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return domain(format!("invalid initial-condition interval [{lo}, {hi}]"));
            }
        }
        if self.pairs == 0 {
            return domain("ensemble needs at least one pair");
        }
        if self.input_dim == 0 || self.substeps == 0 {
            return domain("input dimension and substeps must be at least 1");
        }
        let b = self.inputs_b.as_deref().unwrap_or(&self.inputs);
        if self.inputs.is_empty() || b.is_empty() {
            return domain("ensemble needs at least one input generator");
        }
        self.inputs
            .iter()
            .chain(b)
            .try_for_each(SignalKind::validate)
    }

    /// Seed of pair `index`: the first word of ChaCha stream `index`.
    pub fn pair_seed(&self, index: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng.next_u64()
    }

    pub fn sample_pair(&self, index: usize) -> Result<PairSample> {
        self.pair_from_seed(self.pair_seed(index))
    }

    pub fn pair_from_seed(&self, seed: u64) -> Result<PairSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw_x = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            self.x0_box
                .iter()
                .map(|&[lo, hi]| {
                    if hi > lo {
                        rng.random_range(lo..=hi)
                    } else {
                        lo
                    }
                })
                .collect()
        };
        let x0_a = draw_x(&mut rng);
        let x0_b = draw_x(&mut rng);
        let kinds_b = self.inputs_b.as_deref().unwrap_or(&self.inputs);
        let draw_u = |rng: &mut ChaCha8Rng, kinds: &[SignalKind]| -> Result<SampledSignal> {
            let kind = kinds[rng.random_range(0..kinds.len())].clone();
            let spec = SignalGeneratorSpec {
                kind,
                seed: rng.next_u64(),
                dim: self.input_dim,
            };
            generate_signal(&spec, &self.grid)
        };
        let u_a = draw_u(&mut rng, &self.inputs)?;
        let u_b = draw_u(&mut rng, kinds_b)?;
        Ok(PairSample {
            seed,
            x0_a,
            x0_b,
            u_a,
            u_b,
        })
    }

    /// Largest amplitude bound among the configured generators.
    pub fn amplitude_bound(&self) -> f64 {
        let b = self.inputs_b.as_deref().unwrap_or(&self.inputs);
        self.inputs
            .iter()
            .chain(b)
            .map(|k| match *k {
                SignalKind::PiecewiseConstant { amplitude, .. }
                | SignalKind::SmoothedNoise { amplitude, .. }
                | SignalKind::Pulse { amplitude, .. }
                | SignalKind::Exponential { amplitude, .. } => amplitude.abs(),
                SignalKind::Sinusoid { amplitude, .. } => amplitude.abs(),
                SignalKind::Constant { value } => value.abs(),
            })
            .fold(0.0, f64::max)
    }
}

/// Per-grid-time `RHS − ‖Δy(t)‖` for a simulated pair.
pub fn fm_margin(
    traj_a: &Trajectory,
    traj_b: &Trajectory,
    u_a: &SampledSignal,
    u_b: &SampledSignal,
    cand: &FmCertificateCandidate,
) -> Result<Vec<f64>> {
    if traj_a.grid != traj_b.grid || traj_a.grid != *u_a.grid() {
        return Err(Error::Shape(
            "trajectories and inputs must share one grid".into(),
        ));
    }
    let dy = signal_diff(&traj_a.outputs, &traj_b.outputs)?.norms();
    let du = signal_diff(u_a, u_b)?.norms();
    let dx0 = state_gap(traj_a.state(0), traj_b.state(0))?;
    Ok(margins_from_norms(cand, dx0, &dy, &du, traj_a.grid.dt))
}

pub(crate) fn state_gap(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape("initial states differ in dimension".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(euclid(&d))
}

pub(crate) fn margins_from_norms(
    cand: &FmCertificateCandidate,
    dx0: f64,
    dy: &[f64],
    du: &[f64],
    dt: f64,
) -> Vec<f64> {
    let fading = fading_series_from_norms(du, dt, &cand.kernel);
    dy.iter()
        .zip(&fading)
        .enumerate()
        .map(|(k, (&y, &f))| cand.bound(dx0, k as f64 * dt, f) - y)
        .collect()
}

/// Output and input difference norms of one simulated pair.
#[derive(Debug, Clone)]
pub(crate) struct PairNorms {
    pub index: usize,
    pub seed: u64,
    pub dx0: f64,
    pub dy: Vec<f64>,
    pub du: Vec<f64>,
}

pub(crate) enum PairRun {
    Ok(PairNorms),
    Diverged { index: usize, seed: u64, t: f64 },
}

pub(crate) fn run_pair(
    model: &SystemModel,
    ens: &EnsembleSpec,
    pair: &PairSample,
    index: usize,
) -> Result<PairRun> {
    let integrate_or_diverge =
        |x0: &[f64], u: &SampledSignal| match integrate(model, x0, u, ens.substeps) {
            Ok(tr) => Ok(Ok(tr)),
            Err(Error::Divergence { t }) => Ok(Err(t)),
            Err(e) => Err(e),
        };
    let ta = match integrate_or_diverge(&pair.x0_a, &pair.u_a)? {
        Ok(tr) => tr,
        Err(t) => {
            return Ok(PairRun::Diverged {
                index,
                seed: pair.seed,
                t,
            })
        }
    };
    let tb = match integrate_or_diverge(&pair.x0_b, &pair.u_b)? {
        Ok(tr) => tr,
        Err(t) => {
            return Ok(PairRun::Diverged {
                index,
                seed: pair.seed,
                t,
            })
        }
    };
    Ok(PairRun::Ok(PairNorms {
        index,
        seed: pair.seed,
        dx0: state_gap(&pair.x0_a, &pair.x0_b)?,
        dy: signal_diff(&ta.outputs, &tb.outputs)?.norms(),
        du: signal_diff(&pair.u_a, &pair.u_b)?.norms(),
    }))
}

/// Simulates every pair of the ensemble, in parallel, returned in pair order.
pub(crate) fn run_ensemble(model: &SystemModel, ens: &EnsembleSpec) -> Result<Vec<PairRun>> {
    ens.validate()?;
    (0..ens.pairs)
        .into_par_iter()
        .map(|i| {
            let pair = ens.sample_pair(i)?;
            run_pair(model, ens, &pair, i)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub seed: u64,
    pub pair: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub pair: usize,
    pub seed: u64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmCheckReport {
    pub candidate: FmCertificateCandidate,
    pub ensemble: EnsembleSpec,
    pub global_min_margin: f64,
    pub witness: Witness,
    pub pass: bool,
    pub tolerance: f64,
    /// Minimum margin over time for each non-divergent pair, in pair order.
    pub per_pair_min: Vec<f64>,
    pub divergences: Vec<Divergence>,
}

pub(crate) fn assemble_report(
    cand: &FmCertificateCandidate,
    ens: &EnsembleSpec,
    runs: &[PairRun],
    tol: f64,
) -> FmCheckReport {
    let dt = ens.grid.dt;
    let mut global = f64::INFINITY;
    let mut witness = Witness {
        seed: 0,
        pair: 0,
        t: ens.grid.t0,
    };
    let mut per_pair_min = Vec::with_capacity(runs.len());
    let mut divergences = Vec::new();
    for run in runs {
        match run {
            PairRun::Ok(p) => {
                let margins = margins_from_norms(cand, p.dx0, &p.dy, &p.du, dt);
                let (k, m) =
                    margins
                        .iter()
                        .copied()
                        .enumerate()
                        .fold(
                            (0, f64::INFINITY),
                            |best, (k, m)| if m < best.1 { (k, m) } else { best },
                        );
                per_pair_min.push(m);
                if m < global {
                    global = m;
                    witness = Witness {
                        seed: p.seed,
                        pair: p.index,
                        t: ens.grid.time(k),
                    };
                }
            }
            PairRun::Diverged { index, seed, t } => {
                divergences.push(Divergence {
                    pair: *index,
                    seed: *seed,
                    t: *t,
                });
            }
        }
    }
    if global == f64::INFINITY {
        global = f64::NEG_INFINITY;
    }
    FmCheckReport {
        candidate: cand.clone(),
        ensemble: ens.clone(),
        global_min_margin: global,
        witness,
        pass: global >= -tol && divergences.is_empty(),
        tolerance: tol,
        per_pair_min,
        divergences,
    }
}

/// Simulates the ensemble and reports the worst margin of `cand`.
///
/// Divergent pairs are recorded and make the report fail.
pub fn falsify_fm(
    model: &SystemModel,
    cand: &FmCertificateCandidate,
    ens: &EnsembleSpec,
    tol: f64,
) -> Result<FmCheckReport> {
    cand.validate()?;
    if !(tol >= 0.0) {
        return domain(format!("margin tolerance must be nonnegative, got {tol}"));
    }
    let runs = run_ensemble(model, ens)?;
    Ok(assemble_report(cand, ens, &runs, tol))
}

/// `β(r, t) = e^{−t/τ}·r`, `γ(r) = 2r`, `w = e^{−lag/(2τ)}` for `τ·ẏ = −y + u`.
pub fn lowpass_certificate(tau: f64) -> Result<FmCertificateCandidate> {
    FmCertificateCandidate::new(
        KLFunction::exp_decay(GainFunction::linear(1.0)?, 1.0 / tau)?,
        GainFunction::linear(2.0)?,
        MemoryKernel::exponential(0.5 / tau)?,
        FmForm::Sum,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lowpass_model;

    fn ensemble(pairs: usize, seed: u64) -> EnsembleSpec {
        EnsembleSpec {
            x0_box: vec![[-2.0, 2.0]],
            inputs: vec![
                SignalKind::PiecewiseConstant {
                    levels: 5,
                    amplitude: 2.0,
                },
                SignalKind::SmoothedNoise {
                    amplitude: 2.0,
                    correlation_time: 0.5,
                },
            ],
            inputs_b: None,
            input_dim: 1,
            pairs,
            grid: TimeGrid::with_horizon(0.0, 10.0, 0.01).unwrap(),
            seed,
            substeps: 1,
        }
    }

    #[test]
    fn identical_pair_has_zero_margin() {
        let m = lowpass_model(1.0).unwrap();
        let ens = ensemble(1, 3);
        let pair = ens.sample_pair(0).unwrap();
        let tr = integrate(&m, &pair.x0_a, &pair.u_a, 1).unwrap();
        let margins = fm_margin(
            &tr,
            &tr,
            &pair.u_a,
            &pair.u_a,
            &lowpass_certificate(1.0).unwrap(),
        )
        .unwrap();
        assert!(margins.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lowpass_certificate_passes_and_shrunken_gain_fails() {
        let m = lowpass_model(1.0).unwrap();
        let ens = ensemble(200, 1);
        let cand = lowpass_certificate(1.0).unwrap();
        let rep = falsify_fm(&m, &cand, &ens, DEFAULT_MARGIN_TOL).unwrap();
        assert!(rep.pass, "min margin {}", rep.global_min_margin);
        assert_eq!(rep.per_pair_min.len(), 200);

        let bad = FmCertificateCandidate {
            gamma: GainFunction::linear(0.01).unwrap(),
            ..cand
        };
        let rep = falsify_fm(&m, &bad, &ens, DEFAULT_MARGIN_TOL).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.global_min_margin, rep.per_pair_min[rep.witness.pair]);
        assert_eq!(
            ens.pair_from_seed(rep.witness.seed).unwrap(),
            ens.sample_pair(rep.witness.pair).unwrap()
        );
    }

    #[test]
    fn pair_sampling_is_deterministic_and_in_box() {
        let ens = ensemble(10, 99);
        for i in 0..10 {
            let p = ens.sample_pair(i).unwrap();
            assert_eq!(p, ens.sample_pair(i).unwrap());
            assert!(p.x0_a[0].abs() <= 2.0 && p.x0_b[0].abs() <= 2.0);
            assert!(p.u_a.max_norm() <= 2.0 + 1e-12);
        }
        assert_ne!(ens.pair_seed(0), ens.pair_seed(1));
    }

    #[test]
    fn report_serializes_with_expected_keys() {
        let m = lowpass_model(1.0).unwrap();
        let rep = falsify_fm(
            &m,
            &lowpass_certificate(1.0).unwrap(),
            &ensemble(3, 0),
            1e-7,
        )
        .unwrap();
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        for key in [
            "candidate",
            "ensemble",
            "global_min_margin",
            "witness",
            "pass",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["witness"].get("seed").is_some());
    }
}
