//! Cascade approximators: a diagonal stable filter bank followed by a
//! polynomial readout fitted by ridge regression.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::qr::no_pivoting::{factor, solve};
use faer::{Mat, Par};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, SystemModel};
use crate::error::{domain, Error, Result};
use crate::fm_analysis::EnsembleSpec;
use crate::signals::SampledSignal;

/// Filters `ż_{i,j} = −a_i·z_{i,j} + u_j`; state index `i·input_dim + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub rates: Vec<f64>,
    pub input_dim: usize,
}

impl FilterBank {
    pub fn new(rates: Vec<f64>, input_dim: usize) -> Result<Self> {
        let bank = FilterBank { rates, input_dim };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.input_dim == 0 {
            return domain("filter bank needs at least one rate and one input channel");
        }
        if self.rates.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return domain("filter rates must be positive");
        }
        if self.rates.windows(2).any(|w| w[1] <= w[0]) {
            return domain("filter rates must be strictly increasing");
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.rates.len() * self.input_dim
    }
}

/// `n` log-spaced rates from `rate_min` to `rate_max`; a single filter sits at `rate_min`.
pub fn build_filterbank(
    n_filters: usize,
    rate_min: f64,
    rate_max: f64,
    input_dim: usize,
) -> Result<FilterBank> {
    if n_filters == 0 {
        return domain("filter bank needs at least one filter");
    }
    if !(rate_min > 0.0 && rate_min < rate_max && rate_max.is_finite()) {
        return domain(format!(
            "rates need 0 < rate_min < rate_max, got [{rate_min}, {rate_max}]"
        ));
    }
    let rates = if n_filters == 1 {
        vec![rate_min]
    } else {
        let (l0, l1) = (rate_min.ln(), rate_max.ln());
        (0..n_filters)
            .map(|i| match i {
                0 => rate_min,
                i if i + 1 == n_filters => rate_max,
                i => (l0 + (l1 - l0) * i as f64 / (n_filters - 1) as f64).exp(),
            })
            .collect()
    };
    FilterBank::new(rates, input_dim)
}

/// Exact update coefficients of `ż = −a z + u` over one step with linear `u`.
fn step_coefficients(a: f64, h: f64) -> (f64, f64, f64) {
    let x = a * h;
    let decay = (-x).exp();
    let c1 = -(-x).exp_m1() / a;
    // x − 1 + e^{−x}, with a series where the closed form cancels
    let c2_num = if x < 1e-3 {
        x * x * (0.5 - x / 6.0 + x * x / 24.0)
    } else {
        x + (-x).exp_m1()
    };
    (decay, c1, c2_num / (a * a * h))
}

/// Filter-bank state on the input grid, by exponential-Euler updates.
pub fn run_bank(bank: &FilterBank, u: &SampledSignal, z0: Option<&[f64]>) -> Result<SampledSignal> {
    bank.validate()?;
    if u.dim() != bank.input_dim {
        return Err(Error::Shape(format!(
            "bank expects {} input channels, got {}",
            bank.input_dim,
            u.dim()
        )));
    }
    let s = bank.state_dim();
    let mut z = match z0 {
        Some(z0) if z0.len() != s => {
            return Err(Error::Shape(format!(
                "bank initial state has {} entries, expected {s}",
                z0.len()
            )))
        }
        Some(z0) => z0.to_vec(),
        None => vec![0.0; s],
    };
    let grid = *u.grid();
    let coeffs: Vec<(f64, f64, f64)> = bank
        .rates
        .iter()
        .map(|&a| step_coefficients(a, grid.dt))
        .collect();
    let m = bank.input_dim;
    let mut out = Vec::with_capacity(grid.n * s);
    out.extend_from_slice(&z);
    for k in 0..grid.n - 1 {
        let (u0, u1) = (u.at(k), u.at(k + 1));
        for (i, &(decay, c1, c2)) in coeffs.iter().enumerate() {
            for j in 0..m {
                let zi = &mut z[i * m + j];
                *zi = decay * *zi + c1 * u0[j] + c2 * (u1[j] - u0[j]);
            }
        }
        out.extend_from_slice(&z);
    }
    SampledSignal::new(grid, s, out)
}

/// Monomials of total degree ≤ `degree` in graded order, each as `(parent, variable)`:
/// monomial `i` equals monomial `parent` times `variable`. Entry 0 is the constant.
fn monomial_table(n_vars: usize, degree: usize) -> Vec<(usize, usize)> {
    let mut terms = vec![(0, usize::MAX)];
    let mut last_var = vec![0usize];
    let mut prev = 0..1;
    for _ in 0..degree {
        let start = terms.len();
        for parent in prev.clone() {
            let from = if parent == 0 { 0 } else { last_var[parent] };
            for v in from..n_vars {
                terms.push((parent, v));
                last_var.push(v);
            }
        }
        prev = start..terms.len();
    }
    terms
}

#[derive(Debug, Clone, Deserialize)]
struct ReadoutRepr {
    degree: usize,
    n_vars: usize,
    feedthrough: bool,
    coefficients: Vec<Vec<f64>>,
}

/// `y_o = Σ_i c_{o,i}·m_i(v)` with `v` the bank state, followed by the input if `feedthrough`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ReadoutRepr")]
pub struct PolynomialReadout {
    pub degree: usize,
    pub n_vars: usize,
    pub feedthrough: bool,
    /// One coefficient vector per output channel.
    pub coefficients: Vec<Vec<f64>>,
    #[serde(skip)]
    terms: Vec<(usize, usize)>,
}

impl TryFrom<ReadoutRepr> for PolynomialReadout {
    type Error = Error;

    fn try_from(r: ReadoutRepr) -> Result<Self> {
        PolynomialReadout::new(r.degree, r.n_vars, r.feedthrough, r.coefficients)
    }
}

impl PolynomialReadout {
    pub fn new(
        degree: usize,
        n_vars: usize,
        feedthrough: bool,
        coefficients: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let terms = monomial_table(n_vars, degree);
        if coefficients.is_empty() {
            return domain("readout needs at least one output");
        }
        for c in &coefficients {
            if c.len() != terms.len() {
                return Err(Error::Shape(format!(
                    "readout has {} coefficients, expected {}",
                    c.len(),
                    terms.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return domain("readout coefficients must be finite");
            }
        }
        Ok(PolynomialReadout {
            degree,
            n_vars,
            feedthrough,
            coefficients,
            terms,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.terms.len()
    }

    pub fn output_dim(&self) -> usize {
        self.coefficients.len()
    }

    fn features_into(terms: &[(usize, usize)], vars: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        for (i, &(parent, v)) in terms.iter().enumerate().skip(1) {
            out[i] = out[parent] * vars[v];
        }
    }

    pub fn eval_into(&self, vars: &[f64], scratch: &mut Vec<f64>, y: &mut [f64]) {
        scratch.resize(self.terms.len(), 0.0);
        Self::features_into(&self.terms, vars, scratch);
        for (yo, c) in y.iter_mut().zip(&self.coefficients) {
            *yo = c.iter().zip(scratch.iter()).map(|(a, b)| a * b).sum();
        }
    }
}

/// Readout variables at every grid sample: bank state, then input if requested.
fn variables(states: &SampledSignal, u: &SampledSignal, feedthrough: bool) -> Vec<Vec<f64>> {
    (0..states.len())
        .map(|k| {
            let mut v = states.at(k).to_vec();
            if feedthrough {
                v.extend_from_slice(u.at(k));
            }
            v
        })
        .collect()
}

/// Least squares plus `ridge·‖c‖²` over pooled samples, by Householder QR of `[X; √ridge·I]`.
///
/// `vars[s][k]` and `targets[s]` are the readout variables and target output of
/// training signal `s` at sample `k`.
pub fn fit_readout(
    vars: &[Vec<Vec<f64>>],
    targets: &[SampledSignal],
    degree: usize,
    feedthrough: bool,
    ridge: f64,
) -> Result<PolynomialReadout> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return domain(format!("ridge parameter must be nonnegative, got {ridge}"));
    }
    if vars.is_empty() || vars.len() != targets.len() {
        return Err(Error::Shape("need one target per training signal".into()));
    }
    let n_vars = vars[0].first().map_or(0, Vec::len);
    let q = targets[0].dim();
    let mut rows = 0;
    for (v, y) in vars.iter().zip(targets) {
        if v.len() != y.len() || y.dim() != q || v.iter().any(|r| r.len() != n_vars) {
            return Err(Error::Shape(
                "training variables and targets disagree in shape".into(),
            ));
        }
        rows += v.len();
    }
    let terms = monomial_table(n_vars, degree);
    let p = terms.len();
    let extra = if ridge > 0.0 { p } else { 0 };
    let m = rows + extra;
    if m < p {
        return Err(Error::Singular(format!(
            "{rows} samples for {p} features; add samples or a ridge penalty"
        )));
    }
    let mut a = Mat::<f64>::zeros(m, p);
    let mut b = Mat::<f64>::zeros(m, q);
    let mut feat = vec![0.0; p];
    let mut r = 0;
    for (v, y) in vars.iter().zip(targets) {
        for (k, row) in v.iter().enumerate() {
            PolynomialReadout::features_into(&terms, row, &mut feat);
            for (j, &f) in feat.iter().enumerate() {
                a[(r, j)] = f;
            }
            for (o, &t) in y.at(k).iter().enumerate() {
                b[(r, o)] = t;
            }
            r += 1;
        }
    }
    let sq = ridge.sqrt();
    for j in 0..extra {
        a[(rows + j, j)] = sq;
    }

    let bs = factor::recommended_blocksize::<f64>(m, p);
    let mut q_coeff = Mat::<f64>::zeros(bs, p);
    let req = factor::qr_in_place_scratch::<f64>(m, p, bs, Par::Seq, Default::default()).or(
        solve::solve_lstsq_in_place_scratch::<f64>(m, p, bs, q, Par::Seq),
    );
    let mut mem = MemBuffer::new(req);
    factor::qr_in_place(
        a.as_mut(),
        q_coeff.as_mut(),
        Par::Seq,
        MemStack::new(&mut mem),
        Default::default(),
    );

    let diag: Vec<f64> = (0..p).map(|j| a[(j, j)].abs()).collect();
    let max_diag = diag.iter().copied().fold(0.0, f64::max);
    let threshold = max_diag * (m.max(p) as f64) * f64::EPSILON;
    if ridge == 0.0 && diag.iter().any(|&d| !(d > threshold)) {
        return Err(Error::Singular(
            "feature matrix is rank deficient; use a positive ridge parameter".into(),
        ));
    }
    solve::solve_lstsq_in_place(
        a.as_ref(),
        q_coeff.as_ref(),
        a.as_ref(),
        b.as_mut(),
        Par::Seq,
        MemStack::new(&mut mem),
    );
    let coefficients: Vec<Vec<f64>> = (0..q)
        .map(|o| (0..p).map(|j| b[(j, o)]).collect())
        .collect();
    if coefficients.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Numeric(
            "regression produced non-finite coefficients".into(),
        ));
    }
    PolynomialReadout::new(degree, n_vars, feedthrough, coefficients)
}

fn default_validation() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproximatorConfig {
    pub n_filters: usize,
    pub rate_min: f64,
    pub rate_max: f64,
    pub degree: usize,
    pub ridge: f64,
    #[serde(default)]
    pub feedthrough: bool,
    /// Fraction of whole signals held out, taken from the end of the ensemble.
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub target: String,
    pub x0: Vec<f64>,
    pub ensemble: EnsembleSpec,
    pub ridge: f64,
    pub train_signals: usize,
    pub validation_signals: usize,
    pub train_nrmse: f64,
    pub validation_nrmse: f64,
    /// Whether the target's outputs forgot a perturbed initial state.
    pub screen_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeApproximator {
    #[serde(flatten)]
    pub bank: FilterBank,
    #[serde(flatten)]
    pub readout: PolynomialReadout,
    pub metadata: Option<TrainingMetadata>,
}

impl CascadeApproximator {
    pub fn new(bank: FilterBank, readout: PolynomialReadout) -> Result<Self> {
        let c = CascadeApproximator {
            bank,
            readout,
            metadata: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.bank.validate()?;
        let expected = self.bank.state_dim()
            + if self.readout.feedthrough {
                self.bank.input_dim
            } else {
                0
            };
        if self.readout.n_vars != expected {
            return Err(Error::Shape(format!(
                "readout takes {} variables, bank provides {expected}",
                self.readout.n_vars
            )));
        }
        Ok(())
    }

    /// The cascade as a state-space model with the bank state as state.
    pub fn to_model(&self) -> Result<SystemModel> {
        self.validate()?;
        let rates = self.bank.rates.clone();
        let m = self.bank.input_dim;
        let s = self.bank.state_dim();
        let readout = self.readout.clone();
        SystemModel::new(
            "cascade",
            s,
            m,
            readout.output_dim(),
            false,
            Arc::new(move |_t, z, u, dz| {
                for (i, &a) in rates.iter().enumerate() {
                    for j in 0..m {
                        dz[i * m + j] = -a * z[i * m + j] + u[j];
                    }
                }
            }),
            Arc::new(move |z, u, y| {
                let mut vars = z.to_vec();
                if readout.feedthrough {
                    vars.extend_from_slice(u);
                }
                readout.eval_into(&vars, &mut Vec::new(), y);
            }),
        )
    }
}

/// Bank run from zero state followed by the readout at every sample.
pub fn approx_eval(cascade: &CascadeApproximator, u: &SampledSignal) -> Result<SampledSignal> {
    cascade.validate()?;
    let states = run_bank(&cascade.bank, u, None)?;
    let vars = variables(&states, u, cascade.readout.feedthrough);
    let q = cascade.readout.output_dim();
    let mut out = vec![0.0; u.len() * q];
    let mut scratch = Vec::new();
    for (k, v) in vars.iter().enumerate() {
        cascade
            .readout
            .eval_into(v, &mut scratch, &mut out[k * q..(k + 1) * q]);
    }
    SampledSignal::new(*u.grid(), q, out)
}

/// `RMSE / std(target)` pooled over signals; plain RMSE when the target is constant.
pub fn nrmse(predictions: &[SampledSignal], targets: &[SampledSignal]) -> Result<f64> {
    let mut n = 0usize;
    let (mut sse, mut sum, mut sum_sq) = (0.0, 0.0, 0.0);
    for (p, t) in predictions.iter().zip(targets) {
        if p.grid() != t.grid() || p.dim() != t.dim() {
            return Err(Error::Shape("prediction and target differ in shape".into()));
        }
        for (a, b) in p.as_slice().iter().zip(t.as_slice()) {
            sse += (a - b) * (a - b);
            sum += b;
            sum_sq += b * b;
            n += 1;
        }
    }
    if n == 0 {
        return domain("no samples to score");
    }
    let nf = n as f64;
    let rmse = (sse / nf).sqrt();
    let var = (sum_sq / nf - (sum / nf).powi(2)).max(0.0);
    Ok(if var > 0.0 { rmse / var.sqrt() } else { rmse })
}

/// Output sensitivity to a unit initial-state perturbation must have decayed
/// by three orders of magnitude at the horizon.
fn forgetting_screen(
    target: &SystemModel,
    x0: &[f64],
    inputs: &[SampledSignal],
    substeps: usize,
) -> Result<bool> {
    let shifted: Vec<f64> = x0.iter().map(|v| v + 1.0).collect();
    for u in inputs.iter().take(4) {
        let a = integrate(target, x0, u, substeps)?;
        let b = integrate(target, &shifted, u, substeps)?;
        let gap = |k: usize| {
            a.outputs
                .at(k)
                .iter()
                .zip(b.outputs.at(k))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let first = (0..u.len()).map(gap).fold(0.0, f64::max);
        if gap(u.len() - 1) > 1e-3 * first.max(1e-12) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Trains a cascade on the `u_a` inputs of `ens`, one target run per signal from `x0`.
pub fn train_approximator(
    target: &SystemModel,
    x0: &[f64],
    ens: &EnsembleSpec,
    cfg: &ApproximatorConfig,
) -> Result<CascadeApproximator> {
    ens.validate()?;
    if ens.input_dim != target.input_dim {
        return Err(Error::Shape(
            "ensemble and target disagree on input dimension".into(),
        ));
    }
    if !(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0) {
        return domain("validation fraction must lie in [0, 1)");
    }
    let bank = build_filterbank(cfg.n_filters, cfg.rate_min, cfg.rate_max, ens.input_dim)?;
    type Run = (SampledSignal, Vec<Vec<f64>>, SampledSignal);
    let runs: Vec<Result<Run>> = (0..ens.pairs)
        .into_par_iter()
        .map(|i| {
            let u = ens.sample_pair(i)?.u_a;
            let y = integrate(target, x0, &u, ens.substeps)?.outputs;
            let z = run_bank(&bank, &u, None)?;
            let v = variables(&z, &u, cfg.feedthrough);
            Ok((u, v, y))
        })
        .collect();
    let mut inputs = Vec::with_capacity(ens.pairs);
    let mut vars = Vec::with_capacity(ens.pairs);
    let mut targets = Vec::with_capacity(ens.pairs);
    for run in runs {
        let (u, v, y) = run?;
        inputs.push(u);
        vars.push(v);
        targets.push(y);
    }
    let n_val = ((ens.pairs as f64) * cfg.validation_fraction).round() as usize;
    let n_val = n_val.min(ens.pairs - 1);
    let n_train = ens.pairs - n_val;

    let screen_passed = forgetting_screen(target, x0, &inputs, ens.substeps)?;
    if !screen_passed {
        log::warn!(
            "{} keeps memory of its initial state; the approximation guarantee does not apply",
            target.label
        );
    }

    let readout = fit_readout(
        &vars[..n_train],
        &targets[..n_train],
        cfg.degree,
        cfg.feedthrough,
        cfg.ridge,
    )?;
    let mut cascade = CascadeApproximator::new(bank, readout)?;
    let predict = |range: std::ops::Range<usize>| -> Result<Vec<SampledSignal>> {
        range.map(|i| approx_eval(&cascade, &inputs[i])).collect()
    };
    let train_nrmse = nrmse(&predict(0..n_train)?, &targets[..n_train])?;
    let validation_nrmse = if n_val > 0 {
        nrmse(&predict(n_train..ens.pairs)?, &targets[n_train..])?
    } else {
        f64::NAN
    };
    cascade.metadata = Some(TrainingMetadata {
        target: target.label.clone(),
        x0: x0.to_vec(),
        ensemble: ens.clone(),
        ridge: cfg.ridge,
        train_signals: n_train,
        validation_signals: n_val,
        train_nrmse,
        validation_nrmse,
        screen_passed,
    });
    Ok(cascade)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lowpass_model;
    use crate::signals::{generate_signal, SignalGeneratorSpec, SignalKind, TimeGrid};
    use approx::assert_abs_diff_eq;

    fn noise(seed: u64, grid: TimeGrid) -> SampledSignal {
        let spec = SignalGeneratorSpec {
            kind: SignalKind::SmoothedNoise {
                amplitude: 1.0,
                correlation_time: 0.5,
            },
            seed,
            dim: 1,
        };
        generate_signal(&spec, &grid).unwrap()
    }

    #[test]
    fn filterbank_spacing() {
        let b = build_filterbank(3, 0.1, 10.0, 1).unwrap();
        assert_eq!(b.rates[0], 0.1);
        assert!((b.rates[1] - 1.0).abs() < 1e-12);
        assert_eq!(b.rates[2], 10.0);
        assert_eq!(build_filterbank(1, 0.3, 10.0, 2).unwrap().rates, vec![0.3]);
        assert!(build_filterbank(3, 1.0, 1.0, 1).is_err());
        assert!(build_filterbank(0, 0.1, 1.0, 1).is_err());
    }

    #[test]
    fn bank_dc_gain_and_decay() {
        let g = TimeGrid::with_horizon(0.0, 40.0, 0.05).unwrap();
        let bank = build_filterbank(3, 0.5, 2.0, 1).unwrap();
        let z = run_bank(&bank, &SampledSignal::constant(g, &[1.0]).unwrap(), None).unwrap();
        for (i, &a) in bank.rates.iter().enumerate() {
            assert_abs_diff_eq!(z.at(g.n - 1)[i], 1.0 / a, epsilon = 1e-6);
        }
        let z = run_bank(
            &bank,
            &SampledSignal::zeros(g, 1).unwrap(),
            Some(&[1.0, 1.0, 1.0]),
        )
        .unwrap();
        for k in (0..g.n).step_by(37) {
            for (i, &a) in bank.rates.iter().enumerate() {
                assert_abs_diff_eq!(z.at(k)[i], (-a * g.time(k)).exp(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn bank_matches_lowpass() {
        let tau = 2.0;
        let g = TimeGrid::with_horizon(0.0, 20.0, 0.01).unwrap();
        let u = noise(1, g);
        let z = run_bank(&FilterBank::new(vec![1.0 / tau], 1).unwrap(), &u, None).unwrap();
        let y = integrate(&lowpass_model(tau).unwrap(), &[0.0], &u, 1)
            .unwrap()
            .outputs;
        for k in 0..g.n {
            assert_abs_diff_eq!(z.at(k)[0], tau * y.at(k)[0], epsilon = 1e-6);
        }
    }

    #[test]
    fn monomial_count_and_order() {
        let t = monomial_table(3, 2);
        assert_eq!(t.len(), 10);
        assert_eq!(monomial_table(17, 3).len(), 1140);
        assert_eq!(monomial_table(4, 0).len(), 1);
        let mut f = vec![0.0; t.len()];
        PolynomialReadout::features_into(&t, &[2.0, 3.0, 5.0], &mut f);
        assert_eq!(f, vec![1.0, 2.0, 3.0, 5.0, 4.0, 6.0, 10.0, 9.0, 15.0, 25.0]);
    }

    #[test]
    fn readout_recovers_exact_targets() {
        let g = TimeGrid::with_horizon(0.0, 20.0, 0.05).unwrap();
        let bank = build_filterbank(3, 0.2, 5.0, 1).unwrap();
        let signals: Vec<SampledSignal> = (0..4).map(|s| noise(s, g)).collect();
        let states: Vec<SampledSignal> = signals
            .iter()
            .map(|u| run_bank(&bank, u, None).unwrap())
            .collect();
        let vars: Vec<Vec<Vec<f64>>> = states
            .iter()
            .zip(&signals)
            .map(|(z, u)| variables(z, u, false))
            .collect();

        let own: Vec<SampledSignal> = states
            .iter()
            .map(|z| SampledSignal::new(*z.grid(), 1, z.channel(1)).unwrap())
            .collect();
        let r = fit_readout(&vars, &own, 1, false, 1e-10).unwrap();
        for (j, c) in r.coefficients[0].iter().enumerate() {
            assert!(
                (c - if j == 2 { 1.0 } else { 0.0 }).abs() < 1e-8,
                "coefficient {j} = {c}"
            );
        }

        let prod: Vec<SampledSignal> = states
            .iter()
            .map(|z| {
                SampledSignal::new(
                    *z.grid(),
                    1,
                    (0..z.len()).map(|k| z.at(k)[0] * z.at(k)[1]).collect(),
                )
                .unwrap()
            })
            .collect();
        let r = fit_readout(&vars, &prod, 2, false, 0.0).unwrap();
        // graded order over 3 variables: 1, z0, z1, z2, z0², z0z1, ...
        for (j, c) in r.coefficients[0].iter().enumerate() {
            assert!(
                (c - if j == 5 { 1.0 } else { 0.0 }).abs() < 1e-8,
                "coefficient {j} = {c}"
            );
        }

        let big = fit_readout(&vars, &prod, 2, false, 1e12).unwrap();
        assert!(big.coefficients[0].iter().all(|c| c.abs() < 1e-6));
    }

    #[test]
    fn rank_deficiency_without_ridge_is_reported() {
        let g = TimeGrid::with_horizon(0.0, 5.0, 0.05).unwrap();
        let u = SampledSignal::zeros(g, 1).unwrap();
        let bank = build_filterbank(2, 0.5, 1.0, 1).unwrap();
        let z = run_bank(&bank, &u, None).unwrap();
        let vars = vec![variables(&z, &u, false)];
        let y = vec![SampledSignal::zeros(g, 1).unwrap()];
        assert!(matches!(
            fit_readout(&vars, &y, 1, false, 0.0),
            Err(Error::Singular(_))
        ));
        assert!(fit_readout(&vars, &y, 1, false, 1e-6).is_ok());
    }

    fn ensemble(pairs: usize) -> EnsembleSpec {
        EnsembleSpec {
            x0_box: vec![[0.0, 0.0]],
            inputs: vec![SignalKind::SmoothedNoise {
                amplitude: 1.0,
                correlation_time: 0.5,
            }],
            inputs_b: None,
            input_dim: 1,
            pairs,
            grid: TimeGrid::with_horizon(0.0, 20.0, 0.05).unwrap(),
            seed: 2,
            substeps: 1,
        }
    }

    #[test]
    fn lowpass_is_inside_the_model_class() {
        let cfg = ApproximatorConfig {
            n_filters: 1,
            rate_min: 1.0,
            rate_max: 2.0,
            degree: 1,
            ridge: 1e-12,
            feedthrough: false,
            validation_fraction: 0.2,
        };
        let c =
            train_approximator(&lowpass_model(1.0).unwrap(), &[0.0], &ensemble(10), &cfg).unwrap();
        let meta = c.metadata.as_ref().unwrap();
        assert_eq!((meta.train_signals, meta.validation_signals), (8, 2));
        // the bank is exact; residual error is the integrator's on the target side
        assert!(
            meta.validation_nrmse < 1e-6,
            "nrmse {}",
            meta.validation_nrmse
        );
        assert!(meta.screen_passed);

        let json = serde_json::to_string(&c).unwrap();
        let back: CascadeApproximator = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["rates", "degree", "feedthrough", "coefficients", "metadata"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let zero = approx_eval(&back, &SampledSignal::zeros(ensemble(1).grid, 1).unwrap()).unwrap();
        let c0 = back.readout.coefficients[0][0];
        assert!(zero.as_slice().iter().all(|&v| v == c0));
    }

    #[test]
    fn degree_zero_predicts_the_mean() {
        let cfg = ApproximatorConfig {
            n_filters: 2,
            rate_min: 0.5,
            rate_max: 2.0,
            degree: 0,
            ridge: 0.0,
            feedthrough: false,
            validation_fraction: 0.2,
        };
        let c =
            train_approximator(&lowpass_model(1.0).unwrap(), &[0.0], &ensemble(10), &cfg).unwrap();
        assert!((c.metadata.unwrap().train_nrmse - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cascade_model_matches_eval() {
        let bank = build_filterbank(2, 0.5, 2.0, 1).unwrap();
        let readout = PolynomialReadout::new(
            2,
            3,
            true,
            vec![vec![0.1, 1.0, -0.5, 0.3, 0.2, 0.0, 0.1, 0.0, 0.0, 0.4]],
        )
        .unwrap();
        let c = CascadeApproximator::new(bank, readout).unwrap();
        let g = TimeGrid::with_horizon(0.0, 10.0, 0.01).unwrap();
        let u = noise(9, g);
        let a = approx_eval(&c, &u).unwrap();
        let b = integrate(&c.to_model().unwrap(), &[0.0, 0.0], &u, 1)
            .unwrap()
            .outputs;
        for k in 0..g.n {
            assert_abs_diff_eq!(a.at(k)[0], b.at(k)[0], epsilon = 1e-6);
        }
    }
}
