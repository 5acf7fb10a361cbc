//! Input-driven ODE models, fixed-step RK4 integration and the model zoo.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comparison::GainFunction;
use crate::error::{domain, Error, Result};
use crate::signals::{euclid, write_columns_csv, SampledSignal, TimeGrid};

/// Right-hand side `(t, x, u, dx)`.
pub type Rhs = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Output map `(x, u, y)`; `u` is the instantaneous input for feedthrough.
pub type Readout = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Accumulated-input augmentation: state `state_index` integrates the input
/// while `t ≤ gate_end` and is frozen afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralTerm {
    pub state_index: usize,
    pub gate_end: f64,
}

/// `ẋ = f(t, x, u)`, `y = g(x, u)`.
#[derive(Clone)]
pub struct SystemModel {
    pub label: String,
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub time_varying: bool,
    /// Times where `f` may jump; the integrator never steps across them.
    pub breakpoints: Vec<f64>,
    pub integral_term: Option<IntegralTerm>,
    rhs: Rhs,
    readout: Readout,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("label", &self.label)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .field("time_varying", &self.time_varying)
            .field("breakpoints", &self.breakpoints)
            .finish_non_exhaustive()
    }
}

impl SystemModel {
    pub fn new(
        label: impl Into<String>,
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        time_varying: bool,
        rhs: Rhs,
        readout: Readout,
    ) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 || output_dim == 0 {
            return domain("model dimensions must be at least 1");
        }
        Ok(SystemModel {
            label: label.into(),
            state_dim,
            input_dim,
            output_dim,
            time_varying,
            breakpoints: Vec::new(),
            integral_term: None,
            rhs,
            readout,
        })
    }

    /// Model whose output is the full state.
    pub fn with_state_output(
        label: impl Into<String>,
        state_dim: usize,
        input_dim: usize,
        time_varying: bool,
        rhs: Rhs,
    ) -> Result<Self> {
        Self::new(
            label,
            state_dim,
            input_dim,
            state_dim,
            time_varying,
            rhs,
            identity_readout(),
        )
    }

    pub fn with_breakpoints(mut self, mut breakpoints: Vec<f64>) -> Self {
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        self.breakpoints = breakpoints;
        self
    }

    /// Same dynamics, output replaced by the full state.
    pub fn state_output(&self) -> SystemModel {
        SystemModel {
            label: format!("{}-state", self.label),
            output_dim: self.state_dim,
            readout: identity_readout(),
            ..self.clone()
        }
    }

    #[inline]
    pub fn rhs(&self, t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) {
        (self.rhs)(t, x, u, dx)
    }

    #[inline]
    pub fn output(&self, x: &[f64], u: &[f64], y: &mut [f64]) {
        (self.readout)(x, u, y)
    }

    fn check_io(&self, x0: &[f64], u: &SampledSignal) -> Result<()> {
        if x0.len() != self.state_dim {
            return Err(Error::Shape(format!(
                "{}: initial state has dimension {}, expected {}",
                self.label,
                x0.len(),
                self.state_dim
            )));
        }
        if u.dim() != self.input_dim {
            return Err(Error::Shape(format!(
                "{}: input has dimension {}, expected {}",
                self.label,
                u.dim(),
                self.input_dim
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return domain("initial state must be finite");
        }
        Ok(())
    }
}

fn identity_readout() -> Readout {
    Arc::new(|x: &[f64], _u: &[f64], y: &mut [f64]| y.copy_from_slice(x))
}

/// States and outputs on the input grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub state_dim: usize,
    /// Row-major, `grid.n × state_dim`.
    pub states: Vec<f64>,
    pub outputs: SampledSignal,
}

impl Trajectory {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.grid.n - 1)
    }

    pub fn write_states_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_columns_csv(writer, &self.grid, self.state_dim, "x", &self.states)
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    u: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize, m: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
            u: vec![0.0; m],
        }
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + b.abs())
}

#[allow(clippy::needless_range_loop)]
/// One RK4 step on `[t, t + h]`. At a breakpoint the first stage sees the
/// right limit and the last stage the left limit of `f`.
fn rk4_step(
    model: &SystemModel,
    u: &SampledSignal,
    t: f64,
    h: f64,
    x: &mut [f64],
    s: &mut Rk4Scratch,
) {
    let n = x.len();
    let (mut t_first, mut t_last) = (t, t + h);
    if !model.breakpoints.is_empty() {
        if model.breakpoints.iter().any(|&b| near(t, b)) {
            t_first = t.next_up();
        }
        if model.breakpoints.iter().any(|&b| near(t + h, b)) {
            t_last = (t + h).next_down();
        }
    }
    let tm = t + 0.5 * h;

    u.interpolate_into(t, &mut s.u);
    model.rhs(t_first, x, &s.u, &mut s.k1);

    u.interpolate_into(tm, &mut s.u);
    for i in 0..n {
        s.tmp[i] = x[i] + 0.5 * h * s.k1[i];
    }
    model.rhs(tm, &s.tmp, &s.u, &mut s.k2);
    for i in 0..n {
        s.tmp[i] = x[i] + 0.5 * h * s.k2[i];
    }
    model.rhs(tm, &s.tmp, &s.u, &mut s.k3);

    u.interpolate_into(t + h, &mut s.u);
    for i in 0..n {
        s.tmp[i] = x[i] + h * s.k3[i];
    }
    model.rhs(t_last, &s.tmp, &s.u, &mut s.k4);

    for i in 0..n {
        x[i] += h / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
    }
}

/// Classical RK4 with step `dt/substeps` and piecewise-linear input.
///
/// Substeps that straddle a model breakpoint are split there.
pub fn integrate(
    model: &SystemModel,
    x0: &[f64],
    u: &SampledSignal,
    substeps: usize,
) -> Result<Trajectory> {
    model.check_io(x0, u)?;
    if substeps == 0 {
        return domain("substeps must be at least 1");
    }
    let grid = *u.grid();
    let n = model.state_dim;
    let p = model.output_dim;
    let mut states = Vec::with_capacity(grid.n * n);
    let mut outputs = vec![0.0; grid.n * p];
    let mut x = x0.to_vec();
    let mut scratch = Rk4Scratch::new(n, model.input_dim);
    let h = grid.dt / substeps as f64;

    states.extend_from_slice(&x);
    model.output(&x, u.at(0), &mut outputs[0..p]);
    for k in 0..grid.n - 1 {
        let t_k = grid.time(k);
        for j in 0..substeps {
            let a = t_k + j as f64 * h;
            let b = if j + 1 == substeps {
                grid.time(k + 1)
            } else {
                a + h
            };
            let mut start = a;
            for &bp in &model.breakpoints {
                if bp > start && bp < b && !near(bp, start) && !near(bp, b) {
                    rk4_step(model, u, start, bp - start, &mut x, &mut scratch);
                    start = bp;
                }
            }
            rk4_step(model, u, start, b - start, &mut x, &mut scratch);
        }
        let t_next = grid.time(k + 1);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: t_next });
        }
        states.extend_from_slice(&x);
        let y = &mut outputs[(k + 1) * p..(k + 2) * p];
        model.output(&x, u.at(k + 1), y);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: t_next });
        }
    }
    let outputs = SampledSignal::new(grid, p, outputs)?;
    Ok(Trajectory {
        grid,
        state_dim: n,
        states,
        outputs,
    })
}

/// `τ·ẏ = −y + u`, output `y`.
pub fn lowpass_model(tau: f64) -> Result<SystemModel> {
    if !(tau > 0.0 && tau.is_finite()) {
        return domain(format!("time constant must be positive, got {tau}"));
    }
    let inv = 1.0 / tau;
    SystemModel::with_state_output(
        "lowpass",
        1,
        1,
        false,
        Arc::new(move |_t, x, u, dx| dx[0] = inv * (u[0] - x[0])),
    )
}

/// `e^{−t/τ}x0 + (1/τ)∫₀ᵗ e^{−(t−s)/τ}u(s)ds` by composite trapezoid on the grid.
pub fn convolution_oracle(tau: f64, u: &SampledSignal, x0: f64) -> Result<SampledSignal> {
    if !(tau > 0.0 && tau.is_finite()) {
        return domain(format!("time constant must be positive, got {tau}"));
    }
    if u.dim() != 1 {
        return Err(Error::Shape(
            "convolution oracle takes a scalar input".into(),
        ));
    }
    let grid = *u.grid();
    let q = (-grid.dt / tau).exp();
    let mut integral = 0.0;
    let mut decay = 1.0;
    let mut out = Vec::with_capacity(grid.n);
    out.push(x0);
    for k in 0..grid.n - 1 {
        integral = q * integral + 0.5 * grid.dt * (q * u.at(k)[0] + u.at(k + 1)[0]);
        decay *= q;
        out.push(decay * x0 + integral / tau);
    }
    SampledSignal::new(grid, 1, out)
}

/// Memristor with internal state `ẋ = −a·x + tanh(I/saturation)` and
/// memristance `M(x) = R0 + r_m·tanh(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemristorParams {
    pub a: f64,
    #[serde(default = "unit")]
    pub saturation: f64,
    pub r0: f64,
    pub r_m: f64,
}

fn unit() -> f64 {
    1.0
}

impl MemristorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return domain(format!("relaxation rate must be positive, got {}", self.a));
        }
        if !(self.saturation > 0.0 && self.saturation.is_finite()) {
            return domain(format!(
                "drive saturation must be positive, got {}",
                self.saturation
            ));
        }
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return domain(format!(
                "base memristance must be positive, got {}",
                self.r0
            ));
        }
        if !(self.r_m.abs() < self.r0) {
            return domain(format!(
                "modulation depth |{}| must be below R0 = {}",
                self.r_m, self.r0
            ));
        }
        Ok(())
    }

    /// Lipschitz constant of `M`.
    pub fn lipschitz(&self) -> f64 {
        self.r_m.abs()
    }

    /// Upper bound on `M`.
    pub fn m_bar(&self) -> f64 {
        self.r0 + self.r_m.abs()
    }

    pub fn memristance(&self, x: f64) -> f64 {
        self.r0 + self.r_m * x.tanh()
    }

    fn rhs(&self) -> Rhs {
        let (a, sat) = (self.a, self.saturation);
        Arc::new(move |_t, x, u, dx| dx[0] = -a * x[0] + (u[0] / sat).tanh())
    }
}

impl Default for MemristorParams {
    fn default() -> Self {
        MemristorParams {
            a: 1.0,
            saturation: 1.0,
            r0: 1.0,
            r_m: 0.5,
        }
    }
}

/// Voltage output `U = M(x)·I`.
pub fn memristor_model(p: MemristorParams) -> Result<SystemModel> {
    p.validate()?;
    SystemModel::new(
        "memristor",
        1,
        1,
        1,
        false,
        p.rhs(),
        Arc::new(move |x, u, y| y[0] = p.memristance(x[0]) * u[0]),
    )
}

/// Internal memristor dynamics with the state as output.
pub fn memristor_internal_model(p: MemristorParams) -> Result<SystemModel> {
    p.validate()?;
    SystemModel::with_state_output("memristor-internal", 1, 1, false, p.rhs())
}

/// `ż = 1_{t≤1}·u`, `ẋ = −x + z`; state `[z, x]`, output `x`.
pub fn counterexample_a1_model() -> SystemModel {
    let model = SystemModel::new(
        "cex-a1",
        2,
        1,
        1,
        true,
        Arc::new(|t, x, u, dx| {
            dx[0] = if t <= 1.0 { u[0] } else { 0.0 };
            dx[1] = -x[1] + x[0];
        }),
        Arc::new(|x, _u, y| y[0] = x[1]),
    )
    .expect("static dimensions")
    .with_breakpoints(vec![1.0]);
    SystemModel {
        integral_term: Some(IntegralTerm {
            state_index: 0,
            gate_end: 1.0,
        }),
        ..model
    }
}

/// `ẋ = (−x + u)/(t + 1)`.
pub fn counterexample_a2_model() -> SystemModel {
    SystemModel::with_state_output(
        "cex-a2",
        1,
        1,
        true,
        Arc::new(|t, x, u, dx| dx[0] = (u[0] - x[0]) / (t + 1.0)),
    )
    .expect("static dimensions")
}

/// `ẋ₁ = −x₁²`, `ẋ₂ = x₁(−x₂ + u)`; output `x₂`.
pub fn counterexample_a3_model() -> SystemModel {
    SystemModel::new(
        "cex-a3",
        2,
        1,
        1,
        false,
        Arc::new(|_t, x, u, dx| {
            dx[0] = -x[0] * x[0];
            dx[1] = x[0] * (u[0] - x[1]);
        }),
        Arc::new(|x, _u, y| y[0] = x[1]),
    )
    .expect("static dimensions")
}

/// Model selection by label, as used in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Lowpass {
        tau: f64,
    },
    Memristor {
        #[serde(flatten)]
        params: MemristorParams,
    },
    MemristorInternal {
        #[serde(flatten)]
        params: MemristorParams,
    },
    CexA1,
    CexA2,
    CexA3,
}

impl ModelSpec {
    pub fn build(&self) -> Result<SystemModel> {
        match self {
            ModelSpec::Lowpass { tau } => lowpass_model(*tau),
            ModelSpec::Memristor { params } => memristor_model(*params),
            ModelSpec::MemristorInternal { params } => memristor_internal_model(*params),
            ModelSpec::CexA1 => Ok(counterexample_a1_model()),
            ModelSpec::CexA2 => Ok(counterexample_a2_model()),
            ModelSpec::CexA3 => Ok(counterexample_a3_model()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::Lowpass { .. } => "lowpass",
            ModelSpec::Memristor { .. } => "memristor",
            ModelSpec::MemristorInternal { .. } => "memristor-internal",
            ModelSpec::CexA1 => "cex-a1",
            ModelSpec::CexA2 => "cex-a2",
            ModelSpec::CexA3 => "cex-a3",
        }
    }
}

/// Sampled check of the incremental Lyapunov implication for `V = ‖x_a − x_b‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovCheckSpec {
    pub kappa: GainFunction,
    pub rho: GainFunction,
    pub samples: usize,
    /// Per-coordinate `[lo, hi]` for both `x_a` and `x_b`.
    pub x_box: Vec<[f64; 2]>,
    /// Per-coordinate `[lo, hi]` for both `u_a` and `u_b`.
    pub u_box: Vec<[f64; 2]>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

fn default_slack() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovWitness {
    pub index: usize,
    pub x_a: Vec<f64>,
    pub x_b: Vec<f64>,
    pub u_a: Vec<f64>,
    pub u_b: Vec<f64>,
    pub v_dot: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub samples: usize,
    /// Samples that satisfied the premise `κ(‖Δx‖) ≥ ‖Δu‖`.
    pub premise_hits: usize,
    pub violation_count: usize,
    pub first_violation: Option<usize>,
    /// At most [`MAX_WITNESSES`] violating samples, in sample order.
    pub violations: Vec<LyapunovWitness>,
}

pub const MAX_WITNESSES: usize = 100;

fn sample_box(rng: &mut ChaCha8Rng, bounds: &[[f64; 2]], out: &mut [f64]) {
    for (o, &[lo, hi]) in out.iter_mut().zip(bounds) {
        *o = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
    }
}

pub fn lyapunov_sample_check(
    model: &SystemModel,
    spec: &LyapunovCheckSpec,
) -> Result<LyapunovReport> {
    if model.time_varying {
        return Err(Error::Scope(format!(
            "{} is time-varying; the sampled Lyapunov check covers time-invariant models only",
            model.label
        )));
    }
    if spec.samples == 0 {
        return domain("sample count must be at least 1");
    }
    if spec.x_box.len() != model.state_dim || spec.u_box.len() != model.input_dim {
        return Err(Error::Shape(format!(
            "sample boxes have dimensions {}/{}, model expects {}/{}",
            spec.x_box.len(),
            spec.u_box.len(),
            model.state_dim,
            model.input_dim
        )));
    }
    for &[lo, hi] in spec.x_box.iter().chain(&spec.u_box) {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return domain(format!("invalid sample box [{lo}, {hi}]"));
        }
    }
    let (n, m) = (model.state_dim, model.input_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut xa, mut xb, mut ua, mut ub) = (vec![0.0; n], vec![0.0; n], vec![0.0; m], vec![0.0; m]);
    let (mut fa, mut fb, mut dx, mut du) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; m]);
    let mut report = LyapunovReport {
        samples: spec.samples,
        premise_hits: 0,
        violation_count: 0,
        first_violation: None,
        violations: Vec::new(),
    };
    for index in 0..spec.samples {
        sample_box(&mut rng, &spec.x_box, &mut xa);
        sample_box(&mut rng, &spec.x_box, &mut xb);
        sample_box(&mut rng, &spec.u_box, &mut ua);
        sample_box(&mut rng, &spec.u_box, &mut ub);
        for i in 0..n {
            dx[i] = xa[i] - xb[i];
        }
        for j in 0..m {
            du[j] = ua[j] - ub[j];
        }
        let r = euclid(&dx);
        if spec.kappa.eval(r) < euclid(&du) {
            continue;
        }
        report.premise_hits += 1;
        model.rhs(0.0, &xa, &ua, &mut fa);
        model.rhs(0.0, &xb, &ub, &mut fb);
        let v_dot: f64 = 2.0 * (0..n).map(|i| dx[i] * (fa[i] - fb[i])).sum::<f64>();
        let bound = -spec.rho.eval(r) + spec.slack;
        if v_dot > bound || !v_dot.is_finite() {
            report.violation_count += 1;
            report.first_violation.get_or_insert(index);
            if report.violations.len() < MAX_WITNESSES {
                report.violations.push(LyapunovWitness {
                    index,
                    x_a: xa.clone(),
                    x_b: xb.clone(),
                    u_a: ua.clone(),
                    u_b: ub.clone(),
                    v_dot,
                    bound,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(horizon: f64, dt: f64) -> TimeGrid {
        TimeGrid::with_horizon(0.0, horizon, dt).unwrap()
    }

    #[test]
    fn lowpass_closed_forms() {
        let m = lowpass_model(1.0).unwrap();
        let g = grid(1.0, 0.01);
        let free = integrate(&m, &[1.0], &SampledSignal::zeros(g, 1).unwrap(), 1).unwrap();
        assert_abs_diff_eq!(free.final_state()[0], (-1.0f64).exp(), epsilon = 1e-6);

        let g = grid(5.0, 0.01);
        let step = integrate(&m, &[0.0], &SampledSignal::constant(g, &[1.0]).unwrap(), 1).unwrap();
        for k in 0..g.n {
            assert_abs_diff_eq!(
                step.outputs.at(k)[0],
                1.0 - (-g.time(k)).exp(),
                epsilon = 1e-6
            );
            assert_eq!(step.outputs.at(k)[0], step.state(k)[0]);
        }
        assert_eq!(step.state(0), &[0.0]);
    }

    #[test]
    fn lowpass_time_constant() {
        let tau = 2.5;
        let m = lowpass_model(tau).unwrap();
        let g = grid(tau, tau / 200.0);
        let step = integrate(&m, &[0.0], &SampledSignal::constant(g, &[1.0]).unwrap(), 1).unwrap();
        assert_abs_diff_eq!(step.final_state()[0], 1.0 - (-1.0f64).exp(), epsilon = 1e-6);
        assert!(lowpass_model(0.0).is_err());
    }

    #[test]
    fn first_sample_is_initial_state() {
        let p = MemristorParams::default();
        let m = memristor_model(p).unwrap();
        let g = grid(0.1, 0.05);
        let u = SampledSignal::constant(g, &[0.3]).unwrap();
        let tr = integrate(&m, &[0.7], &u, 1).unwrap();
        assert_eq!(tr.state(0), &[0.7]);
        assert_eq!(tr.outputs.at(0)[0], p.memristance(0.7) * 0.3);
    }

    #[test]
    fn divergence_reports_time() {
        let blowup = SystemModel::with_state_output(
            "blowup",
            1,
            1,
            false,
            Arc::new(|_t, x, _u, dx| dx[0] = x[0] * x[0]),
        )
        .unwrap();
        let g = grid(3.0, 0.01);
        match integrate(&blowup, &[1.0], &SampledSignal::zeros(g, 1).unwrap(), 1) {
            Err(Error::Divergence { t }) => assert!(t > 0.9 && t < 3.0, "t = {t}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn convolution_oracle_examples() {
        let g = grid(10.0, 0.01);
        let decay = convolution_oracle(2.0, &SampledSignal::zeros(g, 1).unwrap(), 3.0).unwrap();
        for k in (0..g.n).step_by(50) {
            assert_abs_diff_eq!(
                decay.at(k)[0],
                3.0 * (-g.time(k) / 2.0).exp(),
                epsilon = 1e-12
            );
        }
        let step =
            convolution_oracle(2.0, &SampledSignal::constant(g, &[1.0]).unwrap(), 0.0).unwrap();
        for k in (0..g.n).step_by(50) {
            assert_abs_diff_eq!(
                step.at(k)[0],
                1.0 - (-g.time(k) / 2.0).exp(),
                epsilon = 1e-4
            );
        }
    }

    #[test]
    fn memristor_examples() {
        let p = MemristorParams {
            a: 1.0,
            saturation: 1.0,
            r0: 2.0,
            r_m: 0.8,
        };
        let m = memristor_model(p).unwrap();
        let g = grid(30.0, 0.01);
        let zero = integrate(&m, &[1.3], &SampledSignal::zeros(g, 1).unwrap(), 1).unwrap();
        assert!(zero.outputs.as_slice().iter().all(|&v| v == 0.0));

        let one = integrate(&m, &[0.0], &SampledSignal::constant(g, &[1.0]).unwrap(), 1).unwrap();
        assert_eq!(one.outputs.at(0)[0], p.r0);
        let x_inf = 1.0f64.tanh();
        assert_abs_diff_eq!(one.final_state()[0], x_inf, epsilon = 1e-9);
        assert_abs_diff_eq!(
            one.outputs.at(g.n - 1)[0],
            p.r0 + p.r_m * x_inf.tanh(),
            epsilon = 1e-9
        );

        assert!(memristor_model(MemristorParams { r_m: 2.0, ..p }).is_err());
        assert!(memristor_model(MemristorParams { a: 0.0, ..p }).is_err());
        assert_eq!(p.lipschitz(), 0.8);
        assert_eq!(p.m_bar(), 2.8);
    }

    #[test]
    fn counterexample_a1_closed_form() {
        let m = counterexample_a1_model();
        let g = grid(5.0, 0.01);
        let u = SampledSignal::from_fn(g, |t| if t <= 1.0 + 1e-12 { 1.0 } else { 0.0 }).unwrap();
        let tr = integrate(&m, &[0.0, 0.0], &u, 1).unwrap();
        let e1 = (-1.0f64).exp();
        assert_abs_diff_eq!(tr.outputs.at(100)[0], e1, epsilon = 1e-5);
        assert_abs_diff_eq!(
            tr.outputs.at(500)[0],
            1.0 - (1.0 - e1) * (-4.0f64).exp(),
            epsilon = 1e-5
        );
    }

    #[test]
    fn counterexample_a1_splits_off_grid_breakpoint() {
        let m = counterexample_a1_model();
        let g = grid(4.0, 0.3);
        let tr = integrate(
            &m,
            &[0.0, 0.0],
            &SampledSignal::constant(g, &[1.0]).unwrap(),
            4,
        )
        .unwrap();
        assert_abs_diff_eq!(tr.final_state()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn counterexample_a2_closed_forms() {
        let m = counterexample_a2_model();
        let g = grid(10.0, 0.01);
        let ones = integrate(&m, &[0.0], &SampledSignal::constant(g, &[1.0]).unwrap(), 1).unwrap();
        assert_abs_diff_eq!(ones.outputs.at(400)[0], 0.8, epsilon = 1e-6);

        let drive = SampledSignal::from_fn(g, |t| (10.0 - t).exp()).unwrap();
        let tr = integrate(&m, &[0.0], &drive, 1).unwrap();
        let exact = (10.0f64.exp() - 1.0) / 11.0;
        assert!((tr.final_state()[0] - exact).abs() / exact < 1e-3);

        let free = integrate(&m, &[2.0], &SampledSignal::zeros(g, 1).unwrap(), 1).unwrap();
        for k in (0..g.n).step_by(100) {
            assert_abs_diff_eq!(
                free.outputs.at(k)[0],
                2.0 / (g.time(k) + 1.0),
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn counterexample_a3_closed_forms() {
        let m = counterexample_a3_model();
        let g = grid(20.0, 0.01);
        let tr = integrate(&m, &[1.0, 1.5], &SampledSignal::zeros(g, 1).unwrap(), 1).unwrap();
        for k in (0..g.n).step_by(100) {
            let t = g.time(k);
            assert_abs_diff_eq!(tr.state(k)[0], 1.0 / (t + 1.0), epsilon = 1e-6);
            assert_abs_diff_eq!(tr.outputs.at(k)[0], 1.5 / (t + 1.0), epsilon = 1e-6);
        }
    }

    fn lyapunov_spec(kappa: f64, rho: GainFunction, samples: usize) -> LyapunovCheckSpec {
        LyapunovCheckSpec {
            kappa: GainFunction::linear(kappa).unwrap(),
            rho,
            samples,
            x_box: vec![[-3.0, 3.0]],
            u_box: vec![[-2.0, 2.0]],
            seed: 5,
            slack: 1e-9,
        }
    }

    #[test]
    fn lyapunov_lowpass_and_memristor_hold() {
        let quad = GainFunction::polynomial(vec![0.0, 1.0]).unwrap();
        let rep = lyapunov_sample_check(
            &lowpass_model(1.0).unwrap(),
            &lyapunov_spec(0.5, quad, 100_000),
        )
        .unwrap();
        assert_eq!(rep.samples, 100_000);
        assert!(rep.premise_hits > 10_000);
        assert_eq!(rep.violation_count, 0);

        let half_quad = GainFunction::polynomial(vec![0.0, 0.5]).unwrap();
        let internal = memristor_internal_model(MemristorParams::default()).unwrap();
        let rep =
            lyapunov_sample_check(&internal, &lyapunov_spec(0.5, half_quad, 100_000)).unwrap();
        assert_eq!(rep.violation_count, 0);
    }

    #[test]
    fn lyapunov_flags_unstable_and_rejects_time_varying() {
        let unstable = SystemModel::with_state_output(
            "unstable",
            1,
            1,
            false,
            Arc::new(|_t, x, _u, dx| dx[0] = x[0]),
        )
        .unwrap();
        let quad = GainFunction::polynomial(vec![0.0, 1.0]).unwrap();
        let rep =
            lyapunov_sample_check(&unstable, &lyapunov_spec(0.5, quad.clone(), 1000)).unwrap();
        assert!(rep.violation_count > 0);
        assert!(rep.first_violation.unwrap() < 5);
        assert_eq!(rep.violations[0].index, rep.first_violation.unwrap());

        let err = lyapunov_sample_check(&counterexample_a2_model(), &lyapunov_spec(0.5, quad, 10));
        assert!(matches!(err, Err(Error::Scope(_))));
    }

    #[test]
    fn model_spec_labels_roundtrip() {
        let spec: ModelSpec = serde_json::from_str(r#"{"model":"lowpass","tau":2.0}"#).unwrap();
        assert_eq!(spec, ModelSpec::Lowpass { tau: 2.0 });
        let spec: ModelSpec = serde_json::from_str(r#"{"model":"cex-a1"}"#).unwrap();
        assert_eq!(spec.build().unwrap().label, "cex-a1");
        let spec: ModelSpec =
            serde_json::from_str(r#"{"model":"memristor","a":1.0,"r0":1.0,"r_m":0.5}"#).unwrap();
        assert_eq!(spec.build().unwrap().label, "memristor");
        assert!(serde_json::from_str::<ModelSpec>(r#"{"model":"nope"}"#).is_err());
    }
}
