//! Comparison functions: memory kernels, class-K∞ gains and class-KL decay terms.
//!
//! Every object here is an immutable value. Families are closed enums with
//! serde representation `{"family": ..., "params": {...}}` so that candidates
//! can be written in experiment configs.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Relative bracket width at which monotone bisection stops.
const INVERSE_TOL: f64 = 1e-13;

/// Number of points of the logarithmic r-grid used by [`kernel_from_gain`].
pub const KERNEL_R_GRID: usize = 64;

/// A nonincreasing weight `w: [0, ∞) → [0, 1]` with vanishing tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum MemoryKernel {
    /// `w(Δt) = exp(-rate·Δt)`.
    Exponential { rate: f64 },
    /// `w(Δt) = (1 + Δt/scale)^(-exponent)`.
    PowerLaw { exponent: f64, scale: f64 },
    /// Samples at increasing lags starting at 0, linearly interpolated and
    /// held at the final weight past the last lag.
    Tabulated(TabulatedKernel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedKernel {
    pub lags: Vec<f64>,
    pub weights: Vec<f64>,
    /// Largest admissible final weight; stands in for `w(∞) = 0`.
    pub tail_tol: f64,
}

impl MemoryKernel {
    pub fn exponential(rate: f64) -> Result<Self> {
        let k = MemoryKernel::Exponential { rate };
        k.validate()?;
        Ok(k)
    }

    pub fn power_law(exponent: f64, scale: f64) -> Result<Self> {
        let k = MemoryKernel::PowerLaw { exponent, scale };
        k.validate()?;
        Ok(k)
    }

    pub fn tabulated(lags: Vec<f64>, weights: Vec<f64>, tail_tol: f64) -> Result<Self> {
        let k = MemoryKernel::Tabulated(TabulatedKernel {
            lags,
            weights,
            tail_tol,
        });
        k.validate()?;
        Ok(k)
    }

    /// Kernel equal to one on `[0, horizon]`; the weight-free special case.
    pub fn ones(horizon: f64) -> Result<Self> {
        Self::tabulated(vec![0.0, horizon], vec![1.0, 1.0], 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MemoryKernel::Exponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return domain(format!(
                        "exponential kernel rate must be positive, got {rate}"
                    ));
                }
            }
            MemoryKernel::PowerLaw { exponent, scale } => {
                if !(exponent.is_finite() && *exponent > 0.0 && scale.is_finite() && *scale > 0.0) {
                    return domain("power-law kernel needs exponent > 0 and scale > 0");
                }
            }
            MemoryKernel::Tabulated(t) => t.validate()?,
        }
        Ok(())
    }

    /// Weight at `lag`; negative or NaN lags are a domain error.
    pub fn eval(&self, lag: f64) -> Result<f64> {
        if !(lag >= 0.0) {
            return domain(format!("kernel lag must be nonnegative, got {lag}"));
        }
        Ok(self.weight(lag))
    }

    /// Weight at a lag already known to be nonnegative.
    pub(crate) fn weight(&self, lag: f64) -> f64 {
        match self {
            MemoryKernel::Exponential { rate } => (-rate * lag).exp(),
            MemoryKernel::PowerLaw { exponent, scale } => (1.0 + lag / scale).powf(-exponent),
            MemoryKernel::Tabulated(t) => t.interpolate(lag),
        }
    }

    /// Per-step decay factor when the kernel is exponential; enables the
    /// O(n) recursion for the fading sup-norm.
    pub(crate) fn step_factor(&self, dt: f64) -> Option<f64> {
        match self {
            MemoryKernel::Exponential { rate } => Some((-rate * dt).exp()),
            _ => None,
        }
    }
}

impl TabulatedKernel {
    fn validate(&self) -> Result<()> {
        let n = self.lags.len();
        if n == 0 {
            return domain("tabulated kernel needs at least one sample");
        }
        if self.weights.len() != n {
            return Err(Error::Shape(format!(
                "tabulated kernel has {} lags but {} weights",
                n,
                self.weights.len()
            )));
        }
        if self.lags[0] != 0.0 {
            return domain("tabulated kernel lags must start at 0");
        }
        if self
            .lags
            .windows(2)
            .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return domain("tabulated kernel lags must be strictly increasing and finite");
        }
        if self.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return domain("tabulated kernel weights must lie in [0, 1]");
        }
        if self.weights.windows(2).any(|w| w[1] > w[0]) {
            return domain("tabulated kernel weights must be nonincreasing");
        }
        if !(0.0..=1.0).contains(&self.tail_tol) {
            return domain("tabulated kernel tail tolerance must lie in [0, 1]");
        }
        let last = self.weights[n - 1];
        if last > self.tail_tol {
            return domain(format!(
                "final tabulated weight {last} exceeds tail tolerance {}",
                self.tail_tol
            ));
        }
        Ok(())
    }

    fn interpolate(&self, lag: f64) -> f64 {
        let idx = self.lags.partition_point(|&l| l <= lag);
        if idx >= self.lags.len() {
            return self.weights[self.weights.len() - 1];
        }
        // lags[0] == 0 <= lag, so idx >= 1 here.
        let (l0, l1) = (self.lags[idx - 1], self.lags[idx]);
        let (w0, w1) = (self.weights[idx - 1], self.weights[idx]);
        w0 + (w1 - w0) * (lag - l0) / (l1 - l0)
    }
}

/// Smallest nonincreasing kernel majorizing raw samples: a reverse running maximum.
pub fn kernel_monotone_envelope(lags: &[f64], raw: &[f64], tail_tol: f64) -> Result<MemoryKernel> {
    if raw.is_empty() {
        return domain("cannot take the envelope of an empty sample set");
    }
    if raw.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return domain("raw kernel weights must lie in [0, 1]");
    }
    let mut env = raw.to_vec();
    for k in (0..env.len().saturating_sub(1)).rev() {
        env[k] = env[k].max(env[k + 1]);
    }
    MemoryKernel::tabulated(lags.to_vec(), env, tail_tol)
}

/// Kernel `w(t) = sup_{r ∈ (0, 2·input_bound]} µ⁻¹(e^{-λt/2} µ(r)) / r`
/// tabulated on `lag_grid`.
///
/// The supremum runs over a [`KERNEL_R_GRID`]-point logarithmic grid spanning
/// six decades below `2·input_bound`. The result is passed through
/// [`kernel_monotone_envelope`] and its tail tolerance is the final weight.
pub fn kernel_from_gain(
    mu: &GainFunction,
    lambda: f64,
    input_bound: f64,
    lag_grid: &[f64],
) -> Result<MemoryKernel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return domain(format!("decay rate must be positive, got {lambda}"));
    }
    if !(input_bound > 0.0 && input_bound.is_finite()) {
        return domain(format!("input bound must be positive, got {input_bound}"));
    }
    mu.validate()?;
    let r_max = 2.0 * input_bound;
    let r_min = r_max * 1e-6;
    let ratio = (r_max / r_min).powf(1.0 / (KERNEL_R_GRID - 1) as f64);
    let r_grid: Vec<f64> = (0..KERNEL_R_GRID)
        .map(|i| {
            if i + 1 == KERNEL_R_GRID {
                r_max
            } else {
                r_min * ratio.powi(i as i32)
            }
        })
        .collect();
    let mu_r: Vec<f64> = r_grid.iter().map(|&r| mu.eval(r)).collect();

    let mut raw = Vec::with_capacity(lag_grid.len());
    for &t in lag_grid {
        if !(t >= 0.0) {
            return domain(format!("lag grid entries must be nonnegative, got {t}"));
        }
        let decay = (-lambda * t / 2.0).exp();
        let mut best: f64 = 0.0;
        for (&r, &m) in r_grid.iter().zip(&mu_r) {
            let arg = mu.inverse(decay * m).map_err(|e| {
                Error::Numeric(format!(
                    "gain not invertible at {} (r = {r}, lag = {t}): {e}",
                    decay * m
                ))
            })?;
            best = best.max(arg / r);
        }
        raw.push(best.clamp(0.0, 1.0));
    }
    let tail = raw.last().copied().unwrap_or(0.0);
    kernel_monotone_envelope(lag_grid, &raw, tail)
}

/// A class-K∞ function restricted to families with a computable inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum GainFunction {
    /// `γ(r) = slope·r`.
    Linear { slope: f64 },
    /// `γ(r) = Σ_k coeffs[k]·r^(k+1)`; zero constant term is implicit.
    Polynomial { coeffs: Vec<f64> },
    /// Strictly increasing samples from `(0, 0)`, linearly interpolated;
    /// extrapolated with the last slope when evaluated, not when inverted.
    Tabulated { args: Vec<f64>, values: Vec<f64> },
}

impl GainFunction {
    pub fn linear(slope: f64) -> Result<Self> {
        let g = GainFunction::Linear { slope };
        g.validate()?;
        Ok(g)
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        let g = GainFunction::Polynomial { coeffs };
        g.validate()?;
        Ok(g)
    }

    pub fn tabulated(args: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let g = GainFunction::Tabulated { args, values };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GainFunction::Linear { slope } => {
                if !(slope.is_finite() && *slope > 0.0) {
                    return domain(format!("linear gain slope must be positive, got {slope}"));
                }
            }
            GainFunction::Polynomial { coeffs } => {
                if coeffs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                    return domain("polynomial gain coefficients must be finite and nonnegative");
                }
                if !coeffs.iter().any(|&c| c > 0.0) {
                    return domain("polynomial gain needs a positive coefficient");
                }
            }
            GainFunction::Tabulated { args, values } => {
                if args.len() < 2 || args.len() != values.len() {
                    return domain("tabulated gain needs at least two (arg, value) samples");
                }
                if args[0] != 0.0 || values[0] != 0.0 {
                    return domain("tabulated gain must start at (0, 0)");
                }
                let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0] && w[1].is_finite());
                if !increasing(args) || !increasing(values) {
                    return domain("tabulated gain samples must be strictly increasing");
                }
            }
        }
        Ok(())
    }

    /// `γ(r)` for `r ≥ 0`.
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            GainFunction::Linear { slope } => slope * r,
            GainFunction::Polynomial { coeffs } => {
                // Horner on r·(c0 + c1 r + ...)
                let inner = coeffs.iter().rev().fold(0.0, |acc, &c| acc * r + c);
                inner * r
            }
            GainFunction::Tabulated { args, values } => {
                let n = args.len();
                let idx = args.partition_point(|&a| a <= r).clamp(1, n - 1);
                let (a0, a1) = (args[idx - 1], args[idx]);
                let (v0, v1) = (values[idx - 1], values[idx]);
                v0 + (v1 - v0) * (r - a0) / (a1 - a0)
            }
        }
    }

    /// `γ⁻¹(value)`.
    pub fn inverse(&self, value: f64) -> Result<f64> {
        if !(value >= 0.0) || !value.is_finite() {
            return domain(format!(
                "gain inverse needs a finite nonnegative value, got {value}"
            ));
        }
        if value == 0.0 {
            return Ok(0.0);
        }
        match self {
            GainFunction::Linear { slope } => Ok(value / slope),
            GainFunction::Polynomial { .. } => self.bisect_inverse(value),
            GainFunction::Tabulated { args, values } => {
                let n = values.len();
                if value > values[n - 1] {
                    return domain(format!(
                        "value {value} exceeds tabulated gain range [0, {}]",
                        values[n - 1]
                    ));
                }
                let idx = values.partition_point(|&v| v < value).max(1);
                let (a0, a1) = (args[idx - 1], args[idx]);
                let (v0, v1) = (values[idx - 1], values[idx]);
                Ok(a0 + (a1 - a0) * (value - v0) / (v1 - v0))
            }
        }
    }

    fn bisect_inverse(&self, value: f64) -> Result<f64> {
        let mut hi = 1.0;
        while self.eval(hi) < value {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::Numeric(format!(
                    "could not bracket gain inverse of {value}"
                )));
            }
        }
        let mut lo = 0.5 * hi;
        while lo > 0.0 && self.eval(lo) >= value {
            hi = lo;
            lo *= 0.5;
        }
        // γ(lo) < value <= γ(hi)
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= INVERSE_TOL * hi {
                break;
            }
            if self.eval(mid) < value {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `c·γ` for `c > 0`, in the same family.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return domain(format!("gain scale must be positive, got {c}"));
        }
        Ok(match self {
            GainFunction::Linear { slope } => GainFunction::Linear { slope: slope * c },
            GainFunction::Polynomial { coeffs } => GainFunction::Polynomial {
                coeffs: coeffs.iter().map(|k| k * c).collect(),
            },
            GainFunction::Tabulated { args, values } => GainFunction::Tabulated {
                args: args.clone(),
                values: values.iter().map(|v| v * c).collect(),
            },
        })
    }

    /// `γ(r) + slope·r`, in the same family.
    pub fn plus_linear(&self, slope: f64) -> Result<Self> {
        if !(slope >= 0.0 && slope.is_finite()) {
            return domain(format!("added slope must be nonnegative, got {slope}"));
        }
        Ok(match self {
            GainFunction::Linear { slope: s } => GainFunction::Linear { slope: s + slope },
            GainFunction::Polynomial { coeffs } => {
                let mut coeffs = coeffs.clone();
                coeffs[0] += slope;
                GainFunction::Polynomial { coeffs }
            }
            GainFunction::Tabulated { args, values } => GainFunction::Tabulated {
                args: args.clone(),
                values: args
                    .iter()
                    .zip(values)
                    .map(|(a, v)| v + slope * a)
                    .collect(),
            },
        })
    }
}

/// A class-KL function `β(r, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum KLFunction {
    /// `β(r, t) = gain(r)·exp(-rate·t)`.
    ExpDecay { gain: GainFunction, rate: f64 },
    /// `β(r, t) = k_part(r)·kernel(t)`.
    Product {
        k_part: GainFunction,
        kernel: MemoryKernel,
    },
}

impl KLFunction {
    pub fn exp_decay(gain: GainFunction, rate: f64) -> Result<Self> {
        let b = KLFunction::ExpDecay { gain, rate };
        b.validate()?;
        Ok(b)
    }

    pub fn product(k_part: GainFunction, kernel: MemoryKernel) -> Result<Self> {
        let b = KLFunction::Product { k_part, kernel };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KLFunction::ExpDecay { gain, rate } => {
                gain.validate()?;
                if !(rate.is_finite() && *rate > 0.0) {
                    return domain(format!("KL decay rate must be positive, got {rate}"));
                }
            }
            KLFunction::Product { k_part, kernel } => {
                k_part.validate()?;
                kernel.validate()?;
            }
        }
        Ok(())
    }

    pub fn eval(&self, r: f64, t: f64) -> Result<f64> {
        if !(r >= 0.0) || !(t >= 0.0) {
            return domain(format!(
                "KL arguments must be nonnegative, got r = {r}, t = {t}"
            ));
        }
        Ok(self.value(r, t))
    }

    pub(crate) fn value(&self, r: f64, t: f64) -> f64 {
        match self {
            KLFunction::ExpDecay { gain, rate } => gain.eval(r) * (-rate * t).exp(),
            KLFunction::Product { k_part, kernel } => k_part.eval(r) * kernel.weight(t),
        }
    }

    /// `c·β` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Ok(match self {
            KLFunction::ExpDecay { gain, rate } => KLFunction::ExpDecay {
                gain: gain.scaled(c)?,
                rate: *rate,
            },
            KLFunction::Product { k_part, kernel } => KLFunction::Product {
                k_part: k_part.scaled(c)?,
                kernel: kernel.clone(),
            },
        })
    }
}
