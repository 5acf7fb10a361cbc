//! Uniformly sampled vector signals and the norms that enter every FM inequality.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::comparison::MemoryKernel;
use crate::error::{domain, Error, Result};

/// Uniform time grid `t_k = t0 + k·dt`, `k = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n: usize) -> Result<Self> {
        let g = TimeGrid { t0, dt, n };
        g.validate()?;
        Ok(g)
    }

    /// Grid covering `[t0, t0 + horizon]`; `horizon` is rounded to a whole number of steps.
    pub fn with_horizon(t0: f64, horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0 && dt > 0.0) {
            return domain(format!(
                "horizon and dt must be positive, got {horizon} and {dt}"
            ));
        }
        let steps = (horizon / dt).round() as usize;
        Self::new(t0, dt, steps + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return domain(format!("grid step must be positive, got {}", self.dt));
        }
        if !self.t0.is_finite() {
            return domain("grid origin must be finite");
        }
        if self.n < 2 {
            return domain(format!("grid needs at least two points, got {}", self.n));
        }
        Ok(())
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.n - 1)
    }

    pub fn horizon(&self) -> f64 {
        (self.n - 1) as f64 * self.dt
    }

    /// Lags `k·dt` from the grid origin.
    pub fn lags(&self) -> Vec<f64> {
        (0..self.n).map(|k| k as f64 * self.dt).collect()
    }

    /// Index of the grid point nearest to `t`, clamped to the grid.
    pub fn index_of(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n - 1)
        }
    }
}

/// A vector signal sampled on a [`TimeGrid`], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    grid: TimeGrid,
    dim: usize,
    data: Vec<f64>,
}

impl SampledSignal {
    pub fn new(grid: TimeGrid, dim: usize, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if dim == 0 {
            return domain("signal dimension must be at least 1");
        }
        if data.len() != grid.n * dim {
            return Err(Error::Shape(format!(
                "signal data has {} entries, expected {} x {}",
                data.len(),
                grid.n,
                dim
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return domain(format!(
                "signal value at t = {} is not finite",
                grid.time(k / dim)
            ));
        }
        Ok(SampledSignal { grid, dim, data })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Result<Self> {
        Self::new(grid, dim, vec![0.0; grid.n * dim])
    }

    pub fn constant(grid: TimeGrid, value: &[f64]) -> Result<Self> {
        let data = (0..grid.n).flat_map(|_| value.iter().copied()).collect();
        Self::new(grid, value.len(), data)
    }

    /// Scalar signal `f(t_k)`.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data = (0..grid.n).map(|k| f(grid.time(k))).collect();
        Self::new(grid, 1, data)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn at(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Scalar view of channel `c`.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.grid.n)
            .map(|k| self.data[k * self.dim + c])
            .collect()
    }

    /// Euclidean norm of the sample at index `k`.
    #[inline]
    pub fn norm_at(&self, k: usize) -> f64 {
        euclid(self.at(k))
    }

    pub fn norms(&self) -> Vec<f64> {
        (0..self.grid.n).map(|k| self.norm_at(k)).collect()
    }

    /// Piecewise-linear interpolation at time `t`, held constant outside the grid.
    pub fn interpolate_into(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.grid.t0) / self.grid.dt;
        if s <= 0.0 {
            out.copy_from_slice(self.at(0));
            return;
        }
        let last = self.grid.n - 1;
        if s >= last as f64 {
            out.copy_from_slice(self.at(last));
            return;
        }
        let k = s.floor() as usize;
        let frac = s - k as f64;
        let (a, b) = (self.at(k), self.at(k + 1));
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = x + (y - x) * frac;
        }
    }

    fn check_compatible(&self, other: &SampledSignal) -> Result<()> {
        if self.grid != other.grid || self.dim != other.dim {
            return Err(Error::Shape(format!(
                "signals differ: grid {:?} dim {} vs grid {:?} dim {}",
                self.grid, self.dim, other.grid, other.dim
            )));
        }
        Ok(())
    }

    /// `α·self + other`.
    pub fn axpy(&self, alpha: f64, other: &SampledSignal) -> Result<SampledSignal> {
        self.check_compatible(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| alpha * a + b)
            .collect();
        SampledSignal::new(self.grid, self.dim, data)
    }

    pub fn scale(&self, alpha: f64) -> SampledSignal {
        SampledSignal {
            grid: self.grid,
            dim: self.dim,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<SampledSignal> {
        SampledSignal::new(
            self.grid,
            self.dim,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn max_norm(&self) -> f64 {
        self.norms().into_iter().fold(0.0, f64::max)
    }

    /// Restriction to the sample range `[start, start + n)`.
    pub fn window(&self, start: usize, n: usize) -> Result<SampledSignal> {
        if start + n > self.grid.n {
            return Err(Error::Shape(format!(
                "window [{start}, {}) exceeds signal length {}",
                start + n,
                self.grid.n
            )));
        }
        let grid = TimeGrid::new(self.grid.time(start), self.grid.dt, n)?;
        SampledSignal::new(
            grid,
            self.dim,
            self.data[start * self.dim..(start + n) * self.dim].to_vec(),
        )
    }

    /// Writes `t,v0,v1,...` rows with shortest round-trip decimals.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_columns_csv(writer, &self.grid, self.dim, "v", &self.data)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<SampledSignal> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "t" {
            return domain("signal CSV must have a header `t,v0,...`");
        }
        let dim = headers.len() - 1;
        let mut times = Vec::new();
        let mut data = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let mut fields = record.iter().map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Domain(format!("bad CSV number {f:?}: {e}")))
            });
            times.push(fields.next().transpose()?.unwrap_or(f64::NAN));
            for v in fields {
                data.push(v?);
            }
        }
        if times.len() < 2 {
            return domain("signal CSV needs at least two rows");
        }
        let dt = times[1] - times[0];
        let grid = TimeGrid::new(times[0], dt, times.len())?;
        for (k, &t) in times.iter().enumerate() {
            if (t - grid.time(k)).abs() > 1e-9 * (1.0 + t.abs()) {
                return domain(format!("CSV time column is not uniform at row {k}"));
            }
        }
        SampledSignal::new(grid, dim, data)
    }
}

pub(crate) fn write_columns_csv<W: Write>(
    writer: W,
    grid: &TimeGrid,
    dim: usize,
    prefix: &str,
    data: &[f64],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|j| format!("{prefix}{j}")));
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(dim + 1);
    for k in 0..grid.n {
        row.clear();
        row.push(grid.time(k).to_string());
        row.extend(data[k * dim..(k + 1) * dim].iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[inline]
pub(crate) fn euclid(v: &[f64]) -> f64 {
    if v.len() == 1 {
        v[0].abs()
    } else {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Input generator families.
///
/// Random families respect `amplitude` as a bound on the Euclidean norm of
/// every sample. Deterministic families drive each channel with the same
/// scalar waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalKind {
    /// `levels` equal-length constant segments, each level drawn uniformly in the amplitude ball.
    PiecewiseConstant {
        levels: usize,
        amplitude: f64,
    },
    /// `amplitude·sin(omega·t + phase)`.
    Sinusoid {
        amplitude: f64,
        omega: f64,
        phase: f64,
    },
    /// Exponentially correlated Gaussian noise clipped to the amplitude ball.
    SmoothedNoise {
        amplitude: f64,
        correlation_time: f64,
    },
    Constant {
        value: f64,
    },
    /// `amplitude` on `[start, end]`, zero elsewhere.
    Pulse {
        amplitude: f64,
        start: f64,
        end: f64,
    },
    /// `amplitude·exp(-rate·t)`.
    Exponential {
        amplitude: f64,
        rate: f64,
    },
}

/// A seeded generator; the same spec always yields the same samples.
/// Unknown keys are rejected by the flattened [`SignalKind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalGeneratorSpec {
    #[serde(flatten)]
    pub kind: SignalKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub dim: usize,
}

fn one() -> usize {
    1
}

impl SignalKind {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                domain(format!("{name} must be positive, got {v}"))
            }
        };
        match *self {
            SignalKind::PiecewiseConstant { levels, amplitude } => {
                if levels == 0 {
                    return domain("piecewise-constant generator needs at least one level");
                }
                positive("amplitude bound", amplitude)
            }
            SignalKind::Sinusoid {
                amplitude,
                omega,
                phase,
            } => {
                if !(amplitude.is_finite() && omega.is_finite() && phase.is_finite()) {
                    return domain("sinusoid parameters must be finite");
                }
                positive("amplitude bound", amplitude.abs())
            }
            SignalKind::SmoothedNoise {
                amplitude,
                correlation_time,
            } => {
                positive("amplitude bound", amplitude)?;
                positive("correlation time", correlation_time)
            }
            SignalKind::Constant { value } => {
                if value.is_finite() {
                    Ok(())
                } else {
                    domain("constant value must be finite")
                }
            }
            SignalKind::Pulse {
                amplitude,
                start,
                end,
            } => {
                if !(amplitude.is_finite() && start.is_finite() && end.is_finite() && end >= start)
                {
                    return domain("pulse needs finite amplitude and start <= end");
                }
                Ok(())
            }
            SignalKind::Exponential { amplitude, rate } => {
                if !(amplitude.is_finite() && rate.is_finite()) {
                    return domain("exponential generator parameters must be finite");
                }
                Ok(())
            }
        }
    }
}

/// Samples a generator on `grid`.
pub fn generate_signal(spec: &SignalGeneratorSpec, grid: &TimeGrid) -> Result<SampledSignal> {
    spec.kind.validate()?;
    grid.validate()?;
    let dim = spec.dim;
    if dim == 0 {
        return domain("generator dimension must be at least 1");
    }
    let n = grid.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scalar = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        (0..n)
            .flat_map(|k| std::iter::repeat_n(f(grid.time(k)), dim))
            .collect()
    };
    let data = match spec.kind {
        SignalKind::PiecewiseConstant { levels, amplitude } => {
            let pieces: Vec<Vec<f64>> = (0..levels)
                .map(|_| ball_sample(&mut rng, dim, amplitude))
                .collect();
            let mut data = Vec::with_capacity(n * dim);
            for k in 0..n {
                let piece = ((k * levels) / n).min(levels - 1);
                data.extend_from_slice(&pieces[piece]);
            }
            data
        }
        SignalKind::Sinusoid {
            amplitude,
            omega,
            phase,
        } => scalar(&|t| amplitude * (omega * t + phase).sin()),
        SignalKind::SmoothedNoise {
            amplitude,
            correlation_time,
        } => {
            let a = (-grid.dt / correlation_time).exp();
            let b = (1.0 - a * a).sqrt();
            let mut state: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let mut data = Vec::with_capacity(n * dim);
            let spread = amplitude / 2.0;
            for _ in 0..n {
                let mut sample: Vec<f64> = state.iter().map(|s| spread * s).collect();
                let norm = euclid(&sample);
                if norm > amplitude {
                    let c = amplitude / norm;
                    sample.iter_mut().for_each(|v| *v *= c);
                }
                data.extend_from_slice(&sample);
                for s in state.iter_mut() {
                    let xi: f64 = rng.sample(StandardNormal);
                    *s = a * *s + b * xi;
                }
            }
            data
        }
        SignalKind::Constant { value } => scalar(&|_| value),
        SignalKind::Pulse {
            amplitude,
            start,
            end,
        } => scalar(&|t| {
            if t >= start && t <= end {
                amplitude
            } else {
                0.0
            }
        }),
        SignalKind::Exponential { amplitude, rate } => scalar(&|t| amplitude * (-rate * t).exp()),
    };
    SampledSignal::new(*grid, dim, data)
}

fn ball_sample(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|_| rng.random_range(-radius..=radius))
        .collect();
    let norm = euclid(&v);
    if norm > radius {
        let c = radius / norm;
        v.iter_mut().for_each(|x| *x *= c);
    }
    v
}

/// Pointwise difference `a − b`.
pub fn signal_diff(a: &SampledSignal, b: &SampledSignal) -> Result<SampledSignal> {
    a.check_compatible(b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    SampledSignal::new(a.grid, a.dim, data)
}

/// `max_{k ≤ t_index} w(t − t_k)·‖delta(t_k)‖`.
pub fn fading_sup_norm(
    delta: &SampledSignal,
    kernel: &MemoryKernel,
    t_index: usize,
) -> Result<f64> {
    if t_index >= delta.len() {
        return domain(format!(
            "time index {t_index} outside grid of {} points",
            delta.len()
        ));
    }
    let dt = delta.grid.dt;
    Ok((0..=t_index)
        .map(|k| kernel.weight((t_index - k) as f64 * dt) * delta.norm_at(k))
        .fold(0.0, f64::max))
}

/// `max_{k ≤ t_index} ‖delta(t_k)‖`.
pub fn sup_norm_prefix(delta: &SampledSignal, t_index: usize) -> Result<f64> {
    if t_index >= delta.len() {
        return domain(format!(
            "time index {t_index} outside grid of {} points",
            delta.len()
        ));
    }
    Ok((0..=t_index).map(|k| delta.norm_at(k)).fold(0.0, f64::max))
}

/// [`fading_sup_norm`] at every grid index.
pub fn fading_sup_norm_series(delta: &SampledSignal, kernel: &MemoryKernel) -> Vec<f64> {
    fading_series_from_norms(&delta.norms(), delta.grid.dt, kernel)
}

/// Fading sup-norm series from precomputed sample norms.
///
/// Exponential kernels use the exact recursion `F_{k+1} = max(q·F_k, n_{k+1})`
/// with `q = w(dt)`; other kernels take the direct O(n²) maximum.
pub(crate) fn fading_series_from_norms(norms: &[f64], dt: f64, kernel: &MemoryKernel) -> Vec<f64> {
    let n = norms.len();
    let mut out = Vec::with_capacity(n);
    if let Some(q) = kernel.step_factor(dt) {
        let mut acc: f64 = 0.0;
        for &v in norms {
            acc = (q * acc).max(v);
            out.push(acc);
        }
        return out;
    }
    let weights: Vec<f64> = (0..n).map(|k| kernel.weight(k as f64 * dt)).collect();
    for t in 0..n {
        let mut best: f64 = 0.0;
        for k in 0..=t {
            best = best.max(weights[t - k] * norms[k]);
        }
        out.push(best);
    }
    out
}

/// Running maximum of sample norms.
#[cfg(test)]
pub(crate) fn prefix_sup_from_norms(norms: &[f64]) -> Vec<f64> {
    let mut acc: f64 = 0.0;
    norms
        .iter()
        .map(|&v| {
            acc = acc.max(v);
            acc
        })
        .collect()
}
