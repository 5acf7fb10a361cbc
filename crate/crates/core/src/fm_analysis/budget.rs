use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::margin::{EnsembleSpec, Witness};
use crate::comparison::{GainFunction, KLFunction, MemoryKernel};
use crate::dynamics::{integrate, SystemModel};
use crate::error::{domain, Error, Result};
use crate::signals::{euclid, signal_diff, SampledSignal, TimeGrid};

/// Admissible input mismatch `γ⁻¹(r)/w(t* − t)` before `t*` and `γ⁻¹(r)` after.
pub fn input_budget(
    gamma: &GainFunction,
    kernel: &MemoryKernel,
    r: f64,
    t_star: f64,
    grid: &TimeGrid,
) -> Result<SampledSignal> {
    if !(r > 0.0 && r.is_finite()) {
        return domain(format!("output mismatch target must be positive, got {r}"));
    }
    if !t_star.is_finite() {
        return domain("t_star must be finite");
    }
    gamma.validate()?;
    kernel.validate()?;
    let base = gamma.inverse(r)?;
    let mut values = Vec::with_capacity(grid.n);
    for k in 0..grid.n {
        let t = grid.time(k);
        if t <= t_star {
            let w = kernel.eval(t_star - t)?;
            if !(w > 0.0) {
                return domain(format!("kernel vanishes at lag {}", t_star - t));
            }
            values.push(base / w);
        } else {
            values.push(base);
        }
    }
    SampledSignal::new(*grid, 1, values)
}

/// `u_b` moved toward `u_a` wherever `‖u_a − u_b‖` exceeds the budget.
pub fn clip_to_budget(
    u_a: &SampledSignal,
    u_b: &SampledSignal,
    budget: &SampledSignal,
) -> Result<SampledSignal> {
    if u_a.grid() != u_b.grid()
        || u_a.grid() != budget.grid()
        || u_a.dim() != u_b.dim()
        || budget.dim() != 1
    {
        return Err(Error::Shape(
            "inputs and budget must share one grid; budget must be scalar".into(),
        ));
    }
    let m = u_a.dim();
    let mut out = Vec::with_capacity(u_b.as_slice().len());
    for k in 0..u_a.len() {
        let (a, b) = (u_a.at(k), u_b.at(k));
        let gap = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let cap = budget.at(k)[0];
        let c = if gap > cap { cap / gap } else { 1.0 };
        out.extend((0..m).map(|j| a[j] - c * (a[j] - b[j])));
    }
    SampledSignal::new(*u_a.grid(), m, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub r: f64,
    pub t_star: f64,
    pub pairs: usize,
    /// Smallest `β(‖Δx(0)‖, t) + r − ‖Δy(t)‖` over pairs and grid times `t ≥ t*`.
    pub global_min_margin: f64,
    pub witness: Witness,
    pub tolerance: f64,
    pub pass: bool,
}

/// Clips `u_b` of every pair of `ens` to `budget` and checks that the output
/// mismatch stays within `β(‖Δx(0)‖, t) + r` from `t*` on.
pub fn check_budget(
    model: &SystemModel,
    beta: &KLFunction,
    budget: &SampledSignal,
    r: f64,
    t_star: f64,
    ens: &EnsembleSpec,
    tol: f64,
) -> Result<BudgetReport> {
    ens.validate()?;
    beta.validate()?;
    if budget.grid() != &ens.grid {
        return Err(Error::Shape(
            "budget and ensemble must share one grid".into(),
        ));
    }
    let start = ens.grid.index_of(t_star);
    if t_star > ens.grid.end() {
        return domain(format!("t_star {t_star} lies beyond the horizon"));
    }
    let minima: Vec<(f64, usize, u64)> = (0..ens.pairs)
        .into_par_iter()
        .map(|i| {
            let pair = ens.sample_pair(i)?;
            let u_b = clip_to_budget(&pair.u_a, &pair.u_b, budget)?;
            let ya = integrate(model, &pair.x0_a, &pair.u_a, ens.substeps)?.outputs;
            let yb = integrate(model, &pair.x0_b, &u_b, ens.substeps)?.outputs;
            let dy = signal_diff(&ya, &yb)?.norms();
            let dx0 = euclid(
                &pair
                    .x0_a
                    .iter()
                    .zip(&pair.x0_b)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            let mut best = (f64::INFINITY, start, pair.seed);
            for (k, d) in dy.iter().enumerate().skip(start) {
                let m = beta.eval(dx0, ens.grid.time(k))? + r - d;
                if m < best.0 {
                    best = (m, k, pair.seed);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let (pair, &(min, k, seed)) = minima
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("ensemble has at least one pair");
    Ok(BudgetReport {
        r,
        t_star,
        pairs: ens.pairs,
        global_min_margin: min,
        witness: Witness {
            seed,
            pair,
            t: ens.grid.time(k),
        },
        tolerance: tol,
        pass: min >= -tol,
    })
}
