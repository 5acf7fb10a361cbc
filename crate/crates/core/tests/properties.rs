//! Cross-module invariants checked on random ensembles.

use fmlab::fm_analysis::{
    clip_to_budget, falsify_fm, fm_margin, input_budget, lowpass_certificate, EnsembleSpec,
    FmCertificateCandidate, FmForm, DEFAULT_MARGIN_TOL,
};
use fmlab::{
    build_filterbank, convolution_oracle, counterexample_a2_model, counterexample_a3_model,
    generate_signal, integrate, kernel_from_gain, lowpass_model, memristor_model, run_bank,
    signal_diff, GainFunction, KLFunction, MemoryKernel, MemristorParams, SampledSignal,
    SignalGeneratorSpec, SignalKind, TimeGrid,
};
use proptest::prelude::*;

fn bounded_input(seed: u64, grid: TimeGrid, amplitude: f64) -> SampledSignal {
    let kind = match seed % 3 {
        0 => SignalKind::PiecewiseConstant {
            levels: 7,
            amplitude,
        },
        1 => SignalKind::SmoothedNoise {
            amplitude,
            correlation_time: 0.4,
        },
        _ => SignalKind::Sinusoid {
            amplitude,
            omega: 0.3 + (seed % 17) as f64 * 0.2,
            phase: seed as f64,
        },
    };
    generate_signal(&SignalGeneratorSpec { kind, seed, dim: 1 }, &grid).unwrap()
}

fn step_error(substeps: usize) -> f64 {
    let g = TimeGrid::with_horizon(0.0, 2.0, 0.2).unwrap();
    let tr = integrate(
        &lowpass_model(1.0).unwrap(),
        &[0.0],
        &SampledSignal::constant(g, &[1.0]).unwrap(),
        substeps,
    )
    .unwrap();
    (tr.final_state()[0] - (1.0 - (-2.0f64).exp())).abs()
}

#[test]
fn rk4_error_ratio_is_fourth_order() {
    for s in [1, 2, 4] {
        let ratio = step_error(s) / step_error(2 * s);
        assert!(
            (12.0..=20.0).contains(&ratio),
            "substeps {s}: ratio {ratio}"
        );
    }
}

#[test]
fn integrator_agrees_with_convolution() {
    let g = TimeGrid::with_horizon(0.0, 10.0, 0.01).unwrap();
    let m = lowpass_model(1.0).unwrap();
    for seed in 0..100 {
        let u = bounded_input(seed, g, 2.0);
        let x0 = (seed as f64 / 50.0) - 1.0;
        let a = integrate(&m, &[x0], &u, 1).unwrap().outputs;
        let b = convolution_oracle(1.0, &u, x0).unwrap();
        let gap = signal_diff(&a, &b).unwrap().max_norm();
        assert!(gap < 1e-4, "seed {seed}: gap {gap}");
    }
}

#[test]
fn a3_reduces_to_a2() {
    let g = TimeGrid::with_horizon(0.0, 20.0, 0.01).unwrap();
    let (a2, a3) = (counterexample_a2_model(), counterexample_a3_model());
    for seed in 0..20 {
        let u = bounded_input(seed, g, 2.0);
        let x = integrate(&a2, &[0.5], &u, 1).unwrap().outputs;
        let x2 = integrate(&a3, &[1.0, 0.5], &u, 1).unwrap().outputs;
        assert!(signal_diff(&x, &x2).unwrap().max_norm() < 1e-5);
    }
}

#[test]
fn readout_is_applied_to_every_state() {
    let p = MemristorParams {
        a: 1.0,
        saturation: 1.0,
        r0: 1.0,
        r_m: 0.5,
    };
    let g = TimeGrid::with_horizon(0.0, 5.0, 0.01).unwrap();
    let u = bounded_input(4, g, 2.0);
    let tr = integrate(&memristor_model(p).unwrap(), &[0.2], &u, 1).unwrap();
    for k in 0..g.n {
        assert_eq!(
            tr.outputs.at(k)[0],
            p.memristance(tr.state(k)[0]) * u.at(k)[0]
        );
    }
}

#[test]
fn kernel_from_gain_matches_exponentials() {
    let g = TimeGrid::with_horizon(0.0, 20.0, 0.05).unwrap();
    let lags = g.lags();
    for lambda in [0.5, 1.0, 2.0] {
        let id = kernel_from_gain(&GainFunction::linear(1.0).unwrap(), lambda, 2.0, &lags).unwrap();
        let sq = kernel_from_gain(
            &GainFunction::polynomial(vec![0.0, 1.0]).unwrap(),
            lambda,
            2.0,
            &lags,
        )
        .unwrap();
        for &t in &lags {
            assert!((id.eval(t).unwrap() - (-lambda * t / 2.0).exp()).abs() < 1e-6);
            assert!((sq.eval(t).unwrap() - (-lambda * t / 4.0).exp()).abs() < 1e-4);
        }
    }
}

fn lowpass_ensemble(pairs: usize, seed: u64) -> EnsembleSpec {
    EnsembleSpec {
        x0_box: vec![[-2.0, 2.0]],
        inputs: vec![
            SignalKind::PiecewiseConstant {
                levels: 6,
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
fn sum_and_max_forms_imply_each_other() {
    let m = lowpass_model(1.0).unwrap();
    let ens = lowpass_ensemble(100, 21);
    let sum = lowpass_certificate(1.0).unwrap();
    assert!(falsify_fm(&m, &sum, &ens, DEFAULT_MARGIN_TOL).unwrap().pass);
    let doubled = FmCertificateCandidate {
        beta: sum.beta.scaled(2.0).unwrap(),
        gamma: sum.gamma.scaled(2.0).unwrap(),
        form: FmForm::Max,
        ..sum.clone()
    };
    let rep = falsify_fm(&m, &doubled, &ens, DEFAULT_MARGIN_TOL).unwrap();
    assert!(rep.pass);
    let as_sum = FmCertificateCandidate {
        form: FmForm::Sum,
        ..doubled
    };
    let rep_sum = falsify_fm(&m, &as_sum, &ens, DEFAULT_MARGIN_TOL).unwrap();
    assert!(rep_sum.pass);
    for (a, b) in rep.per_pair_min.iter().zip(&rep_sum.per_pair_min) {
        assert!(b >= a);
    }
}

#[test]
fn zero_input_gap_is_incremental_stability() {
    let m = lowpass_model(1.0).unwrap();
    let cand = lowpass_certificate(1.0).unwrap();
    let g = TimeGrid::with_horizon(0.0, 10.0, 0.01).unwrap();
    for seed in 0..10 {
        let u = bounded_input(seed, g, 2.0);
        let (xa, xb) = (seed as f64 * 0.3 - 1.5, 0.7);
        let ta = integrate(&m, &[xa], &u, 1).unwrap();
        let tb = integrate(&m, &[xb], &u, 1).unwrap();
        let margins = fm_margin(&ta, &tb, &u, &u, &cand).unwrap();
        for (k, mg) in margins.iter().enumerate() {
            let dy = (ta.outputs.at(k)[0] - tb.outputs.at(k)[0]).abs();
            let beta = cand.beta.eval((xa - xb).abs(), g.time(k)).unwrap();
            assert!((mg - (beta - dy)).abs() < 1e-15);
            assert!(*mg >= -1e-9);
        }
    }
}

#[test]
fn budget_clipped_pairs_meet_the_target() {
    let m = lowpass_model(1.0).unwrap();
    let ens = lowpass_ensemble(200, 8);
    let gamma = GainFunction::linear(2.0).unwrap();
    let w = MemoryKernel::exponential(0.5).unwrap();
    let (r, t_star) = (0.1, 2.0);
    let budget = input_budget(&gamma, &w, r, t_star, &ens.grid).unwrap();
    let beta = KLFunction::exp_decay(GainFunction::linear(1.0).unwrap(), 1.0).unwrap();
    let start = ens.grid.index_of(t_star);
    for i in 0..ens.pairs {
        let pair = ens.sample_pair(i).unwrap();
        let ub = clip_to_budget(&pair.u_a, &pair.u_b, &budget).unwrap();
        let ya = integrate(&m, &pair.x0_a, &pair.u_a, 1).unwrap().outputs;
        let yb = integrate(&m, &pair.x0_b, &ub, 1).unwrap().outputs;
        let dx0 = (pair.x0_a[0] - pair.x0_b[0]).abs();
        for k in start..ens.grid.n {
            let dy = (ya.at(k)[0] - yb.at(k)[0]).abs();
            assert!(dy <= beta.eval(dx0, ens.grid.time(k)).unwrap() + r + 1e-6);
        }
    }
}

#[test]
fn trained_cascade_is_itself_fading_memory() {
    use fmlab::fm_analysis::{fit_exponential_rate, FitOptions, FitOutcome, GainFamily};
    use fmlab::{train_approximator, ApproximatorConfig};
    let p = MemristorParams {
        a: 1.0,
        saturation: 1.0,
        r0: 1.0,
        r_m: 0.5,
    };
    let train = EnsembleSpec {
        x0_box: vec![[0.0, 0.0]],
        inputs: vec![SignalKind::SmoothedNoise {
            amplitude: 2.0,
            correlation_time: 1.0,
        }],
        inputs_b: None,
        input_dim: 1,
        pairs: 10,
        grid: TimeGrid::with_horizon(0.0, 20.0, 0.05).unwrap(),
        seed: 5,
        substeps: 1,
    };
    let cfg = ApproximatorConfig {
        n_filters: 3,
        rate_min: 0.5,
        rate_max: 5.0,
        degree: 2,
        ridge: 1e-2,
        feedthrough: false,
        validation_fraction: 0.2,
    };
    let cascade = train_approximator(&memristor_model(p).unwrap(), &[0.0], &train, &cfg).unwrap();
    let model = cascade.to_model().unwrap();
    let ens = EnsembleSpec {
        x0_box: vec![[0.0, 0.0]; 3],
        pairs: 60,
        ..train
    };
    let family = GainFamily {
        base: GainFunction::linear(1.0).unwrap(),
        scales: (1..=400).map(|i| i as f64 * 0.25).collect(),
    };
    let opts = FitOptions {
        rate_floor: Some(0.25),
        adversarial_probe: false,
        ..FitOptions::default()
    };
    let out = fit_exponential_rate(&model, &family, &ens, &opts).unwrap();
    let FitOutcome::Certified {
        candidate, report, ..
    } = out
    else {
        panic!("cascade not certified: {out:?}")
    };
    assert!(report.pass);
    let fixed = FmCertificateCandidate {
        kernel: MemoryKernel::exponential(0.25).unwrap(),
        ..candidate
    };
    assert!(
        falsify_fm(&model, &fixed, &ens, DEFAULT_MARGIN_TOL)
            .unwrap()
            .pass
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn larger_kernel_keeps_a_passing_certificate(seed in 0u64..1000, slow in 0.05f64..0.5) {
        let m = lowpass_model(1.0).unwrap();
        let ens = lowpass_ensemble(20, seed);
        let cand = lowpass_certificate(1.0).unwrap();
        let rep = falsify_fm(&m, &cand, &ens, DEFAULT_MARGIN_TOL).unwrap();
        prop_assert!(rep.pass);
        let wider = FmCertificateCandidate { kernel: MemoryKernel::exponential(slow).unwrap(), ..cand };
        let rep2 = falsify_fm(&m, &wider, &ens, DEFAULT_MARGIN_TOL).unwrap();
        prop_assert!(rep2.pass);
        for (a, b) in rep.per_pair_min.iter().zip(&rep2.per_pair_min) {
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn filter_bank_is_linear(s1 in 0u64..1000, s2 in 0u64..1000, alpha in -3.0f64..3.0) {
        let g = TimeGrid::with_horizon(0.0, 10.0, 0.05).unwrap();
        let bank = build_filterbank(4, 0.1, 10.0, 1).unwrap();
        let (u1, u2) = (bounded_input(s1, g, 2.0), bounded_input(s2, g, 2.0));
        let mixed = run_bank(&bank, &u1.axpy(alpha, &u2).unwrap(), None).unwrap();
        let separate = run_bank(&bank, &u1, None).unwrap().axpy(alpha, &run_bank(&bank, &u2, None).unwrap()).unwrap();
        prop_assert!(signal_diff(&mixed, &separate).unwrap().max_norm() < 1e-9);
    }
}
