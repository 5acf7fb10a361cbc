"""Builds the extension with cargo, imports it and exercises each binding.

Usage: python3 python/smoke_test.py [--no-build]
"""

import math
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_and_stage(build: bool) -> Path:
    if build:
        subprocess.run(
            ["cargo", "build", "--release", "-p", "fmlab-py", "--features", "extension-module"],
            cwd=ROOT,
            check=True,
        )
    lib = ROOT / "target" / "release" / "libfmlab_py.so"
    stage = Path(tempfile.mkdtemp(prefix="fmlab_py_"))
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy(lib, stage / f"fmlab_py{suffix}")
    return stage


def main() -> None:
    stage = build_and_stage("--no-build" not in sys.argv)
    sys.path.insert(0, str(stage))
    import fmlab_py as fm

    grid = {"t0": 0.0, "dt": 0.01, "n": 501}
    lowpass = {"model": "lowpass", "tau": 1.0}

    run = fm.simulate(lowpass, [0.0], {"kind": "constant", "value": 1.0}, grid)
    assert abs(run["outputs"][-1][0] - (1.0 - math.exp(-5.0))) < 1e-8
    rows = [[1.0]] * grid["n"]
    assert fm.simulate(lowpass, [0.0], rows, grid)["outputs"] == run["outputs"]

    noise = fm.generate_signal({"kind": "smoothed_noise", "amplitude": 2.0, "correlation_time": 0.5, "seed": 3}, grid)
    assert len(noise) == grid["n"] and max(abs(v[0]) for v in noise) <= 2.0

    linear = lambda s: {"family": "linear", "params": {"slope": s}}
    candidate = {
        "beta": {"family": "exp_decay", "params": {"gain": linear(1.0), "rate": 1.0}},
        "gamma": linear(2.0),
        "kernel": {"family": "exponential", "params": {"rate": 0.5}},
    }
    ensemble = {
        "x0_box": [[-1.0, 1.0]],
        "inputs": [{"kind": "piecewise_constant", "levels": 6, "amplitude": 2.0}],
        "pairs": 50,
        "grid": {"t0": 0.0, "dt": 0.01, "n": 1001},
        "seed": 1,
    }
    report = fm.falsify_fm(lowpass, candidate, ensemble)
    assert report["pass"] and report["global_min_margin"] >= -1e-6

    fit = fm.fit_exponential_rate(lowpass, ensemble)
    assert fit["outcome"] == "certified" and fit["rate_hat"] > 0.0
    a2 = fm.fit_exponential_rate({"model": "cex-a2"}, dict(ensemble, grid={"t0": 0.0, "dt": 0.01, "n": 2001}),
                                 options={"rate_floor": 0.2})
    assert a2["outcome"] == "no_certificate"

    budget = fm.input_budget(linear(2.0), {"family": "exponential", "params": {"rate": 0.5}}, 0.1, 2.0, grid)
    assert abs(budget[0] - 0.05 * math.e) < 1e-12 and abs(budget[-1] - 0.05) < 1e-15

    lags = [0.05 * k for k in range(100)]
    weights = fm.kernel_from_gain(linear(1.0), 1.0, 2.0, lags)
    assert max(abs(w - math.exp(-t / 2.0)) for w, t in zip(weights, lags)) < 1e-6

    cico = fm.cico_probe({"model": "cex-a1"}, [0.0, 0.0], [0.0, 0.0],
                         {"kind": "pulse", "amplitude": 1.0, "start": 0.0, "end": 1.0},
                         {"kind": "constant", "value": 0.0}, {"t0": 0.0, "dt": 0.01, "n": 1001}, 0.1)
    assert not cico["converged"] and 0.98 <= cico["tail_sup"] <= 1.0

    period = 2.0 * math.pi
    pipo = fm.pipo_probe(lowpass, [5.0], {"kind": "sinusoid", "amplitude": 1.0, "omega": 1.0, "phase": 0.0},
                         {"t0": 0.0, "dt": period / 200.0, "n": 1920}, period, 8, 10.0)
    assert abs(pipo["amplitude"] - math.sqrt(0.5)) < 1e-3

    lyap = fm.lyapunov_sample_check(lowpass, {
        "kappa": linear(0.5),
        "rho": {"family": "polynomial", "params": {"coeffs": [0.0, 1.0]}},
        "samples": 10000, "x_box": [[-2.0, 2.0]], "u_box": [[-2.0, 2.0]], "seed": 1,
    })
    assert lyap["violation_count"] == 0

    memristor = {"model": "memristor", "a": 1.0, "r0": 1.0, "r_m": 0.5}
    train = {
        "x0_box": [[0.0, 0.0]],
        "inputs": [{"kind": "smoothed_noise", "amplitude": 2.0, "correlation_time": 1.0}],
        "pairs": 20,
        "grid": {"t0": 0.0, "dt": 0.05, "n": 401},
        "seed": 11,
    }
    config = {"n_filters": 4, "rate_min": 0.1, "rate_max": 10.0, "degree": 3, "ridge": 0.01, "feedthrough": True}
    cascade = fm.Cascade.train(memristor, [0.0], train, config)
    assert cascade.metadata["validation_nrmse"] < 0.1
    spec = {"kind": "smoothed_noise", "amplitude": 2.0, "correlation_time": 1.0, "seed": 99}
    pred = cascade.predict(spec, train["grid"])
    clone = fm.Cascade.from_json(cascade.to_json())
    assert clone.predict(spec, train["grid"]) == pred
    truth = fm.simulate(memristor, [0.0], spec, train["grid"])["outputs"]
    assert fm.nrmse([pred], [truth]) < 0.1

    try:
        fm.simulate(lowpass, [0.0], {"kind": "constant", "value": 1.0}, {"t0": 0.0, "dt": 0.01, "n": 1})
    except ValueError:
        pass
    else:
        raise AssertionError("single-point grid accepted")

    print(f"python smoke test passed ({cascade!r}, fitted rate {fit['rate_hat']:.4f})")


if __name__ == "__main__":
    main()
