"""Acceptance criteria, one test per criterion.

Every test records a PASS/FAIL line (shown in the terminal summary) before
asserting. The Monte Carlo criteria use fixed master seeds and run their
repetitions on all available cores.
"""

import math
import os
import time

import numpy as np
import pytest

from conftest import record_criterion
from fpcrboot.bootstrap import sigma_tau
from fpcrboot.cli import main
from fpcrboot.dgp import gen_slope, spectrum_from_gaps
from fpcrboot.flrm import (
    FunctionalDataset,
    center,
    cross_covariance,
    eigendecompose,
    lambda_hat,
    sample_covariance,
    scaling_s_hat,
    spectral_model,
    u_hat,
)
from fpcrboot.harness import ExperimentPlan, run_bias_density, run_clt_check, run_coverage, run_power
from fpcrboot.hilbert import Curve, Grid, apply, norm

WORKERS = os.cpu_count() or 1
pytestmark = pytest.mark.acceptance


def fuzz_dataset(rng, n, m):
    g = Grid.uniform(m)
    X = rng.standard_normal((n, m)).cumsum(axis=1) / math.sqrt(m)
    y = X @ (g.weights * np.cos(3 * g.points)) + rng.standard_normal(n)
    return FunctionalDataset.from_arrays(X, y, g)


def select(rows, method, h=None):
    out = [r for r in rows if r.method == method and (h is None or r.h == h)]
    assert len(out) == 1, out
    return out[0]


# ---------------------------------------------------------------- algebra


def test_criterion_1_estimating_equation_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    cases = 0
    for _ in range(100):
        ds = fuzz_dataset(rng, int(rng.integers(5, 51)), int(rng.integers(10, 61)))
        G, D = sample_covariance(ds), cross_covariance(ds)
        model = spectral_model(ds)
        for g in range(1, model.rank + 1):
            fit = model.fit(g)
            r = D - apply(G, fit.beta_hat) - u_hat(ds, fit.residuals)
            worst = max(worst, norm(r) / (1 + norm(D)))
            cases += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 10
    record_criterion(1, ok, f"max relative residual {worst:.2e} over {cases} (dataset, g) pairs "
                            f"(tol 1e-10), {dt:.1f}s")
    assert ok


def test_criterion_2_homoscedastic_scaling_reduction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(50):
        ds = center(fuzz_dataset(rng, int(rng.integers(5, 51)), int(rng.integers(10, 61))))
        eig = eigendecompose(sample_covariance(ds), n_samples=ds.n)
        c = float(rng.uniform(0.1, 5))
        L = lambda_hat(ds, np.full(ds.n, c))
        x = Curve(ds.grid, rng.standard_normal(ds.m))
        coords = eig.coords(x.values)
        for h in range(1, eig.rank + 1):
            s = scaling_s_hat(eig, L, h, x)
            want = c * c * np.sum(coords[:h] ** 2 / eig.eigenvalues[:h])
            worst = max(worst, abs(s - want) / max(want, 1e-300))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 5
    record_criterion(2, ok, f"max relative gap {worst:.2e} over 50 fuzz cases (tol 1e-10), {dt:.1f}s")
    assert ok


def test_criterion_3_pcr_ols_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(2, 21))
        n = int(rng.integers(m + 2, 80))
        ds = fuzz_dataset(rng, n, m)
        model = spectral_model(ds)
        assert model.rank == m
        fitted = model.scores @ model.beta_coords(m)
        # independent route: principal components from the weighted
        # covariance matrix, then the normal equations
        sw = np.sqrt(ds.grid.weights)
        Xc = (ds.X - ds.X.mean(axis=0)) * sw
        _, V = np.linalg.eigh(Xc.T @ Xc)
        Z = Xc @ V
        yc = ds.y - ds.y.mean()
        coef = np.linalg.solve(Z.T @ Z, Z.T @ yc)
        worst = max(worst, float(np.max(np.abs(Z @ coef - fitted))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 5
    record_criterion(3, ok, f"max |fitted difference| {worst:.2e} over 50 designs (tol 1e-8), {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------- Monte Carlo


def test_criterion_4_clt():
    t0 = time.perf_counter()
    plan = ExperimentPlan(n=(1000,), a=(2.5,), b=(5.5,), nu=(5.0,),
                          error_mode=("heteroscedastic_chisq",), reps=1000,
                          master_seed=4004, workers=WORKERS)
    (res,) = run_clt_check(plan)
    dt = time.perf_counter() - t0
    ok = res.ks <= 0.08 and res.t_values.size == 1000
    t = res.tuning
    record_criterion(4, ok, f"KS {res.ks:.4f} (<= 0.08), k/h/g={t.k}/{t.h}/{t.g}, "
                            f"{res.t_values.size} reps, {dt:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def coverage_n200():
    t0 = time.perf_counter()
    plan = ExperimentPlan(n=(200,), a=(2.5,), b=(5.5,), nu=(5.0,),
                          error_mode=("heteroscedastic_chisq",),
                          methods=("pb_std", "rb", "naive_std"),
                          tunings=("rule_of_thumb", "h+2"), reps=500, B=500,
                          master_seed=5005, workers=WORKERS)
    rows = run_coverage(plan)
    return rows, time.perf_counter() - t0


def test_criterion_5_heteroscedastic_coverage(coverage_n200):
    rows, dt = coverage_n200
    h = rows[0].h  # rule-of-thumb rows come first
    pb, rb = select(rows, "pb_std", h), select(rows, "rb", h)
    ok = 0.90 <= pb.coverage <= 0.99 and rb.coverage <= pb.coverage - 0.05
    record_criterion(5, ok, f"pb_std {pb.coverage:.3f} (in [0.90, 0.99]), rb {rb.coverage:.3f} "
                            f"(<= pb_std - 0.05), k/h/g={pb.k}/{pb.h}/{pb.g}, "
                            f"shared run {dt:.0f}s")
    assert ok


def test_criterion_6_homoscedastic_coverage():
    t0 = time.perf_counter()
    plan = ExperimentPlan(n=(1000,), a=(2.5,), b=(5.5,), nu=(5.0,),
                          error_mode=("homoscedastic_chisq",), methods=("pb_std", "rb"),
                          tunings=("rule_of_thumb",), reps=500, B=500,
                          master_seed=6006, workers=WORKERS)
    rows = run_coverage(plan)
    dt = time.perf_counter() - t0
    pb, rb = select(rows, "pb_std"), select(rows, "rb")
    gap = abs(pb.coverage - rb.coverage)
    ok = gap <= 0.03 and all(0.91 <= r.coverage <= 0.99 for r in (pb, rb))
    record_criterion(6, ok, f"pb_std {pb.coverage:.3f}, rb {rb.coverage:.3f}, gap {gap:.3f} "
                            f"(<= 0.03, both in [0.91, 0.99]), {dt:.0f}s")
    assert ok


def test_criterion_7_naive_overcoverage(coverage_n200):
    rows, _ = coverage_n200
    h = max(r.h for r in rows)
    pb, nv = select(rows, "pb_std", h), select(rows, "naive_std", h)
    ratio = nv.mean_width / pb.mean_width
    ok = nv.coverage >= pb.coverage and ratio >= 1.05
    record_criterion(7, ok, f"h=g+2 ({pb.h}/{pb.g}): naive_std {nv.coverage:.3f} vs pb_std "
                            f"{pb.coverage:.3f}, width ratio {ratio:.3f} (>= 1.05)")
    assert ok


def test_criterion_8_construction_bias_spread():
    t0 = time.perf_counter()
    base = dict(n=(1000,), a=(2.5,), b=(5.5,), nu=(math.inf,),
                error_mode=("heteroscedastic_chisq",), reps=300, bias_g=4,
                ratios=(1.0, 1.5, 2.0), master_seed=8008, workers=WORKERS)
    (res,) = run_bias_density(ExperimentPlan(slope_scale=3.0, **base))
    sd = res.sd
    increasing = bool(sd[0] < sd[1] < sd[2])
    zero = float(np.max(np.abs(res.samples[0])))
    spec = res.spec
    _, coef = gen_slope(spec)
    gam = spectrum_from_gaps(spec.a, spec.J)
    theory = sigma_tau(2.0, gam, np.ones(spec.J), coef)
    rel = abs(sd[2] - theory) / theory
    # information only: the same design without a slope, where the slope
    # term of the limit variance is absent
    (res0,) = run_bias_density(ExperimentPlan(slope_scale=0.0, **base))
    theory0 = sigma_tau(2.0, gam, np.ones(spec.J), np.zeros(spec.J))
    dt = time.perf_counter() - t0
    ok = increasing and zero <= 1e-8 and rel <= 0.35
    record_criterion(8, ok, f"sd over h/g=1,1.5,2: {sd[0]:.3g}, {sd[1]:.3f}, {sd[2]:.3f} "
                            f"(increasing: {increasing}); max |B_n| at h=g {zero:.1e}; "
                            f"sd at h/g=2 {sd[2]:.3f} vs sigma(2) {theory:.3f} "
                            f"(rel. gap {rel:.2f}, tol 0.35) "
                            f"[zero-slope design: sd {res0.sd[2]:.3f} vs {theory0:.3f}], {dt:.0f}s")
    assert ok


def test_criterion_9_test_size_and_power():
    t0 = time.perf_counter()
    plan = ExperimentPlan(n=(50,), a=(2.5,), b=(3.5,), nu=(math.inf,),
                          error_mode=("heteroscedastic_chisq",), slope_scale=50.0,
                          hypothesis_p=(0.0, 0.5, 1.0), statistic="max", enforce=(True,),
                          reps=500, B=500, master_seed=9009, workers=WORKERS)
    rows = run_power(plan)
    dt = time.perf_counter() - t0
    rates = [r.rejection_rate for r in rows]
    ses = [r.mc_se for r in rows]
    mono = all(rates[i + 1] >= rates[i] - 2 * math.hypot(ses[i], ses[i + 1]) for i in range(2))
    ok = 0.02 <= rates[0] <= 0.09 and rates[2] >= 0.85 and mono and dt <= 20 * 60
    record_criterion(9, ok, f"rejection at p=0/0.5/1: {rates[0]:.3f}/{rates[1]:.3f}/{rates[2]:.3f} "
                            f"(size in [0.02, 0.09], power >= 0.85, monotone: {mono}), "
                            f"k/h/g={rows[0].k}/{rows[0].h}/{rows[0].g}, {dt:.0f}s")
    assert ok


# ---------------------------------------------------------------- determinism


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    from conftest import random_dataset

    ds = random_dataset(rng, n=60, m=25)
    data = tmp_path / "data.csv"
    np.savetxt(data, np.column_stack([ds.X, ds.y]), delimiter=",")
    curves = tmp_path / "curves.csv"
    np.savetxt(curves, rng.standard_normal((3, 25)), delimiter=",")
    plan = tmp_path / "plan.cfg"
    plan.write_text("experiment = coverage\nn = 60\nnu = 5\nmethods = clt, pb_std, rb, naive_std\n"
                    "tunings = rule_of_thumb; h+1\nreps = 24\nB = 99\nseed = 10\n")
    commands = {
        "simulate": (["simulate", str(plan)], ["plan.csv"]),
        "ci": (["ci", str(data), str(curves), "--h", "4", "--g", "3", "--B", "499",
                "--seed", "10"], ["ci.csv"]),
        "test": (["test", str(data), str(curves), "--h", "3", "--B", "499", "--both",
                  "--seed", "10"], ["test.csv"]),
    }
    same = {}
    for name, (argv, files) in commands.items():
        outs = []
        for tag, workers in (("w1", 1), ("w8", 8), ("w1b", 1)):
            out = tmp_path / f"{name}_{tag}"
            assert main(argv + ["--workers", str(workers), "--out", str(out)]) == 0
            outs.append(b"".join(open(out / f, "rb").read() for f in files))
        same[name] = outs[0] == outs[1] == outs[2]
    dt = time.perf_counter() - t0
    ok = all(same.values()) and dt < 300
    record_criterion(10, ok, "byte-identical across 1/8 workers and reruns: "
                             + ", ".join(f"{k}={v}" for k, v in same.items()) + f", {dt:.0f}s")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
