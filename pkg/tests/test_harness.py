import math

import numpy as np
import pytest

from fpcrboot.errors import ExperimentAborted
from fpcrboot.harness import (
    CSV_COLUMNS,
    ExperimentPlan,
    ResultRow,
    _check_failures,
    boot_seed,
    emit,
    parse_csv,
    resolve_tuning,
    rows_to_csv,
    run_bias_density,
    run_clt_check,
    run_coverage,
    run_power,
)
from fpcrboot.dgp import DgpSpec


def small_plan(**kw):
    base = dict(n=(60,), nu=(5.0,), methods=("clt", "pb_std", "rb", "naive_std"),
                reps=6, B=49, master_seed=3)
    base.update(kw)
    return ExperimentPlan(**base)


class TestPlan:
    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentPlan(reps=0)
        with pytest.raises(ValueError):
            ExperimentPlan(methods=("wild",))
        with pytest.raises(ValueError):
            ExperimentPlan(tunings=("h-2",))
        with pytest.raises(ValueError):
            ExperimentPlan(ratios=(0.5,))

    def test_scenarios_grid(self):
        plan = ExperimentPlan(n=(50, 200), error_mode=("heteroscedastic_chisq", "homoscedastic_chisq"))
        sc = plan.scenarios()
        assert [s for s, _ in sc] == [0, 1, 2, 3]
        assert [(sp.n, sp.error_mode[:3]) for _, sp in sc] == [
            (50, "het"), (50, "hom"), (200, "het"), (200, "hom")
        ]

    def test_tuning_resolution(self):
        spec = DgpSpec(n=200)
        assert resolve_tuning("rule_of_thumb", spec) == resolve_tuning("h+0", spec)
        t = resolve_tuning("h+3", spec)
        assert (t.k, t.h, t.g) == (4, 7, 4)
        t = resolve_tuning((2, 5, 3), spec)
        assert (t.k, t.h, t.g) == (2, 5, 3)
        assert resolve_tuning("h+40", spec).h == 15

    def test_boot_seed_distinct_and_stable(self):
        seeds = {boot_seed(1, s, r) for s in range(3) for r in range(50)}
        assert len(seeds) == 150
        assert boot_seed(1, 2, 3) == boot_seed(1, 2, 3)
        assert 0 <= boot_seed(1, 2, 3) < 2**63


class TestCoverage:
    def test_degenerate_plan(self):
        plan = small_plan(error_mode=("none",), tunings=((15, 15, 15),))
        rows = run_coverage(plan)
        assert len(rows) == 4
        for r in rows:
            assert r.coverage == 1.0 and r.failed_reps == 0
            assert r.mean_width <= 1e-8

    def test_single_rep(self):
        rows = run_coverage(small_plan(reps=1))
        for r in rows:
            assert r.coverage in (0.0, 1.0) and r.mc_se == 0.0

    def test_rows_and_mc_se(self):
        rows = run_coverage(small_plan(reps=10, tunings=("rule_of_thumb", "h+2")))
        assert [r.method for r in rows] == ["clt", "pb_std", "rb", "naive_std"] * 2
        for r in rows:
            ok = r.reps - r.failed_reps
            assert r.mc_se == pytest.approx(math.sqrt(r.coverage * (1 - r.coverage) / ok), rel=1e-9)
            assert r.mean_width > 0

    def test_workers_identical(self):
        plan = small_plan(reps=9)
        a = rows_to_csv(run_coverage(plan))
        b = rows_to_csv(run_coverage(ExperimentPlan(**{**plan.__dict__, "workers": 2})))
        assert a == b

    def test_failure_limit(self):
        row = ResultRow("0", 10, 2.5, 5.5, 5.0, "x", "pb", 1, 1, 1, 100, 0.9, 1.0, None, 0.03, 6)
        with pytest.raises(ExperimentAborted) as info:
            _check_failures([row], 100)
        assert info.value.rows == [row]
        _check_failures([row], 200)


class TestBiasDensity:
    def test_full_rank_g_vanishes(self):
        plan = ExperimentPlan(n=(80,), nu=(math.inf,), reps=5, bias_g=15, ratios=(1.0,))
        (res,) = run_bias_density(plan)
        assert np.max(np.abs(res.samples)) <= 1e-8

    def test_shapes_and_determinism(self):
        plan = ExperimentPlan(n=(100,), nu=(math.inf,), reps=8, bias_g=2, ratios=(1.0, 1.5, 2.0))
        (a,) = run_bias_density(plan, bins=10)
        (b,) = run_bias_density(plan, bins=10)
        assert a.h == (2, 3, 4)
        assert a.samples.shape == (3, 8) and a.density.shape == (3, 10)
        assert np.array_equal(a.samples, b.samples)
        assert np.all(np.abs(a.samples[0]) <= 1e-8)


class TestPower:
    def test_noiseless_null_never_rejects(self):
        plan = ExperimentPlan(n=(60,), nu=(math.inf,), error_mode=("none",), hypothesis_p=(0.0,),
                              tunings=((15, 15, 15),), reps=4, B=19, enforce=(True, False))
        rows = run_power(plan)
        assert [r.rejection_rate for r in rows] == [0.0, 0.0]
        assert [r.method for r in rows] == ["test_max_enforced", "test_max_free"]
        assert rows[0].scenario_id == "0:p=0"

    def test_rows(self):
        plan = ExperimentPlan(n=(50,), nu=(math.inf,), b=(3.5,), slope_scale=50,
                              hypothesis_p=(0.0, 1.0), reps=4, B=49)
        rows = run_power(plan)
        assert [r.scenario_id for r in rows] == ["0:p=0", "1:p=1"]
        assert all(0 <= r.rejection_rate <= 1 for r in rows)


class TestClt:
    def test_single_rep_and_values(self):
        plan = ExperimentPlan(n=(100,), reps=1)
        (res,) = run_clt_check(plan)
        assert res.t_values.size == 1 and 0 < res.ks <= 1

    def test_determinism(self):
        plan = ExperimentPlan(n=(100,), reps=5)
        assert np.array_equal(run_clt_check(plan)[0].t_values, run_clt_check(plan)[0].t_values)


class TestEmit:
    def test_empty(self, tmp_path):
        p = emit([], tmp_path / "e.csv")
        assert open(p).read() == ",".join(CSV_COLUMNS) + "\n"
        assert parse_csv(p) == []

    def test_round_trip_and_bytes(self, tmp_path):
        rows = run_coverage(small_plan(reps=3))
        rows.append(ResultRow("1:p=0.5", 50, 2.5, 3.5, math.inf, "none", "test_max_free",
                              2, 2, 2, 3, None, None, 1 / 3, 0.27216552697590868, 0))
        p1 = emit(rows, tmp_path / "a.csv")
        p2 = emit(parse_csv(p1), tmp_path / "b.csv")
        assert parse_csv(p1) == rows
        assert open(p1, "rb").read() == open(p2, "rb").read()
        assert "0.3333333333," in open(p1).read()

    def test_svg(self, tmp_path):
        rows = run_coverage(small_plan(reps=2, tunings=("h+0", "h+1")))
        a = emit(rows, tmp_path / "a.svg", format="svg_plot")
        b = emit(rows, tmp_path / "b.svg", format="svg_plot")
        text = open(a).read()
        assert text.startswith("<?xml") and "<svg" in text
        assert open(a, "rb").read() == open(b, "rb").read()
        with pytest.raises(ValueError):
            emit(rows, tmp_path / "c.png", format="png")
