"""Monte Carlo experiments: interval coverage, construction-bias spread,
test rejection rates and a CLT check, with CSV and SVG output.

Each repetition ``rep`` of scenario ``sid`` draws its data from
``stream(master_seed, sid, rep)`` and its bootstrap resamples from a seed
derived from the same triple, so results do not depend on the worker count
or the order in which repetitions finish.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import stats

from .bootstrap import BootstrapConfig, clt_interval, confidence_interval, construction_bias
from .dgp import DgpSpec, default_k, fourier_basis, gen_dataset
from .errors import ExperimentAborted, FpcrError, IntervalError, TruncationError
from .flrm import TuningChoice, rule_of_thumb, spectral_model, t_stat
from .hypothesis import TargetSet, bootstrap_test
from .seeding import stream

__all__ = [
    "ExperimentPlan",
    "ResultRow",
    "BiasDensity",
    "CltCheck",
    "run_coverage",
    "run_bias_density",
    "run_power",
    "run_clt_check",
    "emit",
    "parse_csv",
    "CSV_COLUMNS",
]

METHODS = ("clt", "rb", "pb", "pb_std", "naive", "naive_std")
_METHOD_CONFIG = {
    "rb": ("residual", "bootstrap_scale"),
    "pb": ("pb_modified", "data_scale"),
    "pb_std": ("pb_modified", "bootstrap_scale"),
    "naive": ("pb_naive", "data_scale"),
    "naive_std": ("pb_naive", "bootstrap_scale"),
}
CSV_COLUMNS = (
    "scenario_id", "n", "a", "b", "nu", "error_mode", "method", "k", "h", "g",
    "reps", "coverage", "mean_width", "rejection_rate", "mc_se", "failed_reps",
)
MAX_FAILED = 0.05
CHUNK_REPS = 4


def _sig(x):
    return None if x is None else float(f"{float(x):.10g}")


@dataclass(frozen=True)
class ExperimentPlan:
    """Grid of simulation scenarios and the procedures to evaluate.

    ``tunings`` entries are ``"rule_of_thumb"``, ``"h+d"`` (``g = k`` and
    ``h = k + d``) or explicit ``(k, h, g)`` tuples; ``k`` defaults to
    :func:`fpcrboot.dgp.default_k` of each scenario.
    """

    n: tuple = (200,)
    a: tuple = (2.5,)
    b: tuple = (5.5,)
    nu: tuple = (5.0,)
    error_mode: tuple = ("heteroscedastic_chisq",)
    methods: tuple = ("pb_std",)
    tunings: tuple = ("rule_of_thumb",)
    reps: int = 500
    B: int = 500
    level: float = 0.95
    master_seed: int = 0
    J: int = 15
    slope_scale: float = 3.0
    grid_size: int = 100
    standardize_xi: bool = True
    spectrum: str = "gaps"
    slope_signs_seed: int = 0
    hypothesis_p: tuple = (None,)
    statistic: str = "max"
    enforce: tuple = (True,)
    ratios: tuple = (1.0, 1.5, 2.0)
    bias_g: int | None = None
    workers: int = 1

    def __post_init__(self):
        if int(self.reps) != self.reps or self.reps < 1:
            raise ValueError(f"reps must be a positive integer, got {self.reps}")
        if int(self.B) != self.B or self.B < 1:
            raise ValueError(f"B must be a positive integer, got {self.B}")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        for t in self.tunings:
            _parse_tuning(t)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for r in self.ratios:
            if r < 1:
                raise ValueError("h/g ratios must be >= 1")

    def scenarios(self):
        """``(scenario_id, DgpSpec)`` pairs in a fixed order."""
        out = []
        grid = itertools.product(self.n, self.a, self.b, self.nu, self.error_mode, self.hypothesis_p)
        for sid, (n, a, b, nu, em, p) in enumerate(grid):
            spec = DgpSpec(
                n=int(n), a=float(a), b=float(b), J=self.J, slope_scale=self.slope_scale,
                nu=float(nu), error_mode=em, grid_size=self.grid_size,
                standardize_xi=self.standardize_xi and not math.isinf(float(nu)),
                slope_signs_seed=self.slope_signs_seed, hypothesis_p=p, spectrum=self.spectrum,
            )
            out.append((sid, spec))
        return out


@dataclass(frozen=True)
class ResultRow:
    """One aggregated line of an experiment (floats kept at 10 significant digits)."""

    scenario_id: str
    n: int
    a: float
    b: float
    nu: float
    error_mode: str
    method: str
    k: int
    h: int
    g: int
    reps: int
    coverage: float | None
    mean_width: float | None
    rejection_rate: float | None
    mc_se: float
    failed_reps: int

    def __post_init__(self):
        for name in ("a", "b", "nu", "coverage", "mean_width", "rejection_rate", "mc_se"):
            object.__setattr__(self, name, _sig(getattr(self, name)))
        for name in ("n", "k", "h", "g", "reps", "failed_reps"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.coverage is not None and not 0 <= self.coverage <= 1:
            raise ValueError("coverage must lie in [0, 1]")


def _parse_tuning(t):
    if isinstance(t, str):
        t = t.strip()
        if t == "rule_of_thumb":
            return ("rot",)
        if t.startswith("h+"):
            return ("offset", int(t[2:]))
        parts = t.replace("/", " ").replace(",", " ").split()
        if len(parts) == 3:
            return ("explicit", *map(int, parts))
        raise ValueError(f"cannot parse tuning {t!r}")
    if len(t) == 3:
        return ("explicit", *map(int, t))
    raise ValueError(f"cannot parse tuning {t!r}")


def resolve_tuning(entry, spec):
    kind = _parse_tuning(entry)
    k = default_k(spec)
    if kind[0] == "rot":
        return rule_of_thumb(k, rank=spec.J)
    if kind[0] == "offset":
        return TuningChoice(k=k, h=min(k + kind[1], spec.J), g=k)
    return TuningChoice(k=kind[1], h=kind[2], g=kind[3])


def boot_seed(master, sid, rep):
    ss = np.random.SeedSequence(int(master), spawn_key=(int(sid), int(rep), 1))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _map_reps(fn, args, reps, workers):
    """``[fn(*args, rep) for rep in range(reps)]`` over a process pool."""
    if workers <= 1 or reps <= CHUNK_REPS:
        return _rep_chunk(fn, args, 0, reps)
    spans = [(s, min(s + CHUNK_REPS, reps)) for s in range(0, reps, CHUNK_REPS)]
    out = []
    with ProcessPoolExecutor(max_workers=int(workers)) as pool:
        futs = [pool.submit(_rep_chunk, fn, args, a, b) for a, b in spans]
        for f in futs:
            out.extend(f.result())
    return out


def _rep_chunk(fn, args, start, stop):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return [fn(*args, rep) for rep in range(start, stop)]


def _row(sid, spec, method, tun, reps, failed, **vals):
    return ResultRow(
        scenario_id=str(sid), n=spec.n, a=spec.a, b=spec.b, nu=spec.nu,
        error_mode=spec.error_mode, method=method, k=tun.k, h=tun.h, g=tun.g,
        reps=reps, failed_reps=failed, **vals,
    )


def _check_failures(rows, reps):
    bad = [r for r in rows if r.failed_reps > MAX_FAILED * reps]
    if bad:
        r = bad[0]
        raise ExperimentAborted(
            f"{r.failed_reps} of {reps} repetitions failed for scenario {r.scenario_id} "
            f"method {r.method}; aborting (limit {MAX_FAILED:.0%})",
            rows=rows,
        )


# ---------------------------------------------------------------------------
# coverage


def _coverage_rep(plan, sid, spec, tunings, rep):
    sample = gen_dataset(spec, stream(plan.master_seed, sid, rep))
    seed = boot_seed(plan.master_seed, sid, rep)
    truth = sample.true_projection
    slack = 1e-8 * (1.0 + abs(truth))
    out = []
    try:
        model = spectral_model(sample.dataset)
    except FpcrError:
        return [None] * (len(tunings) * len(plan.methods))
    for tun in tunings:
        for method in plan.methods:
            try:
                if method == "clt":
                    tun.check_rank(model.rank)
                    _, _, (lo, hi) = clt_interval(
                        sample.dataset, sample.x0, tun, plan.level, center_x0=False, model=model
                    )
                else:
                    variant, stud = _METHOD_CONFIG[method]
                    cfg = BootstrapConfig(
                        B=plan.B, tuning=tun, variant=variant, studentize=stud,
                        level=plan.level, seed=seed,
                    )
                    rep_ = confidence_interval(
                        sample.dataset, sample.x0, cfg, center_x0=False, model=model
                    )
                    lo, hi = rep_.interval
                out.append((lo - slack <= truth <= hi + slack, hi - lo))
            except (IntervalError, TruncationError):
                out.append(None)
    return out


def run_coverage(plan):
    """Coverage and mean width of every method, tuning and scenario."""
    rows = []
    for sid, spec in plan.scenarios():
        tunings = [resolve_tuning(t, spec) for t in plan.tunings]
        res = _map_reps(_coverage_rep, (plan, sid, spec, tunings), plan.reps, plan.workers)
        cells = list(itertools.product(tunings, plan.methods))
        for c, (tun, method) in enumerate(cells):
            vals = [r[c] for r in res if r[c] is not None]
            failed = plan.reps - len(vals)
            if vals:
                cov = float(np.mean([v[0] for v in vals]))
                width = float(np.mean([v[1] for v in vals]))
                se = math.sqrt(cov * (1 - cov) / len(vals))
            else:
                cov, width, se = None, None, 0.0
            rows.append(_row(sid, spec, method, tun, plan.reps, failed,
                             coverage=cov, mean_width=width, rejection_rate=None, mc_se=se))
    _check_failures(rows, plan.reps)
    return rows


# ---------------------------------------------------------------------------
# construction bias


@dataclass(frozen=True, eq=False)
class BiasDensity:
    """Construction-bias samples per ``h/g`` ratio for one scenario."""

    scenario_id: int
    spec: DgpSpec
    g: int
    h: tuple
    ratios: tuple
    samples: np.ndarray  # (len(ratios), reps)
    bins: np.ndarray = field(default=None)
    density: np.ndarray = field(default=None)

    @property
    def sd(self):
        return np.std(self.samples, axis=1, ddof=1) if self.samples.shape[1] > 1 else np.zeros(len(self.ratios))


def _bias_rep(plan, sid, spec, tunings, rep):
    sample = gen_dataset(spec, stream(plan.master_seed, sid, rep))
    model = spectral_model(sample.dataset)
    return [
        construction_bias(sample.dataset, sample.x0, t, center_x0=False, model=model)
        for t in tunings
    ]


def run_bias_density(plan, bins=40):
    """Samples of the construction bias for ``h = round(ratio * g)``."""
    out = []
    for sid, spec in plan.scenarios():
        g = plan.bias_g or default_k(spec)
        hs = tuple(min(int(math.floor(r * g + 0.5)), spec.J) for r in plan.ratios)
        tunings = [TuningChoice(k=g, h=h, g=g) for h in hs]
        res = np.array(_map_reps(_bias_rep, (plan, sid, spec, tunings), plan.reps, plan.workers)).T
        finite = res[np.isfinite(res)]
        span = max(float(np.max(np.abs(finite))) if finite.size else 1.0, 1e-12)
        edges = np.linspace(-span, span, bins + 1)
        dens = np.array([np.histogram(r[np.isfinite(r)], bins=edges, density=True)[0] for r in res])
        out.append(BiasDensity(sid, spec, g, hs, tuple(plan.ratios), res, edges, dens))
    return out


# ---------------------------------------------------------------------------
# power


def _power_rep(plan, sid, spec, tun, target, rep):
    sample = gen_dataset(spec, stream(plan.master_seed, sid, rep))
    seed = boot_seed(plan.master_seed, sid, rep)
    model = spectral_model(sample.dataset)
    out = []
    for enforce in plan.enforce:
        cfg = BootstrapConfig(B=plan.B, tuning=tun, studentize="bootstrap_scale",
                              level=plan.level, seed=seed)
        try:
            res = bootstrap_test(sample.dataset, target, cfg, enforce_null=enforce,
                                 statistic=plan.statistic, center_targets=False, model=model)
            out.append(res.p_value)
        except (IntervalError, TruncationError):
            out.append(None)
    return out


def run_power(plan):
    """Rejection rates of the bootstrap test on the target span of the
    leading six basis functions (``scenario_id`` carries ``p``)."""
    alpha = 1.0 - plan.level
    rows = []
    for sid, spec in plan.scenarios():
        if spec.hypothesis_p is None:
            spec = replace(spec, hypothesis_p=0.0)
        tun = resolve_tuning(plan.tunings[0], spec)
        target = TargetSet.from_curves(fourier_basis(6, spec.grid))
        res = _map_reps(_power_rep, (plan, sid, spec, tun, target), plan.reps, plan.workers)
        for e, enforce in enumerate(plan.enforce):
            ps = [r[e] for r in res if r[e] is not None]
            failed = plan.reps - len(ps)
            rate = float(np.mean([p <= alpha + 1e-12 for p in ps])) if ps else None
            se = math.sqrt(rate * (1 - rate) / len(ps)) if ps else 0.0
            method = f"test_{plan.statistic}_{'enforced' if enforce else 'free'}"
            rows.append(_row(f"{sid}:p={spec.hypothesis_p:g}", spec, method, tun, plan.reps, failed,
                             coverage=None, mean_width=None, rejection_rate=rate, mc_se=se))
    _check_failures(rows, plan.reps)
    return rows


# ---------------------------------------------------------------------------
# CLT


@dataclass(frozen=True, eq=False)
class CltCheck:
    scenario_id: int
    spec: DgpSpec
    tuning: TuningChoice
    t_values: np.ndarray
    ks: float
    p_value: float


def _clt_rep(plan, sid, spec, tun, rep):
    sample = gen_dataset(spec, stream(plan.master_seed, sid, rep))
    model = spectral_model(sample.dataset)
    from .bootstrap import _setup

    st = _setup(model, [sample.x0], tun, center_x0=False)
    num = float(st.point[0]) - sample.true_projection
    return t_stat(model.n, num, float(st.s_hat[0]), float(st.s_ref[0]))


def run_clt_check(plan):
    """Kolmogorov-Smirnov distance of ``T_n`` (true centring) to ``N(0, 1)``."""
    out = []
    for sid, spec in plan.scenarios():
        tun = resolve_tuning(plan.tunings[0], spec)
        t = np.array(_map_reps(_clt_rep, (plan, sid, spec, tun), plan.reps, plan.workers))
        t = t[np.isfinite(t)]
        ks = stats.kstest(t, "norm")
        out.append(CltCheck(sid, spec, tun, t, float(ks.statistic), float(ks.pvalue)))
    return out


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def parse_csv(path_or_text):
    """Rows from a CSV written by :func:`emit`."""
    text = path_or_text
    if os.path.exists(str(path_or_text)):
        with open(path_or_text, newline="") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    types = {f.name: f.type for f in fields(ResultRow)}
    rows = []
    for rec in reader:
        kw = {}
        for c in CSV_COLUMNS:
            v = rec[c]
            t = str(types[c])
            if t == "str":
                kw[c] = v
            elif t == "int":
                kw[c] = int(v)
            else:
                kw[c] = None if v == "" else float(v)
        rows.append(ResultRow(**kw))
    return rows


def _svg(rows, path, title=None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "fpcrboot"
    power = any(r.rejection_rate is not None for r in rows)
    if power:
        panels = [("rejection_rate", "rejection rate")]
    else:
        panels = [("coverage", "coverage"), ("mean_width", "mean width")]
    fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 3.6), squeeze=False)
    groups = {}
    for r in rows:
        scen = r.scenario_id.split(":")[0]
        key = (scen, r.error_mode, r.n, r.method)
        groups.setdefault(key, []).append(r)
    for ax, (col, label) in zip(axes[0], panels):
        for key, rs in sorted(groups.items()):
            if power:
                xs = [float(r.scenario_id.split("p=")[1]) for r in rs]
            else:
                xs = [r.h for r in rs]
            ys = [getattr(r, col) for r in rs]
            pts = sorted((x, y) for x, y in zip(xs, ys) if y is not None)
            if not pts:
                continue
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    label=f"{key[3]} (n={key[2]}, {key[1].split('_')[0]})")
        ax.set_xlabel("p" if power else "h")
        ax.set_ylabel(label)
        if col == "coverage":
            ax.axhline(0.95, color="k", lw=0.8)
        if col == "rejection_rate":
            ax.axhline(0.05, color="k", lw=0.8)
    axes[0][0].legend(fontsize=6)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit(rows, path, format="csv", title=None):
    """Write ``rows`` as CSV (10 significant digits) or an SVG line plot."""
    path = os.fspath(path)
    if format == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(rows_to_csv(rows))
    elif format == "svg_plot":
        _svg(rows, path, title)
    else:
        raise ValueError("format must be 'csv' or 'svg_plot'")
    return path


def bias_to_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario_id", "n", "ratio", "g", "h", "rep", "bias"])
    for res in results:
        for i, ratio in enumerate(res.ratios):
            for rep, v in enumerate(res.samples[i]):
                w.writerow([res.scenario_id, res.spec.n, _fmt(float(ratio)), res.g, res.h[i], rep, _fmt(float(v))])
    return buf.getvalue()


def bias_density_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario_id", "ratio", "bin_lo", "bin_hi", "density", "sd"])
    for res in results:
        sd = res.sd
        for i, ratio in enumerate(res.ratios):
            for j in range(res.density.shape[1]):
                w.writerow([res.scenario_id, _fmt(float(ratio)), _fmt(float(res.bins[j])),
                            _fmt(float(res.bins[j + 1])), _fmt(float(res.density[i, j])), _fmt(float(sd[i]))])
    return buf.getvalue()


def bias_svg(results, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "fpcrboot"
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for res in results:
        mids = 0.5 * (res.bins[1:] + res.bins[:-1])
        for i, ratio in enumerate(res.ratios):
            ax.plot(mids, res.density[i], label=f"n={res.spec.n}, h/g={ratio:g}")
    ax.set_xlabel("construction bias")
    ax.set_ylabel("density")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def clt_to_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario_id", "n", "a", "b", "nu", "error_mode", "k", "h", "g", "reps", "ks", "ks_pvalue"])
    for r in results:
        s = r.spec
        w.writerow([r.scenario_id, s.n, _fmt(s.a), _fmt(s.b), _fmt(s.nu), s.error_mode,
                    r.tuning.k, r.tuning.h, r.tuning.g, r.t_values.size, _fmt(r.ks), _fmt(r.p_value)])
    return buf.getvalue()
