"""Command-line interface.

Commands: ``fit``, ``ci``, ``test``, ``simulate`` and ``diagnose-bias``.
Exit codes: 0 success, 2 usage error, 3 invalid data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import harness
from .bootstrap import BootstrapConfig, clt_interval, confidence_interval, construction_bias
from .errors import (
    DataValidationError,
    DimensionError,
    ExperimentAborted,
    FpcrError,
    IntervalError,
    InvalidOperatorError,
    TruncationError,
)
from .flrm import FunctionalDataset, TuningChoice, cv_select_k, rule_of_thumb, spectral_model
from .hilbert import Curve, Grid
from .hypothesis import TargetSet, bootstrap_test
from .seeding import fresh_seed

log = logging.getLogger("fpcrboot")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

VARIANTS = {
    "pb": ("pb_modified", "data_scale"),
    "pb_std": ("pb_modified", "bootstrap_scale"),
    "naive": ("pb_naive", "data_scale"),
    "naive_std": ("pb_naive", "bootstrap_scale"),
    "rb": ("residual", "bootstrap_scale"),
    "clt": (None, None),
}


class UsageError(Exception):
    pass


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    return str(x)


# ---------------------------------------------------------------------------
# input


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_matrix(path, what="data"):
    """Numeric CSV as a 2-d array; an all-text first row is taken as a header."""
    if not os.path.exists(path):
        raise UsageError(f"{what} file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataValidationError(f"{path}: file is empty")
    first = 0
    if not any(_is_number(c) for c in rows[0]):
        first = 1
    body = rows[first:]
    if not body:
        raise DataValidationError(f"{path}: no data rows")
    width = len(body[0])
    out = np.empty((len(body), width))
    for i, row in enumerate(body, start=first + 1):
        if len(row) != width:
            raise DataValidationError(
                f"{path}: row {i} has {len(row)} columns, expected {width}"
            )
        for j, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise DataValidationError(
                    f"{path}: non-numeric value {cell.strip()!r} at row {i}, column {j}"
                ) from None
            if not math.isfinite(v):
                raise DataValidationError(f"{path}: non-finite value at row {i}, column {j}")
            out[i - first - 1, j - 1] = v
    return out


def load_grid(args, m):
    if getattr(args, "grid", None):
        pts = read_matrix(args.grid, "grid").reshape(-1)
        if pts.size != m:
            raise DataValidationError(f"grid file has {pts.size} points but curves have {m} values")
        return Grid.from_points(pts)
    return Grid.uniform(m)


def load_dataset(args):
    M = read_matrix(args.data)
    if args.y:
        y = read_matrix(args.y, "response").reshape(-1)
        X = M
        if y.size != X.shape[0]:
            raise DataValidationError(f"{X.shape[0]} curves but {y.size} responses")
    else:
        if M.shape[1] < 3:
            raise DataValidationError("need at least two curve values and a response column")
        X, y = M[:, :-1], M[:, -1]
    if X.shape[0] < 2:
        raise DataValidationError("need at least 2 observations")
    grid = load_grid(args, X.shape[1])
    return FunctionalDataset.from_arrays(X, y, grid)


def load_curves(path, grid, what):
    M = read_matrix(path, what)
    if M.shape[1] != grid.size:
        raise DataValidationError(f"{path}: curves have {M.shape[1]} values, grid has {grid.size}")
    return [Curve(grid, row) for row in M]


def load_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment. Keys are case-sensitive
    (``b`` is the slope decay, ``B`` the bootstrap size)."""
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


# ---------------------------------------------------------------------------
# shared pieces


def resolve_seed(args):
    if args.seed is None:
        args.seed = fresh_seed()
        print(f"seed={args.seed}")
    return args.seed


def resolve_tuning(args, dataset, model):
    explicit = any(v is not None for v in (args.h, args.g))
    sources = sum([explicit, bool(args.rule_of_thumb), bool(args.cv)])
    if sources > 1:
        raise UsageError("choose one tuning source: --h/--g, --rule-of-thumb or --cv")
    if explicit:
        if args.h is None:
            raise UsageError("--g requires --h")
        g = args.g if args.g is not None else args.h
        k = args.k if args.k is not None else g
        tun = TuningChoice(k=k, h=args.h, g=g)
        tun.check_rank(model.rank)
        return tun
    if args.rule_of_thumb and args.k is None:
        raise UsageError("--rule-of-thumb needs --k (or use --cv)")
    if args.k is not None and not args.cv:
        return rule_of_thumb(args.k, rank=model.rank)
    # cross-validated k, then the rule of thumb
    top = min(15, model.rank, max(1, dataset.n - dataset.n // args.cv_folds - 2))
    k = cv_select_k(dataset, range(1, top + 1), folds=args.cv_folds,
                    repeats=args.cv_repeats, seed=resolve_seed(args))
    print(f"cv_k={k}")
    return rule_of_thumb(k, rank=model.rank)


def out_path(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args):
    ds = load_dataset(args)
    model = spectral_model(ds)
    if args.h is None and not (args.rule_of_thumb or args.cv or args.k):
        raise UsageError("fit needs --h, --rule-of-thumb --k, or --cv")
    tun = resolve_tuning(args, ds, model)
    fit = model.fit(tun.h)
    res = fit.residuals
    print(f"n={ds.n}")
    print(f"m={ds.m}")
    print(f"rank={model.rank}")
    print(f"h={tun.h}")
    print("eigenvalues=" + ",".join(fmt(v) for v in model.eig.eigenvalues[: max(tun.h, 1)]))
    print(f"residual_mean={fmt(float(res.mean()))}")
    print(f"residual_sd={fmt(float(res.std()))}")
    print(f"residual_min={fmt(float(res.min()))}")
    print(f"residual_max={fmt(float(res.max()))}")
    print(f"y_bar={fmt(ds.y_bar if not ds.centered else model.dataset.y_bar)}")
    write_csv(out_path(args, "beta.csv"), ["t", "beta"],
              zip(ds.grid.points, fit.beta_hat.values))
    write_csv(out_path(args, "coefficients.csv"), ["j", "eigenvalue", "coefficient"],
              [(j + 1, model.eig.eigenvalues[j], fit.coeffs[j]) for j in range(tun.h)])
    return EXIT_OK


def _bootstrap_config(args, tun, seed):
    variant, stud = VARIANTS[args.variant]
    return BootstrapConfig(
        B=args.B, tuning=tun, variant=variant or "pb_modified", studentize=stud or "data_scale",
        interval=args.interval, level=args.level, seed=seed, workers=args.workers,
    )


def cmd_ci(args):
    ds = load_dataset(args)
    x0s = load_curves(args.x0, ds.grid, "x0")
    model = spectral_model(ds)
    tun = resolve_tuning(args, ds, model)
    seed = resolve_seed(args)
    center = not args.no_center
    shift = model.dataset.y_bar if args.add_mean else 0.0
    rows = []
    for i, x0 in enumerate(x0s, start=1):
        if args.variant == "clt":
            point, se, (lo, hi) = clt_interval(ds, x0, tun, args.level, center_x0=center, model=model)
            beff, degen = 0, 0
        else:
            cfg = _bootstrap_config(args, tun, seed)
            rep = confidence_interval(ds, x0, cfg, center_x0=center, model=model)
            point, se, (lo, hi) = rep.point, rep.se, rep.interval
            beff, degen = rep.B_eff, rep.degenerate_count
            for w in rep.warnings:
                print(w, file=sys.stderr)
        rows.append((i, args.variant, tun.k, tun.h, tun.g, point + shift, se,
                     lo + shift, hi + shift, beff, degen))
        print(f"target={i} point={fmt(point + shift)} se={fmt(se)} "
              f"lo={fmt(lo + shift)} hi={fmt(hi + shift)}")
    write_csv(out_path(args, "ci.csv"),
              ["target", "variant", "k", "h", "g", "point", "se", "lo", "hi", "B_eff", "degenerate"],
              rows)
    return EXIT_OK


def cmd_test(args):
    ds = load_dataset(args)
    curves = load_curves(args.targets, ds.grid, "targets")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        target = TargetSet.from_curves(curves)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    model = spectral_model(ds)
    tun = resolve_tuning(args, ds, model)
    seed = resolve_seed(args)
    if args.variant in ("rb", "clt"):
        raise UsageError("tests use the paired bootstrap (--variant pb, pb_std, naive or naive_std)")
    cfg = _bootstrap_config(args, tun, seed)
    modes = (True, False) if args.both else (bool(args.enforce_null),)
    rows = []
    for enforce in modes:
        res = bootstrap_test(ds, target, cfg, enforce_null=enforce, statistic=args.statistic,
                             center_targets=not args.no_center, model=model)
        print(f"enforce_null={enforce} statistic={res.statistic_kind} W={fmt(res.w_observed)} "
              f"p_value={fmt(res.p_value)} B_eff={res.B_eff} rank={res.rank}")
        rows.append((int(enforce), res.statistic_kind, tun.k, tun.h, tun.g, res.w_observed,
                     res.p_value, res.B_eff, res.degenerate_count, res.rank,
                     ";".join(fmt(t) for t in res.per_direction)))
    write_csv(out_path(args, "test.csv"),
              ["enforce_null", "statistic", "k", "h", "g", "W", "p_value", "B_eff",
               "degenerate", "rank", "per_direction"], rows)
    return EXIT_OK


def cmd_diagnose_bias(args):
    ds = load_dataset(args)
    x0s = load_curves(args.x0, ds.grid, "x0")
    model = spectral_model(ds)
    tun = resolve_tuning(args, ds, model)
    rows = []
    for i, x0 in enumerate(x0s, start=1):
        b = construction_bias(ds, x0, tun, center_x0=not args.no_center, model=model)
        rows.append((i, tun.k, tun.h, tun.g, b))
        print(f"target={i} bias={fmt(b)}")
    write_csv(out_path(args, "bias.csv"), ["target", "k", "h", "g", "bias"], rows)
    return EXIT_OK


def _split(v):
    return [s.strip() for s in v.replace(";", ",").split(",") if s.strip()]


def _bool(v):
    v = str(v).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"cannot read {v!r} as a boolean")


def plan_from_config(cfg, args):
    """Experiment kind and :class:`~fpcrboot.harness.ExperimentPlan` from a config dict."""
    kw = {}
    kind = cfg.pop("experiment", "coverage")
    if kind not in ("coverage", "bias", "power", "clt"):
        raise UsageError(f"unknown experiment {kind!r}")
    conv = {
        "n": lambda v: tuple(int(x) for x in _split(v)),
        "a": lambda v: tuple(float(x) for x in _split(v)),
        "b": lambda v: tuple(float(x) for x in _split(v)),
        "nu": lambda v: tuple(float(x) for x in _split(v)),
        "error_mode": lambda v: tuple(_split(v)),
        "methods": lambda v: tuple(_split(v)),
        "tunings": lambda v: tuple(s.strip() for s in v.split(";") if s.strip()),
        "reps": int,
        "B": int,
        "level": float,
        "seed": int,
        "J": int,
        "slope_scale": float,
        "grid_size": int,
        "standardize_xi": _bool,
        "spectrum": str,
        "slope_signs_seed": int,
        "p": lambda v: tuple(float(x) for x in _split(v)),
        "statistic": str,
        "enforce": lambda v: (True, False) if v.strip() == "both" else (_bool(v),),
        "ratios": lambda v: tuple(float(x) for x in _split(v)),
        "bias_g": int,
        "workers": int,
    }
    rename = {"seed": "master_seed", "p": "hypothesis_p"}
    for key, val in cfg.items():
        if key not in conv:
            raise UsageError(f"unknown config key {key!r}")
        try:
            kw[rename.get(key, key)] = conv[key](val)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {val!r} ({exc})") from None
    if args.seed is not None:
        kw["master_seed"] = args.seed
    elif "master_seed" not in kw:
        kw["master_seed"] = resolve_seed(args)
    if args.workers_given:
        kw["workers"] = args.workers
    if args.reps is not None:
        kw["reps"] = args.reps
    if args.B_given:
        kw["B"] = args.B
    try:
        plan = harness.ExperimentPlan(**kw)
    except (TypeError, ValueError) as exc:
        raise DataValidationError(f"invalid plan: {exc}") from None
    return kind, plan


def cmd_simulate(args):
    cfg = load_config(args.plan)
    kind, plan = plan_from_config(cfg, args)
    stem = os.path.splitext(os.path.basename(args.plan))[0]
    if kind == "coverage":
        rows = harness.run_coverage(plan)
    elif kind == "power":
        rows = harness.run_power(plan)
    elif kind == "bias":
        res = harness.run_bias_density(plan)
        with open(out_path(args, f"{stem}_samples.csv"), "w", newline="") as fh:
            fh.write(harness.bias_to_csv(res))
        with open(out_path(args, f"{stem}_density.csv"), "w", newline="") as fh:
            fh.write(harness.bias_density_csv(res))
        harness.bias_svg(res, out_path(args, f"{stem}.svg"))
        for r in res:
            print(f"scenario={r.scenario_id} g={r.g} h={','.join(map(str, r.h))} "
                  f"sd={','.join(fmt(float(s)) for s in r.sd)}")
        return EXIT_OK
    else:
        res = harness.run_clt_check(plan)
        with open(out_path(args, f"{stem}.csv"), "w", newline="") as fh:
            fh.write(harness.clt_to_csv(res))
        for r in res:
            print(f"scenario={r.scenario_id} ks={fmt(r.ks)} p={fmt(r.p_value)}")
        return EXIT_OK
    csv_path = harness.emit(rows, out_path(args, f"{stem}.csv"), "csv")
    harness.emit(rows, out_path(args, f"{stem}.svg"), "svg_plot")
    for r in rows:
        val = r.coverage if r.coverage is not None else r.rejection_rate
        print(f"{r.scenario_id} n={r.n} {r.error_mode} {r.method} h={r.h} g={r.g} "
              f"value={fmt(val)} mc_se={fmt(r.mc_se)} failed={r.failed_reps}")
    print(f"wrote {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, data=True):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=".", help="output directory")
    if data:
        p.add_argument("data", help="curves CSV (one row per subject, response last unless --y)")
        p.add_argument("--y", default=None, help="responses file")
        p.add_argument("--grid", default=None, help="grid points file")
        p.add_argument("--h", type=int, default=None)
        p.add_argument("--g", type=int, default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--rule-of-thumb", action="store_true")
        p.add_argument("--cv", action="store_true", help="choose k by repeated cross-validation")
        p.add_argument("--cv-folds", type=int, default=5)
        p.add_argument("--cv-repeats", type=int, default=5)
        p.add_argument("--no-center", action="store_true",
                       help="use target curves as given instead of subtracting the sample mean")


def _boot(p, default_variant="pb_std"):
    p.add_argument("--B", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--variant", choices=sorted(VARIANTS), default=default_variant)
    p.add_argument("--interval", choices=("symmetrized", "percentile"), default="symmetrized")


def build_parser():
    parser = _Parser(prog="fpcrboot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="FPCR fit and slope curve")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ci", help="confidence intervals for projections")
    _common(p)
    p.add_argument("x0", help="target curve(s) CSV")
    _boot(p)
    p.add_argument("--add-mean", action="store_true", help="report Ybar + projection")
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("test", help="bootstrap test of orthogonality to target curves")
    _common(p)
    p.add_argument("targets", help="target curves CSV")
    _boot(p)
    p.add_argument("--statistic", choices=("max", "L2"), default="max")
    p.add_argument("--enforce-null", action="store_true")
    p.add_argument("--both", action="store_true", help="run with and without null enforcement")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="Monte Carlo experiment from a plan file")
    p.add_argument("plan", help="flat key = value plan file")
    _common(p, data=False)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--B", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose-bias", help="construction bias of the naive bootstrap")
    _common(p)
    p.add_argument("x0", help="target curve(s) CSV")
    p.set_defaults(func=cmd_diagnose_bias)
    return parser


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    args.workers_given = "--workers" in argv
    args.B_given = getattr(args, "B", None) is not None and "--B" in argv
    if args.workers < 1 or (getattr(args, "B", None) is not None and args.B < 1):
        parser.error("--workers and --B must be positive")
    if getattr(args, "level", 0.5) is not None and not 0 < getattr(args, "level", 0.5) < 1:
        parser.error("--level must lie in (0, 1)")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fpcrboot: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, DimensionError) as exc:
        print(f"fpcrboot: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TruncationError, IntervalError, InvalidOperatorError, ExperimentAborted) as exc:
        print(f"fpcrboot: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FpcrError as exc:
        print(f"fpcrboot: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
