"""Bootstrap tests of ``H0: Pi beta = 0`` for the span of a set of target curves.

Directional statistics ``T_l = sqrt(n / s_hat(x_l)) <beta_h, x_l>`` are
combined into an L2-type sum of squares or a max-type statistic. The
bootstrap either centres replicates at ``<beta_g, x_l>`` or rebuilds the
responses from a slope whose target-span projection has been removed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import BootstrapConfig, _check_tuning, _pairs_run, _setup
from .errors import IntervalError
from .flrm import FunctionalDataset, spectral_model, t_stat
from .hilbert import Curve, check_same_grid

__all__ = [
    "TargetSet",
    "TestResult",
    "project_onto_span",
    "observed_statistics",
    "null_enforced_dataset",
    "bootstrap_test",
]

PINV_RTOL = 1e-10
KINDS = ("L2", "max")


@dataclass(frozen=True, eq=False)
class TargetSet:
    """Target curves ``x_1..x_L`` with their Gram matrix and its pseudo-inverse."""

    curves: tuple
    gram: np.ndarray
    gram_pinv: np.ndarray
    rank: int

    @classmethod
    def from_curves(cls, curves, warn=True):
        curves = tuple(curves)
        if not curves:
            raise ValueError("need at least one target curve")
        grid = check_same_grid(*[c.grid for c in curves])
        V = np.stack([c.values for c in curves])
        G = (V * grid.weights) @ V.T
        G = 0.5 * (G + G.T)
        vals, vecs = np.linalg.eigh(G)
        top = max(vals[-1], 0.0)
        keep = vals > PINV_RTOL * top if top > 0 else np.zeros_like(vals, dtype=bool)
        rank = int(np.count_nonzero(keep))
        inv = np.where(keep, 1.0 / np.where(keep, vals, 1.0), 0.0)
        pinv = (vecs * inv) @ vecs.T
        if warn and rank < len(curves):
            warnings.warn(
                f"target curves are linearly dependent: rank {rank} < {len(curves)}",
                RuntimeWarning,
                stacklevel=2,
            )
        G.flags.writeable = False
        pinv.flags.writeable = False
        return cls(curves, G, pinv, rank)

    @property
    def L(self):
        return len(self.curves)

    @property
    def grid(self):
        return self.curves[0].grid

    def centered(self, x_bar):
        """Targets shifted by ``-x_bar``."""
        return TargetSet.from_curves([c - x_bar for c in self.curves], warn=False)


@dataclass(frozen=True, eq=False)
class TestResult:
    """Outcome of :func:`bootstrap_test`; ``p_value = (1 + #{W* >= W}) / (B_eff + 1)``."""

    statistic_kind: str
    w_observed: float
    p_value: float
    B_eff: int
    enforce_null: bool
    per_direction: np.ndarray
    w_star: np.ndarray = field(repr=False)
    degenerate_count: int = 0
    rank: int = 0
    warnings: tuple = ()

    __test__ = False  # not a pytest class


def project_onto_span(target, f):
    """Orthogonal projection of ``f`` onto ``span(target.curves)``."""
    grid = check_same_grid(target.grid, f.grid)
    V = np.stack([c.values for c in target.curves])
    b = V @ (grid.weights * f.values)
    return Curve(grid, (target.gram_pinv @ b) @ V)


def _combine(T, kind):
    T = np.asarray(T, dtype=float)
    if kind == "L2":
        return np.sum(T * T, axis=-1)
    if kind == "max":
        return np.max(np.abs(T), axis=-1)
    raise ValueError(f"statistic kind must be one of {KINDS}")


def _observed(setup):
    T = []
    for p, s, ref in zip(setup.point, setup.s_hat, setup.s_ref):
        t = t_stat(setup.n, float(p), float(s), float(ref))
        # noiseless fit with a non-zero projection: infinitely strong evidence
        T.append(math.copysign(math.inf, p) if math.isnan(t) else t)
    return np.array(T)


def _prepare(dataset, target, center_targets, model):
    model = model or spectral_model(dataset)
    check_same_grid(model.dataset.grid, target.grid)
    tgt = target.centered(model.dataset.x_bar) if center_targets else target
    return model, tgt


def observed_statistics(dataset, target, tuning, center_targets=True, model=None):
    """Directional statistics and their L2 and max combinations.

    Returns
    -------
    T : (L,) array
    w_l2, w_max : float
    """
    model, tgt = _prepare(dataset, target, center_targets, model)
    tuning.check_rank(model.rank)
    setup = _setup(model, tgt.curves, tuning, center_x0=False)
    T = _observed(setup)
    return T, float(_combine(T, "L2")), float(_combine(T, "max"))


def null_enforced_dataset(dataset, target, g, model=None):
    """Responses with the target-span part of ``beta_g`` removed.

    Returns ``(dataset_tilde, beta_tilde_g)`` where
    ``Y~_i = Y_i - <Pi beta_g, X_i>`` and ``beta~_g = beta_g - Pi beta_g``.
    The dataset keeps the centring state of the input.
    """
    model = model or spectral_model(dataset)
    model.eig.check_truncation(g, "g")
    beta_g = model.curve(model.beta_coords(g))
    pb = project_onto_span(target, beta_g)
    w = dataset.grid.weights
    y_new = dataset.y - dataset.X @ (w * pb.values)
    if dataset.centered:
        out = dataset.with_responses(y_new)
    else:
        out = FunctionalDataset.from_arrays(dataset.X, y_new, dataset.grid)
    return out, beta_g - pb


def bootstrap_test(
    dataset,
    target,
    config,
    enforce_null=True,
    statistic="max",
    center_targets=True,
    model=None,
    backend=None,
):
    """Paired-bootstrap test of ``Pi beta = 0``.

    One resample per replicate drives every direction. Without enforcement
    the replicate statistics are centred at ``<beta_g, x_l>``; with
    enforcement the resampled responses are the null-enforced ``Y~`` and the
    centres are zero.

    Parameters
    ----------
    dataset : FunctionalDataset
    target : TargetSet
    config : BootstrapConfig
        ``variant`` must be ``pb_modified`` or ``pb_naive``.
    enforce_null : bool
    statistic : {"max", "L2"}
    center_targets : bool
        Shift targets by ``Xbar`` before use (real-data convention).
    """
    if statistic not in KINDS:
        raise ValueError(f"statistic must be one of {KINDS}")
    if config.variant == "residual":
        raise ValueError("bootstrap tests use the paired bootstrap")
    model, tgt = _prepare(dataset, target, center_targets, model)
    notes = _check_tuning(model, config.tuning)
    if tgt.rank < tgt.L:
        notes += (f"targets have rank {tgt.rank} < {tgt.L}",)
    setup = _setup(model, tgt.curves, config.tuning, center_x0=False)
    T = _observed(setup)
    W = float(_combine(T, statistic))
    u = setup.u if config.variant == "pb_modified" else np.zeros_like(setup.u)
    if enforce_null:
        ds_c = model.dataset
        tilde, _ = null_enforced_dataset(ds_c, tgt, config.tuning.g, model=model)
        y = tilde.y
        centers = np.zeros(tgt.L)
    else:
        y = model.y
        centers = setup.center
    t, _, _, d = _pairs_run(
        setup, y, u, centers, config.B, config.seed, config.studentize,
        config.workers, backend=backend,
    )
    ok = d == 0
    B_eff = int(np.count_nonzero(ok))
    if B_eff == 0:
        raise IntervalError(f"all {config.B} bootstrap replicates are degenerate")
    degen = config.B - B_eff
    if degen > 0.05 * config.B:
        msg = f"WARNING: {degen} of {config.B} bootstrap replicates are degenerate and were dropped"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes += (msg,)
    w_star = _combine(t[ok], statistic)
    p = (1.0 + float(np.count_nonzero(w_star >= W))) / (B_eff + 1.0)
    return TestResult(
        statistic_kind=statistic,
        w_observed=W,
        p_value=p,
        B_eff=B_eff,
        enforce_null=bool(enforce_null),
        per_direction=T,
        w_star=w_star,
        degenerate_count=degen,
        rank=tgt.rank,
        warnings=notes,
    )
