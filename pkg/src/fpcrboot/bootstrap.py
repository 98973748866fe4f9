"""Paired and residual bootstrap for studentised projections.

The heavy lifting happens in the sample eigen coordinates of
:class:`~fpcrboot.flrm.SpectralModel`: every resampled curve is a combination
of the centred sample curves, so a bootstrap covariance operator is an
``r x r`` matrix with ``r`` the sample rank. Replicates are evaluated in
blocks by :mod:`fpcrboot._kernels`.
"""

from __future__ import annotations

import functools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import _kernels
from ._kernels._fallback import _t_stat as _vector_t_stat
from .errors import DomainError, IntervalError
from .flrm import (
    EPS,
    FpcrFit,
    SpectralModel,
    TuningChoice,
    scale_reference,
    spectral_model,
    t_stat,
)
from .hilbert import Curve, check_same_grid
from .seeding import stream

__all__ = [
    "BootstrapConfig",
    "ReplicateStat",
    "BootstrapReport",
    "resample_pairs",
    "pb_replicate",
    "naive_replicate",
    "residual_replicate",
    "confidence_interval",
    "construction_bias",
    "sigma_tau",
    "interval_from_t",
]

VARIANTS = ("pb_modified", "pb_naive", "residual")
STUDENTIZE = ("data_scale", "bootstrap_scale")
INTERVALS = ("symmetrized", "percentile")
CHUNK = 64
DEGENERATE_WARN = 0.05


@dataclass(frozen=True)
class BootstrapConfig:
    """Settings of one bootstrap run.

    Parameters
    ----------
    B : int
        Number of replicates.
    tuning : TuningChoice
        Truncation levels ``(k, h, g)``.
    variant : {"pb_modified", "pb_naive", "residual"}
    studentize : {"data_scale", "bootstrap_scale"}
        Divide by the data scale or recompute it on every resample.
    interval : {"symmetrized", "percentile"}
    level : float
        Nominal coverage.
    seed : int
        Master seed; replicate ``b`` uses ``stream(seed, b)``.
    workers : int
        Thread count for replicate blocks (results do not depend on it).
    """

    B: int
    tuning: TuningChoice
    variant: str = "pb_modified"
    studentize: str = "bootstrap_scale"
    interval: str = "symmetrized"
    level: float = 0.95
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if int(self.B) != self.B or self.B < 1:
            raise ValueError(f"B must be a positive integer, got {self.B}")
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"level must lie in (0, 1), got {self.level}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.studentize not in STUDENTIZE:
            raise ValueError(f"studentize must be one of {STUDENTIZE}")
        if self.interval not in INTERVALS:
            raise ValueError(f"interval must be one of {INTERVALS}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        object.__setattr__(self, "B", int(self.B))


@dataclass(frozen=True)
class ReplicateStat:
    t_star: float
    projection_star: float
    scale_used: float
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class BootstrapReport:
    """Outcome of :func:`confidence_interval`.

    Replicate arrays are ordered by replicate index; degenerate replicates
    hold ``nan`` and are excluded from the interval.
    """

    point: float
    se: float
    interval: tuple
    t_star: np.ndarray
    projection_star: np.ndarray
    scale_used: np.ndarray
    degenerate: np.ndarray
    config: BootstrapConfig
    warnings: tuple = field(default_factory=tuple)

    @property
    def degenerate_count(self):
        return int(np.count_nonzero(self.degenerate))

    @property
    def B_eff(self):
        return int(self.t_star.size - self.degenerate_count)

    @property
    def replicates(self):
        return [
            ReplicateStat(float(t), float(p), float(s), bool(d))
            for t, p, s, d in zip(self.t_star, self.projection_star, self.scale_used, self.degenerate)
        ]


def resample_pairs(n, rng):
    """``n`` indices drawn uniformly with replacement from ``0..n-1``."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.integers(0, n, size=n)


# ---------------------------------------------------------------------------
# shared setup


@dataclass(frozen=True, eq=False)
class _Setup:
    """Data-side quantities for a set of target directions."""

    model: SpectralModel
    tuning: TuningChoice
    x: np.ndarray  # (L, r) target coordinates
    point: np.ndarray  # <beta_h, x>
    center: np.ndarray  # <beta_g, x>
    s_hat: np.ndarray  # heteroscedastic scaling
    s_ref: np.ndarray
    s_hom: np.ndarray  # homoscedastic scaling
    hom_ref: np.ndarray
    u: np.ndarray  # bias-correction coordinates

    @property
    def n(self):
        return self.model.n

    @property
    def tol_factor(self):
        return max(self.model.dataset.m, self.model.n) * EPS


def _check_tuning(model, tuning):
    tuning.check_rank(model.rank)
    if tuning.h < tuning.g:
        msg = (
            f"h={tuning.h} < g={tuning.g}: both the modified and the naive paired "
            "bootstrap are inconsistent in this regime; intervals may be invalid"
        )
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return (msg,)
    return ()


def _target_coords(model, x0s, center_x0):
    rows = []
    for x in x0s:
        check_same_grid(model.dataset.grid, x.grid)
        v = x.values - model.dataset.x_bar.values if center_x0 else x.values
        rows.append(model.eig.coords(v))
    return np.atleast_2d(np.array(rows))


def _setup(model, x0s, tuning, center_x0=True, u=None, y=None):
    k, h, g = tuning.k, tuning.h, tuning.g
    x = _target_coords(model, x0s, center_x0)
    yv = model.y if y is None else y
    delta = model.scores.T @ yv / model.n
    beta_h = model.beta_coords(h, delta)
    beta_g = model.beta_coords(g, delta)
    beta_k = model.beta_coords(k, delta)
    resid_k = yv - model.scores @ beta_k
    s_hat, s_ref, s_hom, hom_ref = [], [], [], []
    for xl in x:
        a = model.inverse_coords(h, xl)
        s_hat.append(model.s_hat(h, xl, resid_k))
        s_hom.append(model.s_hom(h, xl, resid_k))
        ref = scale_reference(yv, model.scores, a, xl, model.eig.eigenvalues[0])
        s_ref.append(ref)
        hom_ref.append(ref)
    if u is None:
        e = yv - model.scores @ beta_g
        u = model.scores.T @ (e - e.mean()) / model.n
    return _Setup(
        model=model,
        tuning=tuning,
        x=x,
        point=x @ beta_h,
        center=x @ beta_g,
        s_hat=np.array(s_hat),
        s_ref=np.array(s_ref),
        s_hom=np.array(s_hom),
        hom_ref=np.array(hom_ref),
        u=np.asarray(u, dtype=np.float64),
    )


def _chunks(B):
    return [(s, min(s + CHUNK, B)) for s in range(0, B, CHUNK)]


@functools.lru_cache(maxsize=64)
def _indices(n, seed, start, stop):
    """Resample indices of replicates ``start..stop-1`` (cached: methods that
    share a seed reuse the same resamples)."""
    out = np.stack([resample_pairs(n, stream(seed, b)) for b in range(start, stop)])
    out.flags.writeable = False
    return out


def _map_chunks(fn, B, workers):
    """Evaluate ``fn(start, stop)`` over fixed replicate blocks, in order."""
    spans = _chunks(B)
    with threadpool_limits(limits=1):
        if workers <= 1 or len(spans) == 1:
            parts = [fn(a, b) for a, b in spans]
        else:
            with ThreadPoolExecutor(max_workers=int(workers)) as pool:
                parts = list(pool.map(lambda ab: fn(*ab), spans))
    return tuple(np.concatenate(p, axis=0) for p in zip(*parts))


def _pairs_run(setup, y, u, centers, B, seed, studentize, workers, backend=None, idx=None):
    """Paired-bootstrap replicate arrays ``(t, proj, scale, degenerate)``."""
    m = setup.model
    tun = setup.tuning

    def run(start, stop):
        ix = idx[start:stop] if idx is not None else _indices(m.n, seed, start, stop)
        return _kernels.replicate_batch(
            m.scores, y, ix, u, setup.x, centers, tun.h, tun.k,
            studentize == "bootstrap_scale", setup.s_hat, setup.s_ref,
            setup.tol_factor, backend=backend,
        )

    return _map_chunks(run, B, workers)


def _residual_run(setup, B, seed, studentize, workers, idx=None):
    """Residual bootstrap with fixed design and homoscedastic scaling."""
    m = setup.model
    tun = setup.tuning
    gam = m.eig.eigenvalues
    beta_g = m.beta_coords(tun.g)
    fitted = m.scores @ beta_g
    e = m.y - fitted
    e = e - e.mean()
    # homoscedastic scale factor sum_{j<=h} x_j^2 / gamma_j
    t_h = np.sum(setup.x[:, : tun.h] ** 2 / gam[: tun.h], axis=1)
    n = m.n

    def run(start, stop):
        ix = idx[start:stop] if idx is not None else _indices(n, seed, start, stop)
        ys = fitted[None, :] + e[ix]
        ys = ys - ys.mean(axis=1, keepdims=True)
        delta = ys @ m.scores / n
        bh = np.zeros_like(delta)
        bh[:, : tun.h] = delta[:, : tun.h] / gam[: tun.h]
        proj = bh @ setup.x.T
        num = proj - setup.center
        if studentize == "bootstrap_scale":
            bk = np.zeros_like(delta)
            bk[:, : tun.k] = delta[:, : tun.k] / gam[: tun.k]
            r = ys - bk @ m.scores.T
            r = r - r.mean(axis=1, keepdims=True)
            sigma2 = np.einsum("bn,bn->b", r, r) / n
            s = sigma2[:, None] * t_h[None, :]
        else:
            s = np.broadcast_to(setup.s_hom, num.shape)
        ref = np.broadcast_to(setup.hom_ref, num.shape)
        t = _vector_t_stat(n, num, s, ref)
        degen = np.any(np.isnan(t), axis=1).astype(np.uint8)
        return t, proj, np.array(s, dtype=float), degen

    with threadpool_limits(limits=1):
        parts = [run(a, b) for a, b in _chunks(B)]
    return tuple(np.concatenate(p, axis=0) for p in zip(*parts))


# ---------------------------------------------------------------------------
# single replicates


def _model_from_fit(fit):
    delta = fit.scores.T @ fit.dataset.y / fit.dataset.n
    return SpectralModel(fit.dataset, fit.eig, fit.scores, delta)


def _one(setup, variant, studentize, rng, indices):
    n = setup.n
    ix = np.asarray(indices if indices is not None else resample_pairs(n, rng))[None, :]
    if variant == "residual":
        t, p, s, d = _residual_run(setup, 1, 0, studentize, 1, idx=ix)
    else:
        u = setup.u if variant == "pb_modified" else np.zeros_like(setup.u)
        t, p, s, d = _pairs_run(setup, setup.model.y, u, setup.center, 1, 0, studentize, 1, idx=ix)
    return ReplicateStat(float(t[0, 0]), float(p[0, 0]), float(s[0, 0]), bool(d[0]))


def _single_setup(beta_g, x0, config, center_x0, u_hat=None):
    model = _model_from_fit(beta_g)
    if beta_g.h != config.tuning.g:
        raise ValueError(f"beta_g was fitted with h={beta_g.h} but tuning has g={config.tuning.g}")
    _check_tuning(model, config.tuning)
    u = None if u_hat is None else model.coords(u_hat)
    return _setup(model, [x0], config.tuning, center_x0, u=u)


def pb_replicate(dataset, x0, u_hat, beta_g, config, rng, center_x0=True, indices=None):
    """One modified paired-bootstrap replicate.

    ``beta_g`` is the fit at truncation ``g`` and ``u_hat`` the matching
    bias-correction curve (see :func:`fpcrboot.flrm.u_hat`). ``indices``
    overrides the resample drawn from ``rng``.
    """
    setup = _single_setup(beta_g, x0, config, center_x0, u_hat)
    return _one(setup, "pb_modified", config.studentize, rng, indices)


def naive_replicate(dataset, x0, beta_g, config, rng, center_x0=True, indices=None):
    """One naive paired-bootstrap replicate (no bias correction)."""
    setup = _single_setup(beta_g, x0, config, center_x0)
    return _one(setup, "pb_naive", config.studentize, rng, indices)


def residual_replicate(dataset, x0, beta_g, config, rng, center_x0=True, indices=None):
    """One residual-bootstrap replicate ``Y* = <beta_g, X_i - Xbar> + e*``."""
    setup = _single_setup(beta_g, x0, config, center_x0)
    return _one(setup, "residual", config.studentize, rng, indices)


# ---------------------------------------------------------------------------
# intervals


def _order_stat(sorted_vals, q):
    B = sorted_vals.size
    idx = min(max(int(math.ceil((B + 1) * q)), 1), B)
    return float(sorted_vals[idx - 1])


def interval_from_t(point, se, t_star, level, kind="symmetrized"):
    """Interval from finite replicate statistics.

    ``symmetrized`` uses the ``ceil((B+1) level)``-th order statistic of
    ``|T*|``; ``percentile`` inverts the lower and upper ``T*`` quantiles.
    """
    t = np.asarray(t_star, dtype=float)
    t = t[np.isfinite(t)]
    if t.size == 0:
        raise IntervalError("no usable bootstrap replicates")
    if kind == "symmetrized":
        q = _order_stat(np.sort(np.abs(t)), level)
        return (point - q * se, point + q * se)
    if kind == "percentile":
        alpha = 1.0 - level
        ts = np.sort(t)
        lo_q = _order_stat(ts, alpha / 2)
        hi_q = _order_stat(ts, 1 - alpha / 2)
        return (point - hi_q * se, point - lo_q * se)
    raise ValueError(f"unknown interval kind {kind!r}")


def _degenerate_notes(degen, B):
    count = int(np.count_nonzero(degen))
    if count == B:
        raise IntervalError(f"all {B} bootstrap replicates are degenerate")
    if count > DEGENERATE_WARN * B:
        msg = f"WARNING: {count} of {B} bootstrap replicates are degenerate and were dropped"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return (msg,)
    return ()


def bootstrap_arrays(setup, config, backend=None):
    """Replicate arrays for ``setup`` under ``config`` (all targets at once)."""
    if config.variant == "residual":
        return _residual_run(setup, config.B, config.seed, config.studentize, config.workers)
    u = setup.u if config.variant == "pb_modified" else np.zeros_like(setup.u)
    return _pairs_run(
        setup, setup.model.y, u, setup.center, config.B, config.seed,
        config.studentize, config.workers, backend=backend,
    )


def confidence_interval(dataset, x0, config, center_x0=True, model=None, backend=None):
    """Bootstrap confidence interval for ``<beta, x0>``.

    Parameters
    ----------
    dataset : FunctionalDataset
    x0 : Curve
        Target regressor; centred by ``Xbar`` unless ``center_x0`` is false.
    config : BootstrapConfig
    model : SpectralModel, optional
        Precomputed eigen representation of ``dataset``.

    Returns
    -------
    BootstrapReport
        ``se`` is ``sqrt(s_hat / n)``; the residual variant reports the
        homoscedastic scale instead.
    """
    model = model or spectral_model(dataset)
    notes = _check_tuning(model, config.tuning)
    setup = _setup(model, [x0], config.tuning, center_x0)
    t, p, s, d = bootstrap_arrays(setup, config, backend=backend)
    notes += _degenerate_notes(d, config.B)
    scale = setup.s_hom[0] if config.variant == "residual" else setup.s_hat[0]
    se = math.sqrt(max(scale, 0.0) / model.n)
    point = float(setup.point[0])
    lo, hi = interval_from_t(point, se, t[:, 0][d == 0], config.level, config.interval)
    return BootstrapReport(
        point=point,
        se=se,
        interval=(float(lo), float(hi)),
        t_star=t[:, 0].copy(),
        projection_star=p[:, 0].copy(),
        scale_used=s[:, 0].copy(),
        degenerate=d.astype(bool),
        config=config,
        warnings=notes,
    )


def clt_interval(dataset, x0, tuning, level=0.95, center_x0=True, model=None):
    """Normal-approximation interval ``point +- z se``."""
    from scipy.stats import norm as _norm

    model = model or spectral_model(dataset)
    tuning.check_rank(model.rank)
    setup = _setup(model, [x0], tuning, center_x0)
    se = math.sqrt(max(setup.s_hat[0], 0.0) / model.n)
    z = float(_norm.ppf(0.5 + level / 2))
    point = float(setup.point[0])
    return point, se, (point - z * se, point + z * se)


# ---------------------------------------------------------------------------
# construction bias


def construction_bias(dataset, x0, tuning, center_x0=True, model=None):
    """Data-only shift ``sqrt(n / s_hat) <Gamma_h^{-1} U_g, x0>`` between the
    naive and the modified bootstrap statistics."""
    model = model or spectral_model(dataset)
    _check_tuning(model, tuning)
    setup = _setup(model, [x0], tuning, center_x0)
    a = model.inverse_coords(tuning.h, setup.x[0])
    num = float(a @ setup.u)
    return t_stat(model.n, num, setup.s_hat[0], setup.s_ref[0])


def sigma_tau(tau, gamma, rho_sq, beta):
    """Limit standard deviation ``sigma(tau)`` of the construction bias.

    ``sigma^2 = (1 - 1/tau) (sum gamma_j beta_j^2 / sum gamma_j rho_j^2 + 1)``.
    """
    if tau < 1:
        raise DomainError(f"tau must be >= 1, got {tau}")
    gamma = np.asarray(gamma, dtype=float)
    rho_sq = np.asarray(rho_sq, dtype=float)
    beta = np.asarray(beta, dtype=float)
    denom = float(np.sum(gamma * rho_sq))
    if denom <= 0:
        raise DomainError("sum gamma_j rho_j^2 must be positive")
    num = float(np.sum(gamma[: beta.size] * beta**2))
    return math.sqrt((1.0 - 1.0 / tau) * (num / denom + 1.0))
