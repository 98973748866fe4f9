"""Simulation designs: truncated Karhunen-Loeve regressors on a Fourier basis,
polynomially decaying spectra and slopes, and chi-square type errors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import zeta

from .errors import DomainError
from .flrm import FunctionalDataset
from .hilbert import Curve, Grid, inner_product
from .seeding import stream

__all__ = [
    "DgpSpec",
    "GeneratedSample",
    "fourier_basis",
    "spectrum_from_gaps",
    "gen_slope",
    "gen_regressors",
    "gen_errors",
    "gen_dataset",
    "default_k",
]

ERROR_MODES = ("heteroscedastic_chisq", "homoscedastic_chisq", "none")
SPECTRA = ("gaps", "literal")
N_TARGETS = 6  # number of leading basis functions in the testing design


@dataclass(frozen=True)
class DgpSpec:
    """Parameters of one simulation design.

    ``nu = inf`` means the latent multiplier ``xi`` is identically one
    (Gaussian scores). ``hypothesis_p`` switches the slope to the testing
    family; ``None`` gives the plain polynomial slope.
    """

    n: int
    a: float = 2.5
    b: float = 5.5
    J: int = 15
    slope_scale: float = 3.0
    nu: float = math.inf
    error_mode: str = "heteroscedastic_chisq"
    grid_size: int = 100
    standardize_xi: bool = True
    slope_signs_seed: int = 0
    hypothesis_p: float | None = None
    spectrum: str = "gaps"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError("n must be an integer >= 2")
        if self.a <= 1:
            raise DomainError("a must exceed 1 for a summable spectrum")
        if self.J < 1 or self.J > self.grid_size:
            raise ValueError(f"J must lie in [1, grid_size={self.grid_size}]")
        if self.error_mode not in ERROR_MODES:
            raise ValueError(f"error_mode must be one of {ERROR_MODES}")
        if self.spectrum not in SPECTRA:
            raise ValueError(f"spectrum must be one of {SPECTRA}")
        if self.standardize_xi and not self.nu > 2:
            raise DomainError("nu must exceed 2 when standardize_xi is set")
        if self.hypothesis_p is not None:
            if not 0.0 <= self.hypothesis_p <= 1.0:
                raise ValueError("hypothesis_p must lie in [0, 1]")
            if self.J <= N_TARGETS:
                raise ValueError(f"testing slopes need J > {N_TARGETS}")

    @property
    def grid(self):
        return Grid.uniform(self.grid_size)


@dataclass(frozen=True, eq=False)
class GeneratedSample:
    dataset: FunctionalDataset
    x0: Curve
    beta_true: Curve
    beta_coeffs: np.ndarray
    true_projection: float
    scores: np.ndarray
    x0_scores: np.ndarray


def _basis_values(J, t):
    rows = [np.ones_like(t)]
    freq = 1
    while len(rows) < J:
        rows.append(math.sqrt(2.0) * np.sin(2 * math.pi * freq * t))
        if len(rows) < J:
            rows.append(math.sqrt(2.0) * np.cos(2 * math.pi * freq * t))
        freq += 1
    return np.array(rows)


def fourier_basis(J, grid):
    """``1, sqrt2 sin(2 pi t), sqrt2 cos(2 pi t), sqrt2 sin(4 pi t), ...``."""
    if J < 1:
        raise ValueError("J must be >= 1")
    return [Curve(grid, row) for row in _basis_values(int(J), grid.points)]


def spectrum_from_gaps(a, J, variant="gaps"):
    """Eigenvalues with polynomial gaps.

    ``variant="gaps"`` gives ``gamma_j = 2 sum_{l>=j} l^-a`` so that
    ``gamma_j - gamma_{j+1} = 2 j^-a``; ``"literal"`` gives
    ``gamma_j = sum_{l>=j} l^-a`` (so ``gamma_1 = zeta(a)``, gaps ``j^-a``).
    """
    if a <= 1:
        raise DomainError("a must exceed 1")
    j = np.arange(1, int(J) + 1, dtype=float)
    tail = zeta(float(a), j)
    if variant == "gaps":
        return 2.0 * tail
    if variant == "literal":
        return tail
    raise ValueError(f"unknown spectrum variant {variant!r}")


def _signs(spec):
    return stream(spec.slope_signs_seed, 0).integers(0, 2, size=spec.J) * 2.0 - 1.0


def gen_slope(spec, mode=None):
    """Slope curve and its nominal coefficients in the Fourier basis.

    In the testing modes the null part of the curve is made exactly
    orthogonal, in the grid inner product, to the leading six basis
    functions; its coefficients are reported before that adjustment.
    ``mode`` is ``"simulation"``, ``"h0"`` or ``"h1"``; by default it is
    ``"h1"`` when ``spec.hypothesis_p`` is set and ``"simulation"`` otherwise.
    """
    if mode is None:
        mode = "simulation" if spec.hypothesis_p is None else "h1"
    j = np.arange(1, spec.J + 1, dtype=float)
    mag = spec.slope_scale * j ** (-spec.b)
    W = _signs(spec)
    if mode == "simulation":
        coef = mag * W
    else:
        if spec.J <= N_TARGETS:
            raise ValueError(f"testing slopes need J > {N_TARGETS}")
        h0 = np.where(j > N_TARGETS, mag * W, 0.0)
        if mode == "h0":
            p = 0.0
        elif mode == "h1":
            p = 0.0 if spec.hypothesis_p is None else float(spec.hypothesis_p)
        else:
            raise ValueError(f"unknown slope mode {mode!r}")
        alt = np.where(j <= N_TARGETS, mag * W, 0.0)
        coef = (1 - p) * h0 + p * alt
        basis = _basis_values(spec.J, spec.grid.points)
        # the sampled basis is only approximately orthogonal under the grid
        # weights, so remove the target-span part of the null component exactly
        null = _orthogonal_to_targets(h0 @ basis, basis[:N_TARGETS], spec.grid.weights)
        return Curve(spec.grid, (1 - p) * null + p * (alt @ basis)), coef
    basis = _basis_values(spec.J, spec.grid.points)
    return Curve(spec.grid, coef @ basis), coef


def _orthogonal_to_targets(values, targets, weights):
    G = (targets * weights) @ targets.T
    c = np.linalg.solve(G, targets @ (weights * values))
    return values - c @ targets


def _xi(spec, rng, size):
    if math.isinf(spec.nu):
        return np.ones(size)
    xi = rng.standard_t(spec.nu, size=size)
    if spec.standardize_xi:
        xi = xi * math.sqrt((spec.nu - 2.0) / spec.nu)
    return xi


def gen_regressors(spec, rng, n=None):
    """Curves ``X = sum_j sqrt(gamma_j) xi W_j phi_j`` and their scores ``xi W_j``.

    Returns ``(values (n, m), scores (n, J))``.
    """
    n = spec.n if n is None else int(n)
    gam = spectrum_from_gaps(spec.a, spec.J, spec.spectrum)
    xi = _xi(spec, rng, n)
    W = rng.standard_normal((n, spec.J))
    scores = xi[:, None] * W
    basis = _basis_values(spec.J, spec.grid.points)
    return (scores * np.sqrt(gam)) @ basis, scores


def gen_errors(X, mode, rng, trace=None, grid=None):
    """Centred chi-square errors.

    Heteroscedastic: ``chi2(nu_i) - nu_i`` with ``nu_i = ||X_i||^2 / 2``.
    Homoscedastic: the same with ``nu = trace / 2`` for every observation.
    Fractional degrees of freedom use ``Gamma(nu / 2, scale=2)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if mode == "none":
        return np.zeros(n)
    if mode == "heteroscedastic_chisq":
        w = (grid or Grid.uniform(X.shape[1])).weights
        dof = np.sum(X * X * w, axis=1) / 2.0
    elif mode == "homoscedastic_chisq":
        if trace is None:
            raise ValueError("homoscedastic errors need trace(Gamma)")
        dof = np.full(n, float(trace) / 2.0)
    else:
        raise ValueError(f"error mode must be one of {ERROR_MODES}")
    out = np.zeros(n)
    pos = dof > 0
    out[pos] = rng.gamma(dof[pos] / 2.0, 2.0) - dof[pos]
    return out


def gen_dataset(spec, rng):
    """Draw ``(X_i, Y_i)``, ``i <= n``, and a fresh regressor ``X0``."""
    grid = spec.grid
    beta, coef = gen_slope(spec)
    X, scores = gen_regressors(spec, rng)
    gam = spectrum_from_gaps(spec.a, spec.J, spec.spectrum)
    eps = gen_errors(X, spec.error_mode, rng, trace=float(gam.sum()), grid=grid)
    # responses and truth use the grid inner product the estimators see
    y = X @ (grid.weights * beta.values) + eps
    x0_vals, x0_scores = gen_regressors(spec, rng, n=1)
    x0 = Curve(grid, x0_vals[0])
    true_proj = inner_product(beta, x0)
    return GeneratedSample(
        dataset=FunctionalDataset.from_arrays(X, y, grid),
        x0=x0,
        beta_true=beta,
        beta_coeffs=coef,
        true_projection=true_proj,
        scores=scores,
        x0_scores=x0_scores[0],
    )


def default_k(spec_or_n, a=None, J=None):
    """``2 floor(n^(1 / (2a + 1.1)))`` clamped to ``[1, J]``."""
    if isinstance(spec_or_n, DgpSpec):
        n, a, J = spec_or_n.n, spec_or_n.a, spec_or_n.J
    else:
        n = spec_or_n
        J = 15 if J is None else J
    k = 2 * int(math.floor(n ** (1.0 / (2.0 * a + 1.1)) + 1e-12))
    return int(min(max(k, 1), J))
