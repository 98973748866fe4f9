"""Functional principal component regression (FPCR) and its building blocks.

All estimators work on centred data. The sample covariance operator of the
centred curves is diagonalised once; the leading eigenfunctions give an
orthonormal coordinate system in which every later quantity (slope estimates,
the residual cross-covariance used for bias correction, scaling factors) is a
short vector. :class:`SpectralModel` holds that representation and the public
functions are thin wrappers around it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError, DimensionError, InvalidOperatorError, TruncationError
from .hilbert import Curve, Grid, LinearOperator, check_same_grid, require_symmetric

__all__ = [
    "FunctionalDataset",
    "EigenSystem",
    "FpcrFit",
    "TuningChoice",
    "SpectralModel",
    "center",
    "sample_covariance",
    "cross_covariance",
    "eigendecompose",
    "truncated_inverse_apply",
    "fpcr_fit",
    "lambda_hat",
    "scaling_s_hat",
    "u_hat",
    "cv_select_k",
    "rule_of_thumb",
    "spectral_model",
]

EPS = np.finfo(np.float64).eps

# Scales below NOISE_FLOOR * reference are treated as exactly zero (noiseless fits).
NOISE_FLOOR = 1e-20


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    """Curves ``X`` (one row per subject) paired with scalar responses ``y``."""

    grid: Grid
    X: np.ndarray
    y: np.ndarray
    x_bar: Curve
    y_bar: float
    centered: bool = False

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.float64, copy=True).reshape(-1)
        if X.ndim != 2 or X.shape[1] != self.grid.size:
            raise DimensionError(
                f"X must be n x {self.grid.size}, got shape {X.shape}"
            )
        if X.shape[0] != y.size:
            raise DimensionError(f"{X.shape[0]} curves but {y.size} responses")
        if X.shape[0] < 2:
            raise DataValidationError("need at least 2 observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataValidationError("data contain non-finite values")
        check_same_grid(self.grid, self.x_bar.grid)
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_bar", float(self.y_bar))

    @classmethod
    def from_arrays(cls, X, y, grid=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionError("X must be a 2-d array")
        if grid is None:
            grid = Grid.uniform(X.shape[1])
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if X.shape[0] < 2 or y.size < 2:
            raise DataValidationError("need at least 2 observations")
        return cls(grid, X, y, Curve(grid, X.mean(axis=0)), float(np.mean(y)), False)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]

    @property
    def curves(self):
        return [Curve(self.grid, row) for row in self.X]

    def with_responses(self, y):
        """Same curves and centring state, new responses."""
        return FunctionalDataset(self.grid, self.X, y, self.x_bar, self.y_bar, self.centered)

    def subset(self, index):
        idx = np.asarray(index)
        return FunctionalDataset.from_arrays(self.X[idx], self.y[idx], self.grid)


def center(dataset):
    """Subtract the sample means; a second call is a no-op with a warning."""
    if dataset.n < 2:
        raise DataValidationError("need at least 2 observations")
    if dataset.centered:
        warnings.warn("dataset is already centred; returning it unchanged", stacklevel=2)
        return dataset
    x_bar = dataset.X.mean(axis=0)
    y_bar = float(dataset.y.mean())
    return FunctionalDataset(
        dataset.grid,
        dataset.X - x_bar,
        dataset.y - y_bar,
        Curve(dataset.grid, x_bar),
        y_bar,
        True,
    )


def _centered(dataset):
    return dataset if dataset.centered else center(dataset)


def sample_covariance(dataset):
    """Empirical covariance operator ``n^-1 sum (X_i - Xbar)^{(x)2}``."""
    ds = _centered(dataset)
    return LinearOperator.symmetric(ds.grid, ds.X.T @ ds.X / ds.n)


def cross_covariance(dataset):
    """Empirical cross-covariance curve ``n^-1 sum (Y_i - Ybar)(X_i - Xbar)``."""
    ds = _centered(dataset)
    return Curve(ds.grid, ds.X.T @ ds.y / ds.n)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Leading eigenpairs of a self-adjoint PSD operator.

    ``eigenfunctions`` is an ``(r, m)`` array of grid values, orthonormal in
    the weighted inner product, with the sign convention that the entry of
    largest magnitude is positive.
    """

    grid: Grid
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    rank_tol: float

    @property
    def rank(self):
        return int(self.eigenvalues.size)

    @property
    def curves(self):
        return [Curve(self.grid, row) for row in self.eigenfunctions]

    def coords(self, values):
        """Coefficients ``<x, phi_j>`` for curve values (1-d or stacked rows)."""
        return np.asarray(values) @ (self.eigenfunctions * self.grid.weights).T

    def check_truncation(self, h, name="h"):
        if not isinstance(h, (int, np.integer)) or h < 1 or h > self.rank:
            raise TruncationError(
                f"truncation {name}={h} is not admissible; the largest admissible "
                f"value is {self.rank}",
                max_admissible=self.rank,
            )


def _fix_signs(vectors):
    """Flip rows so the component of largest |value| is positive."""
    if vectors.size == 0:
        return vectors, np.ones(0)
    pick = np.argmax(np.abs(vectors), axis=1)
    signs = np.where(vectors[np.arange(vectors.shape[0]), pick] < 0, -1.0, 1.0)
    return vectors * signs[:, None], signs


def _rank_tol(gamma1, m, n=None):
    return max(m, n or 0) * EPS * max(float(gamma1), 0.0)


def eigendecompose(op, max_rank=None, n_samples=None):
    """Spectral decomposition of a self-adjoint operator, sorted descending.

    Eigenvalues at or below ``max(m, n) * eps * gamma_1`` are discarded and
    define the numerical rank.
    """
    require_symmetric(op, rtol=1e-8)
    grid = op.grid
    m = grid.size
    M = op.weighted_matrix()
    M = 0.5 * (M + M.T)
    vals, vecs = np.linalg.eigh(M)
    vals = vals[::-1]
    vecs = vecs[:, ::-1]
    top = max(vals[0], 0.0) if vals.size else 0.0
    if vals.size and vals[-1] < -1e-8 * max(abs(vals[0]), abs(vals[-1])):
        raise InvalidOperatorError("operator has materially negative eigenvalues")
    tol = _rank_tol(top, m, n_samples)
    keep = int(np.sum(vals > tol)) if top > 0 else 0
    if max_rank is not None:
        keep = min(keep, int(max_rank))
    phi = vecs[:, :keep].T / np.sqrt(grid.weights)[None, :]
    phi, _ = _fix_signs(phi)
    return EigenSystem(grid, vals[:keep].copy(), phi, tol)


def truncated_inverse_apply(eig, h, x):
    """``sum_{j<=h} gamma_j^{-1} <x, phi_j> phi_j``."""
    eig.check_truncation(h)
    check_same_grid(eig.grid, x.grid)
    c = eig.coords(x.values)[:h] / eig.eigenvalues[:h]
    return Curve(eig.grid, c @ eig.eigenfunctions[:h])


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Centred data expressed in the sample eigenbasis.

    ``scores[i, j] = <X_i - Xbar, phi_j>``; in these coordinates the sample
    covariance is ``diag(eigenvalues)`` and the cross-covariance is ``delta``.
    """

    dataset: FunctionalDataset
    eig: EigenSystem
    scores: np.ndarray
    delta: np.ndarray

    @property
    def n(self):
        return self.dataset.n

    @property
    def y(self):
        return self.dataset.y

    @property
    def rank(self):
        return self.eig.rank

    def coords(self, curve):
        values = curve.values if isinstance(curve, Curve) else np.asarray(curve)
        return self.eig.coords(values)

    def beta_coords(self, h, delta=None):
        """Coordinates of the truncated estimator ``Gamma_h^{-1} delta``."""
        self.eig.check_truncation(h)
        d = self.delta if delta is None else delta
        out = np.zeros(self.rank)
        out[:h] = d[:h] / self.eig.eigenvalues[:h]
        return out

    def residuals(self, h):
        """``(Y_i - Ybar) - <beta_h, X_i - Xbar>``."""
        return self.y - self.scores @ self.beta_coords(h)

    def curve(self, coords):
        return Curve(self.eig.grid, np.asarray(coords) @ self.eig.eigenfunctions)

    def inverse_coords(self, h, x_coords):
        """Coordinates of ``Gamma_h^{-1} x`` given the coordinates of ``x``."""
        self.eig.check_truncation(h)
        out = np.zeros(self.rank)
        out[:h] = np.asarray(x_coords)[:h] / self.eig.eigenvalues[:h]
        return out

    def s_hat(self, h, x_coords, residuals):
        """Scaling ``<Lambda_hat a, a>`` with ``a = Gamma_h^{-1} x``; see :func:`quad_lambda`."""
        return quad_lambda(self.scores, residuals, self.inverse_coords(h, x_coords))

    def s_hom(self, h, x_coords, residuals):
        """Homoscedastic scaling ``sigma^2 * sum_{j<=h} gamma_j^-1 <x, phi_j>^2``."""
        self.eig.check_truncation(h)
        r = residuals - residuals.mean()
        sigma2 = float(r @ r) / self.n
        x = np.asarray(x_coords)[:h]
        return sigma2 * float(np.sum(x * x / self.eig.eigenvalues[:h]))

    def u_coords(self, g):
        """Coordinates of the bias-correction term for centring truncation ``g``."""
        e = self.residuals(g)
        return self.scores.T @ (e - e.mean()) / self.n

    def fit(self, h):
        coords = self.beta_coords(h)
        ds = self.dataset
        return FpcrFit(
            h=h,
            beta_hat=self.curve(coords),
            coeffs=coords[:h].copy(),
            residuals=self.y - self.scores @ coords,
            eig=self.eig,
            delta_hat=Curve(ds.grid, ds.X.T @ ds.y / ds.n),
            dataset=ds,
            scores=self.scores,
        )


def quad_lambda(scores, residuals, a_coords):
    """``n^-1 sum_i (eps_i <X_i, a> - mean)^2`` = ``<Lambda_hat a, a>``."""
    q = residuals * (scores @ a_coords)
    q = q - q.mean()
    return float(q @ q) / q.size


def scale_reference(y, scores, a_coords, x_coords=None, gamma1=None):
    """Typical magnitude of a projection and of ``sqrt(s_hat)``, used to
    recognise noiseless fits.

    ``sqrt(mean(y^2) (mean(<X_i, a>^2) + |x|^2 / gamma_1))``; the second term
    keeps the reference away from zero when ``x`` is (numerically)
    orthogonal to the truncated eigenspace.
    """
    q = scores @ a_coords
    extra = 0.0
    if x_coords is not None and gamma1 is not None and gamma1 > 0:
        x = np.asarray(x_coords, dtype=float)
        extra = float(x @ x) / gamma1
    return math.sqrt(float(y @ y) / y.size * (float(q @ q) / q.size + extra))


def t_stat(n, numerator, s, reference):
    """``sqrt(n / s) * numerator`` with the noiseless convention.

    If ``sqrt(s)`` is negligible next to ``reference`` the statistic is 0 when
    the numerator is negligible as well, and ``nan`` (degenerate) otherwise.
    """
    root = math.sqrt(max(s, 0.0))
    if root > math.sqrt(NOISE_FLOOR) * reference:
        return math.sqrt(n) * numerator / root
    if abs(numerator) <= 1e-8 * reference:
        return 0.0
    return math.nan


def spectral_model(dataset):
    """Diagonalise the sample covariance of ``dataset`` via a thin SVD."""
    ds = _centered(dataset)
    grid = ds.grid
    sw = np.sqrt(grid.weights)
    U, S, Vt = np.linalg.svd(ds.X * sw[None, :], full_matrices=False)
    gamma = S**2 / ds.n
    top = gamma[0] if gamma.size else 0.0
    tol = _rank_tol(top, ds.m, ds.n)
    r = int(np.sum(gamma > tol)) if top > 0 else 0
    phi, signs = _fix_signs(Vt[:r] / sw[None, :])
    scores = U[:, :r] * (S[:r] * signs)[None, :]
    eig = EigenSystem(grid, gamma[:r].copy(), phi, tol)
    delta = scores.T @ ds.y / ds.n
    return SpectralModel(ds, eig, scores, delta)


@dataclass(frozen=True, eq=False)
class FpcrFit:
    """FPCR fit with truncation ``h``; ``coeffs`` are eigenbasis coordinates."""

    h: int
    beta_hat: Curve
    coeffs: np.ndarray
    residuals: np.ndarray
    eig: EigenSystem
    delta_hat: Curve
    dataset: FunctionalDataset
    scores: np.ndarray

    def projection(self, x0, center_x0=True):
        """``<beta_hat, x0 - Xbar>`` (or ``<beta_hat, x0>`` if ``center_x0`` is false)."""
        x = x0 - self.dataset.x_bar if center_x0 else x0
        c = self.eig.coords(x.values)[: self.h]
        return float(c @ self.coeffs)

    def predict(self, x0):
        """Mean response ``Ybar + <beta_hat, x0 - Xbar>``."""
        return self.dataset.y_bar + self.projection(x0)


def fpcr_fit(dataset, h, model=None):
    """FPCR estimator ``Gamma_h^{-1} Delta_hat`` at truncation ``h``."""
    model = model or spectral_model(dataset)
    model.eig.check_truncation(h)
    return model.fit(int(h))


def lambda_hat(dataset, residuals):
    """Covariance operator estimate of ``X eps`` from residuals."""
    ds = _centered(dataset)
    e = np.asarray(residuals, dtype=np.float64)
    if e.shape != (ds.n,):
        raise DimensionError(f"need {ds.n} residuals, got shape {e.shape}")
    Z = ds.X * e[:, None]
    Z = Z - Z.mean(axis=0)
    return LinearOperator.symmetric(ds.grid, Z.T @ Z / ds.n)


def scaling_s_hat(eig, lambda_op, h, x0):
    """``<Lambda a, a>`` with ``a = Gamma_h^{-1} x0``, as a direct quadratic form."""
    a = truncated_inverse_apply(eig, h, x0)
    check_same_grid(lambda_op.grid, a.grid)
    wa = a.grid.weights * a.values
    return max(float(wa @ lambda_op.kernel @ wa), 0.0)


def u_hat(dataset, residuals_g):
    """Cross-covariance between the curves and (centred) truncation-g residuals."""
    ds = _centered(dataset)
    e = np.asarray(residuals_g, dtype=np.float64)
    if e.shape != (ds.n,):
        raise DimensionError(f"need {ds.n} residuals, got shape {e.shape}")
    return Curve(ds.grid, ds.X.T @ (e - e.mean()) / ds.n)


@dataclass(frozen=True)
class TuningChoice:
    """Truncation levels: ``k`` for residuals in scaling, ``h`` for the
    estimator, ``g`` for the bootstrap centring."""

    k: int
    h: int
    g: int

    def __post_init__(self):
        for name in ("k", "h", "g"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise TruncationError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))

    def check_rank(self, rank):
        top = max(self.k, self.h, self.g)
        if top > rank:
            raise TruncationError(
                f"tuning {self} exceeds the numerical rank {rank}", max_admissible=rank
            )


def rule_of_thumb(k, rank=None):
    """``g = k`` and ``h = round(1.113 k)`` clamped to ``[g, rank]``."""
    k = int(k)
    if k < 1:
        raise TruncationError("k must be >= 1")
    if rank is not None and k > rank:
        raise TruncationError(f"k={k} exceeds rank {rank}", max_admissible=rank)
    h = int(math.floor(1.113 * k + 0.5))
    h = max(h, k)
    if rank is not None:
        h = min(h, rank)
    return TuningChoice(k=k, h=h, g=k)


def cv_select_k(dataset, k_candidates, folds=5, repeats=1, seed=0):
    """Repeated K-fold cross-validation of the FPCR truncation level.

    Each repeat shuffles the rows with a seeded generator and cuts them into
    contiguous folds; the score is the mean squared prediction error on the
    held-out pairs. Ties go to the smaller ``k``.
    """
    cands = sorted({int(k) for k in k_candidates})
    if not cands:
        raise ValueError("k_candidates is empty")
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if cands[0] < 1:
        raise TruncationError("candidates must be >= 1")
    if len(cands) == 1:
        return cands[0]
    X, y = dataset.X, dataset.y
    if dataset.centered:
        X = X + dataset.x_bar.values
        y = y + dataset.y_bar
    n = X.shape[0]
    if folds > n:
        raise ValueError(f"folds={folds} exceeds n={n}")
    sse = np.zeros(len(cands))
    rng = np.random.default_rng(seed)
    for _ in range(int(repeats)):
        perm = rng.permutation(n)
        for test in np.array_split(perm, folds):
            train = np.setdiff1d(perm, test, assume_unique=True)
            model = spectral_model(
                FunctionalDataset.from_arrays(X[train], y[train], dataset.grid)
            )
            if cands[-1] > model.rank:
                raise TruncationError(
                    f"candidate k={cands[-1]} exceeds the rank {model.rank} of a training fold",
                    max_admissible=model.rank,
                )
            test_scores = model.coords(X[test] - model.dataset.x_bar.values)
            yt = y[test] - model.dataset.y_bar
            for i, k in enumerate(cands):
                err = yt - test_scores @ model.beta_coords(k)
                sse[i] += float(err @ err)
    return cands[int(np.argmin(sse))]
