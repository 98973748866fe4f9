"""Discretised Hilbert space: grids, curves and integral operators.

Curves are vectors of function values on a shared :class:`Grid`; the inner
product is the weighted quadrature sum ``sum_i w_i a_i b_i``. An operator with
kernel matrix ``K`` acts as ``(K f)(t_i) = sum_j K[i, j] w_j f(t_j)``, so the
tensor product ``a (x) b`` (``z -> <z, a> b``) has kernel ``outer(b, a)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidOperatorError

__all__ = [
    "Grid",
    "Curve",
    "LinearOperator",
    "inner_product",
    "norm",
    "tensor_product",
    "apply",
    "check_same_grid",
]


def _frozen(arr, dtype=np.float64):
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Grid:
    """Abscissae ``t_1 < ... < t_m`` with positive quadrature weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points)
        wts = _frozen(self.weights)
        if pts.ndim != 1 or wts.shape != pts.shape:
            raise DimensionError("points and weights must be 1-d arrays of equal length")
        if pts.size < 2:
            raise DimensionError("a grid needs at least 2 points")
        if not np.all(np.isfinite(pts)) or np.any(np.diff(pts) <= 0):
            raise DimensionError("grid points must be finite and strictly increasing")
        if not np.all(np.isfinite(wts)) or np.any(wts <= 0):
            raise DimensionError("quadrature weights must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    @classmethod
    def uniform(cls, m, start=0.0, stop=1.0, rule="rectangle"):
        """Equally spaced grid on ``[start, stop]`` including both ends.

        ``rule="rectangle"`` gives every point weight ``(stop - start) / m``;
        ``rule="trapezoid"`` halves the two end weights of a ``(stop - start)/(m - 1)``
        spacing.
        """
        m = int(m)
        if m < 2:
            raise DimensionError("a grid needs at least 2 points")
        pts = np.linspace(start, stop, m)
        length = float(stop - start)
        if rule == "rectangle":
            wts = np.full(m, length / m)
        elif rule == "trapezoid":
            wts = np.full(m, length / (m - 1))
            wts[0] *= 0.5
            wts[-1] *= 0.5
        else:
            raise ValueError(f"unknown quadrature rule {rule!r}")
        return cls(pts, wts)

    @classmethod
    def from_points(cls, points, rule="rectangle"):
        """Grid from user-supplied abscissae.

        Equally spaced points get the uniform rule; irregular spacing always
        falls back to trapezoid weights.
        """
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise DimensionError("a grid needs at least 2 points")
        steps = np.diff(pts)
        if np.any(steps <= 0):
            raise DimensionError("grid points must be strictly increasing")
        if np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            return cls.uniform(pts.size, pts[0], pts[-1], rule=rule)
        wts = np.empty_like(pts)
        wts[0] = steps[0] / 2
        wts[-1] = steps[-1] / 2
        wts[1:-1] = (steps[:-1] + steps[1:]) / 2
        return cls(pts, wts)

    @property
    def size(self):
        return self.points.size

    def same_as(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Grid)
            and other.size == self.size
            and np.array_equal(other.points, self.points)
            and np.array_equal(other.weights, self.weights)
        )

    def curve(self, values):
        return Curve(self, values)

    def zeros(self):
        return Curve(self, np.zeros(self.size))


def check_same_grid(*grids):
    first = grids[0]
    for g in grids[1:]:
        if not first.same_as(g):
            raise DimensionError("objects are defined on different grids")
    return first


@dataclass(frozen=True, eq=False)
class Curve:
    """A function sampled on ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != (self.grid.size,):
            raise DimensionError(
                f"curve has {vals.shape} values but grid has {self.grid.size} points"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite")
        object.__setattr__(self, "values", vals)

    def __add__(self, other):
        check_same_grid(self.grid, other.grid)
        return Curve(self.grid, self.values + other.values)

    def __sub__(self, other):
        check_same_grid(self.grid, other.grid)
        return Curve(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return Curve(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return Curve(self.grid, -self.values)

    def norm(self):
        return norm(self)


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """Integral operator with kernel matrix ``kernel`` on ``grid``."""

    grid: Grid
    kernel: np.ndarray

    def __post_init__(self):
        k = _frozen(self.kernel)
        m = self.grid.size
        if k.shape != (m, m):
            raise DimensionError(f"kernel must be {m}x{m}, got {k.shape}")
        if not np.all(np.isfinite(k)):
            raise ValueError("kernel must be finite")
        object.__setattr__(self, "kernel", k)

    @classmethod
    def symmetric(cls, grid, kernel):
        """Build an operator storing ``(K + K^T) / 2``."""
        k = np.asarray(kernel, dtype=np.float64)
        return cls(grid, 0.5 * (k + k.T))

    def is_symmetric(self, rtol=1e-10):
        k = self.kernel
        scale = np.max(np.abs(k)) if k.size else 0.0
        return bool(np.max(np.abs(k - k.T)) <= rtol * max(scale, np.finfo(float).tiny))

    def weighted_matrix(self):
        """Matrix ``W^{1/2} K W^{1/2}`` representing the operator in an
        orthonormal coordinate system; symmetric iff the operator is self-adjoint."""
        sw = np.sqrt(self.grid.weights)
        return sw[:, None] * self.kernel * sw[None, :]

    def __add__(self, other):
        check_same_grid(self.grid, other.grid)
        return LinearOperator(self.grid, self.kernel + other.kernel)

    def __mul__(self, scalar):
        return LinearOperator(self.grid, self.kernel * float(scalar))

    __rmul__ = __mul__

    def __call__(self, f):
        return apply(self, f)


def inner_product(a, b):
    """Weighted quadrature inner product ``sum_i w_i a_i b_i``."""
    grid = check_same_grid(a.grid, b.grid)
    return float(np.dot(grid.weights * a.values, b.values))


def norm(a):
    return float(np.sqrt(max(inner_product(a, a), 0.0)))


def tensor_product(a, b):
    """Operator ``z -> <z, a> b``."""
    grid = check_same_grid(a.grid, b.grid)
    return LinearOperator(grid, np.outer(b.values, a.values))


def apply(op, f):
    grid = check_same_grid(op.grid, f.grid)
    return Curve(grid, op.kernel @ (grid.weights * f.values))


def require_symmetric(op, rtol=1e-10):
    if not op.is_symmetric(rtol):
        raise InvalidOperatorError("operator kernel is not symmetric within tolerance")
