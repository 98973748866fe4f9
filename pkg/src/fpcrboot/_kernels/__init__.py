"""Hot bootstrap kernel with a compiled backend and a numpy fallback.

The compiled module is used when it imports; set ``FPCRBOOT_PURE_PYTHON=1``
to force the fallback. Both backends share one contract (see
:func:`replicate_batch`) and agree to rounding error.
"""

import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("FPCRBOOT_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None

BACKEND = "cython" if _core is not None else "python"

__all__ = ["replicate_batch", "BACKEND", "available_backends"]


def available_backends():
    return ("cython", "python") if _core is not None else ("python",)


def replicate_batch(
    scores,
    y,
    idx,
    u,
    targets,
    centers,
    h,
    k,
    studentize,
    data_scale=None,
    data_ref=None,
    tol_factor=0.0,
    backend=None,
):
    """Evaluate a block of paired-bootstrap replicates in score coordinates.

    Parameters
    ----------
    scores : (n, r) array
        Centred curves in the sample eigenbasis.
    y : (n,) array
        Centred responses (possibly null-enforced).
    idx : (B, n) int64 array
        Resample indices, one row per replicate.
    u : (r,) array
        Bias-correction term subtracted from the bootstrap cross-covariance
        (zeros for the naive bootstrap).
    targets : (L, r) array
        Target directions in eigen coordinates.
    centers : (L,) array
        Values the bootstrap projections are centred at.
    h, k : int
        Estimator and residual truncation levels.
    studentize : bool
        Recompute the scale from every resample (``True``) or use
        ``data_scale`` / ``data_ref``.
    tol_factor : float
        Bootstrap eigenvalues at or below ``tol_factor * lambda_1`` count as zero.

    Returns
    -------
    t, proj, scale : (B, L) arrays
    degenerate : (B,) uint8 array
    """
    backend = backend or BACKEND
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    targets = np.ascontiguousarray(np.atleast_2d(targets), dtype=np.float64)
    L = targets.shape[0]
    centers = np.ascontiguousarray(np.broadcast_to(centers, (L,)), dtype=np.float64)
    if data_scale is None:
        data_scale = np.zeros(L)
    if data_ref is None:
        data_ref = np.zeros(L)
    data_scale = np.ascontiguousarray(np.broadcast_to(data_scale, (L,)), dtype=np.float64)
    data_ref = np.ascontiguousarray(np.broadcast_to(data_ref, (L,)), dtype=np.float64)
    n, r = scores.shape
    need = max(h, k) if studentize else h
    if not 1 <= need <= r:
        raise ValueError(f"truncation {need} outside [1, {r}]")
    if idx.ndim != 2 or idx.shape[1] != n:
        raise ValueError("idx must have shape (B, n)")
    args = (scores, y, idx, u, targets, centers, int(h), int(k), bool(studentize),
            data_scale, data_ref, float(tol_factor))
    if backend == "cython":
        if _core is None:
            raise RuntimeError("compiled backend is not available")
        return _core.replicate_batch(*args)
    if backend == "python":
        return _fallback.replicate_batch(*args)
    raise ValueError(f"unknown backend {backend!r}")
