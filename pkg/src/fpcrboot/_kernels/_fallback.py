"""Pure numpy implementation of the bootstrap replicate kernel.

Replicates are processed in blocks: gathered score tensors of shape
``(block, n, r)``, stacked ``matmul`` for the moments and a batched ``eigh``.
"""

import numpy as np

BLOCK = 64

_SQRT_FLOOR = 1e-10  # sqrt of flrm.NOISE_FLOOR
_NUM_FLOOR = 1e-8


def _t_stat(n, num, s, ref):
    root = np.sqrt(np.maximum(s, 0.0))
    ok = root > _SQRT_FLOOR * ref
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.sqrt(n) * num / np.where(ok, root, 1.0)
    zero = np.abs(num) <= _NUM_FLOOR * ref
    return np.where(ok, t, np.where(zero, 0.0, np.nan))


def replicate_batch(
    scores, y, idx, u, targets, centers, h, k, studentize, data_scale, data_ref, tol_factor
):
    """See :func:`fpcrboot._kernels.replicate_batch`."""
    n, r = scores.shape
    B = idx.shape[0]
    L = targets.shape[0]
    t_out = np.empty((B, L))
    proj_out = np.empty((B, L))
    scale_out = np.empty((B, L))
    degen = np.zeros(B, dtype=np.uint8)
    need = max(h, k) if studentize else h
    for start in range(0, B, BLOCK):
        sl = slice(start, min(start + BLOCK, B))
        ix = idx[sl]
        Cs = scores[ix]
        ys = y[ix]
        Cc = Cs - Cs.mean(axis=1, keepdims=True)
        yc = ys - ys.mean(axis=1, keepdims=True)
        CcT = Cc.transpose(0, 2, 1)
        G = CcT @ Cc / n
        d = (CcT @ yc[..., None])[..., 0] / n - u
        lam, V = np.linalg.eigh(G)
        lam = lam[:, ::-1]
        V = V[:, :, ::-1]
        tol = tol_factor * lam[:, 0]
        bad = (lam[:, 0] <= 0) | (lam[:, need - 1] <= tol)
        lam_safe = np.where(lam > tol[:, None], lam, 1.0)

        Vh = V[:, :, :h]
        inv_h = 1.0 / lam_safe[:, :h]
        coef_h = (Vh @ ((Vh.transpose(0, 2, 1) @ d[..., None])[..., 0] * inv_h)[..., None])[..., 0]
        proj = coef_h @ targets.T
        num = proj - centers
        if studentize:
            Vk = V[:, :, :k]
            inv_k = 1.0 / lam_safe[:, :k]
            coef_k = (
                Vk @ ((Vk.transpose(0, 2, 1) @ d[..., None])[..., 0] * inv_k)[..., None]
            )[..., 0]
            resid = ys - (Cs @ coef_k[..., None])[..., 0]
            # a_l = Gamma*_h^{-1} x0_l for every target, shape (block, r, L)
            A = Vh @ ((Vh.transpose(0, 2, 1) @ targets.T) * inv_h[..., None])
            Q = Cs @ A
            P = resid[..., None] * Q
            P = P - P.mean(axis=1, keepdims=True)
            s = np.einsum("bnl,bnl->bl", P, P) / n
            xx = np.sum(targets * targets, axis=1)[None, :] / np.where(lam[:, :1] > 0, lam[:, :1], 1.0)
            ref = np.sqrt(np.mean(ys * ys, axis=1)[:, None] * (np.mean(Q * Q, axis=1) + xx))
        else:
            s = np.broadcast_to(data_scale, num.shape)
            ref = np.broadcast_to(data_ref, num.shape)
        t = _t_stat(n, num, s, ref)
        singular = bad[:, None]
        t_out[sl] = np.where(singular, np.nan, t)
        proj_out[sl] = np.where(singular, np.nan, proj)
        scale_out[sl] = np.where(singular, np.nan, s)
        degen[sl] = bad | np.any(np.isnan(t), axis=1)
    return t_out, proj_out, scale_out, degen
