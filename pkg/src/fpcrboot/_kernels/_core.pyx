# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled bootstrap replicate kernel.

One pass per replicate: gather the resampled scores, form the centred second
moments with ``dsyrk``, diagonalise with ``dsyev`` and evaluate the truncated
estimators and studentised statistics without temporaries.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, NAN
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dsyrk
from scipy.linalg.cython_lapack cimport dsyev

cnp.import_array()

cdef double SQRT_FLOOR = 1e-10
cdef double NUM_FLOOR = 1e-8


cdef inline double t_stat(int n, double num, double s, double ref) noexcept nogil:
    cdef double root = sqrt(s) if s > 0.0 else 0.0
    if root > SQRT_FLOOR * ref:
        return sqrt(<double>n) * num / root
    if fabs(num) <= NUM_FLOOR * ref:
        return 0.0
    return NAN


def replicate_batch(
    const double[:, ::1] scores,
    const double[::1] y,
    const cnp.int64_t[:, ::1] idx,
    const double[::1] u,
    const double[:, ::1] targets,
    const double[::1] centers,
    int h,
    int k,
    bint studentize,
    const double[::1] data_scale,
    const double[::1] data_ref,
    double tol_factor,
):
    cdef int n = scores.shape[0]
    cdef int r = scores.shape[1]
    cdef Py_ssize_t B = idx.shape[0]
    cdef int L = targets.shape[0]
    cdef int need = (h if h > k else k) if studentize else h

    t_np = np.empty((B, L))
    proj_np = np.empty((B, L))
    scale_np = np.empty((B, L))
    degen_np = np.zeros(B, dtype=np.uint8)
    cdef double[:, ::1] t_out = t_np
    cdef double[:, ::1] proj_out = proj_np
    cdef double[:, ::1] scale_out = scale_np
    cdef cnp.uint8_t[::1] degen = degen_np

    cdef int lwork = 64 * r if r > 1 else 64
    cdef double *Cs = <double *> malloc(n * r * sizeof(double))
    cdef double *Cc = <double *> malloc(n * r * sizeof(double))
    cdef double *ys = <double *> malloc(n * sizeof(double))
    cdef double *resid = <double *> malloc(n * sizeof(double))
    cdef double *q = <double *> malloc(n * sizeof(double))
    cdef double *G = <double *> malloc(r * r * sizeof(double))
    cdef double *w = <double *> malloc(r * sizeof(double))
    cdef double *work = <double *> malloc(lwork * sizeof(double))
    cdef double *mean_c = <double *> malloc(r * sizeof(double))
    cdef double *d = <double *> malloc(r * sizeof(double))
    cdef double *coef_h = <double *> malloc(r * sizeof(double))
    cdef double *coef_k = <double *> malloc(r * sizeof(double))
    cdef double *a = <double *> malloc(r * sizeof(double))
    if (Cs == NULL or Cc == NULL or ys == NULL or resid == NULL or q == NULL or G == NULL
            or w == NULL or work == NULL or mean_c == NULL or d == NULL or coef_h == NULL
            or coef_k == NULL or a == NULL):
        free(Cs); free(Cc); free(ys); free(resid); free(q); free(G); free(w); free(work)
        free(mean_c); free(d); free(coef_h); free(coef_k); free(a)
        raise MemoryError()

    cdef Py_ssize_t b, src
    cdef int i, j, jd, col, l, info
    cdef double my, v, c, tol, inv_n = 1.0 / n, zero = 0.0
    cdef double proj, num, s, ref, pm, qq, yy, p, xx
    cdef char uplo = b'U'
    cdef char trans = b'N'
    cdef char jobz = b'V'
    cdef bint bad

    try:
        with nogil:
            for b in range(B):
                for j in range(r):
                    mean_c[j] = 0.0
                my = 0.0
                for i in range(n):
                    src = idx[b, i]
                    for j in range(r):
                        v = scores[src, j]
                        Cs[i * r + j] = v
                        mean_c[j] += v
                    ys[i] = y[src]
                    my += ys[i]
                for j in range(r):
                    mean_c[j] *= inv_n
                my *= inv_n
                for i in range(n):
                    for j in range(r):
                        Cc[i * r + j] = Cs[i * r + j] - mean_c[j]
                # Cc in row-major n x r is column-major r x n, so G = Cc^T Cc / n.
                dsyrk(&uplo, &trans, &r, &n, &inv_n, Cc, &r, &zero, G, &r)
                for j in range(r):
                    d[j] = 0.0
                for i in range(n):
                    v = ys[i] - my
                    for j in range(r):
                        d[j] += Cc[i * r + j] * v
                for j in range(r):
                    d[j] = d[j] * inv_n - u[j]

                dsyev(&jobz, &uplo, &r, G, &r, w, work, &lwork, &info)
                tol = tol_factor * w[r - 1]
                if info != 0 or w[r - 1] <= 0.0 or w[r - need] <= tol:
                    degen[b] = 1
                    for l in range(L):
                        t_out[b, l] = NAN
                        proj_out[b, l] = NAN
                        scale_out[b, l] = NAN
                    continue

                # eigenvector of the jd-th largest eigenvalue sits in column r-1-jd
                for j in range(r):
                    coef_h[j] = 0.0
                    coef_k[j] = 0.0
                for jd in range(need):
                    col = r - 1 - jd
                    c = 0.0
                    for j in range(r):
                        c += G[col * r + j] * d[j]
                    c /= w[col]
                    if jd < h:
                        for j in range(r):
                            coef_h[j] += c * G[col * r + j]
                    if studentize and jd < k:
                        for j in range(r):
                            coef_k[j] += c * G[col * r + j]

                if studentize:
                    yy = 0.0
                    for i in range(n):
                        v = ys[i]
                        yy += v * v
                        for j in range(r):
                            v -= Cs[i * r + j] * coef_k[j]
                        resid[i] = v
                    yy *= inv_n

                bad = False
                for l in range(L):
                    proj = 0.0
                    for j in range(r):
                        proj += coef_h[j] * targets[l, j]
                    num = proj - centers[l]
                    if studentize:
                        for j in range(r):
                            a[j] = 0.0
                        for jd in range(h):
                            col = r - 1 - jd
                            c = 0.0
                            for j in range(r):
                                c += G[col * r + j] * targets[l, j]
                            c /= w[col]
                            for j in range(r):
                                a[j] += c * G[col * r + j]
                        pm = 0.0
                        qq = 0.0
                        xx = 0.0
                        for j in range(r):
                            xx += targets[l, j] * targets[l, j]
                        for i in range(n):
                            v = 0.0
                            for j in range(r):
                                v += Cs[i * r + j] * a[j]
                            qq += v * v
                            q[i] = resid[i] * v
                            pm += q[i]
                        pm *= inv_n
                        s = 0.0
                        for i in range(n):
                            p = q[i] - pm
                            s += p * p
                        s *= inv_n
                        ref = sqrt(yy * (qq * inv_n + xx / w[r - 1]))
                    else:
                        s = data_scale[l]
                        ref = data_ref[l]
                    t_out[b, l] = t_stat(n, num, s, ref)
                    proj_out[b, l] = proj
                    scale_out[b, l] = s
                    if t_out[b, l] != t_out[b, l]:
                        bad = True
                if bad:
                    degen[b] = 1
    finally:
        free(Cs); free(Cc); free(ys); free(resid); free(q); free(G); free(w); free(work)
        free(mean_c); free(d); free(coef_h); free(coef_k); free(a)

    return t_np, proj_np, scale_np, degen_np
