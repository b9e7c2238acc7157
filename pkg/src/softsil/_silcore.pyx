# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled silhouette core: per-sample soft-min / smooth-max chain in one pass.

Mirrors the pure-numpy `_silhouette_core` in sil_loss.py exactly (same
formulas, same masking of the distance-matrix diagonal); that function remains
the fallback when this extension is not built.
"""

from libc.math cimport exp, fmax, log

import numpy as np

cimport numpy as cnp

cnp.import_array()


def silhouette_core(
    double[:, ::1] D,
    long[::1] y,
    long[::1] sizes,
    double tau_s,
    double tau_m,
    double epsilon,
    double[:, ::1] z=None,
):
    """Return (loss, n_used, V, u, grad_z) for the soft silhouette over D.

    D is the cosine distance matrix (diagonal ignored), y the labels, sizes
    the per-class batch counts. V is the (B, C) foreign-class gradient factor
    dL/db_i * W[i, c] / n_c and u the same-class factor dL/da_i / (n_{y_i}-1);
    rows of samples in singleton classes are zero. When the normalized
    embedding rows z are passed, grad_z = -(grad_D + grad_D^T) z is also
    computed in-kernel (otherwise it is None).
    """
    cdef Py_ssize_t B = D.shape[0]
    cdef Py_ssize_t C = sizes.shape[0]
    cdef cnp.ndarray[double, ndim=2] V_arr = np.zeros((B, C))
    cdef cnp.ndarray[double, ndim=1] u_arr = np.zeros(B)
    cdef double[:, ::1] V = V_arr
    cdef double[::1] u = u_arr
    cdef cnp.ndarray[double, ndim=1] cs_arr = np.zeros(C)
    cdef double[::1] cs = cs_arr
    cdef cnp.ndarray[double, ndim=1] wbuf_arr = np.zeros(C)
    cdef double[::1] wbuf = wbuf_arr

    cdef Py_ssize_t i, j, c, yi
    cdef long n_used = 0
    cdef double loss_sum = 0.0
    cdef double a, b, mn, sum_e, w, pm, ea, eb, den, m, alpha, beta
    cdef double diff, q, gq, dL_da, dL_db, mean_c

    # First pass: per-sample score, accumulated loss numerator.
    # V and u need -1/n_used, so per-sample factors are staged and scaled after.
    for i in range(B):
        yi = y[i]
        if sizes[yi] < 2:
            continue
        n_used += 1

        for c in range(C):
            cs[c] = 0.0
        for j in range(B):
            if j != i:
                cs[y[j]] += D[i, j]

        a = cs[yi] / (sizes[yi] - 1)

        # soft-min over foreign-class means (min-shifted, matches the
        # max-shifted log-sum-exp on negated inputs); the shifted weights are
        # kept in wbuf so the gradient pass below reuses them
        mn = 0.0
        w = 0.0  # marker: w stays 0 until the first foreign class is seen
        for c in range(C):
            if c == yi or sizes[c] == 0:
                continue
            mean_c = cs[c] / sizes[c]
            cs[c] = mean_c
            if w == 0.0 or mean_c < mn:
                mn = mean_c
            w = 1.0
        sum_e = 0.0
        for c in range(C):
            if c == yi or sizes[c] == 0:
                continue
            w = exp((mn - cs[c]) / tau_s)
            wbuf[c] = w
            sum_e += w
        b = mn - tau_s * log(sum_e)

        pm = fmax(a, b)
        ea = exp((a - pm) / tau_m)
        eb = exp((b - pm) / tau_m)
        den = ea + eb
        m = pm + tau_m * log(den)
        alpha = ea / den
        beta = eb / den

        diff = b - a
        q = m + epsilon
        loss_sum += diff / q

        gq = 1.0 / (q * q)  # scaled by -1/n_used afterwards
        dL_da = gq * (-q - diff * alpha)
        dL_db = gq * (q - diff * beta)

        u[i] = dL_da / (sizes[yi] - 1)
        for c in range(C):
            if c == yi or sizes[c] == 0:
                continue
            V[i, c] = dL_db * (wbuf[c] / sum_e) / sizes[c]

    if n_used == 0:
        return 0.0, 0, V_arr, u_arr, None

    cdef double scale = -1.0 / n_used
    for i in range(B):
        u[i] *= scale
        for c in range(C):
            V[i, c] *= scale

    cdef double loss = scale * loss_sum
    if z is None:
        return loss, n_used, V_arr, u_arr, None

    # grad_z = -(M cls_z + rowpick(M^T z) - 2 u z) with M = V + diag(u) onehot,
    # cls_z the per-class sums of z rows, rowpick(S)[i] = S[y[i]].
    cdef Py_ssize_t d = z.shape[1]
    cdef Py_ssize_t k
    cdef cnp.ndarray[double, ndim=2] gz_arr = np.zeros((B, d))
    cdef double[:, ::1] gz = gz_arr
    cdef cnp.ndarray[double, ndim=2] cls_z_arr = np.zeros((C, d))
    cdef double[:, ::1] cls_z = cls_z_arr
    cdef cnp.ndarray[double, ndim=2] S_arr = np.zeros((C, d))
    cdef double[:, ::1] S = S_arr
    cdef double m_ic

    for i in range(B):
        yi = y[i]
        for k in range(d):
            cls_z[yi, k] += z[i, k]
    for i in range(B):
        yi = y[i]
        for c in range(C):
            m_ic = u[i] if c == yi else V[i, c]
            if m_ic != 0.0:
                for k in range(d):
                    S[c, k] += m_ic * z[i, k]
                    gz[i, k] += m_ic * cls_z[c, k]
    for i in range(B):
        yi = y[i]
        for k in range(d):
            gz[i, k] = -(gz[i, k] + S[yi, k] - 2.0 * u[i] * z[i, k])

    return loss, n_used, V_arr, u_arr, gz_arr
