# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of ``magloc._pykernels``. Same signatures, same results."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

cdef double MU0_OVER_4PI = 1e-7


def dipole_fields(sources, moments, points):
    cdef double[:, ::1] src = np.ascontiguousarray(sources, dtype=np.float64)
    cdef double[:, ::1] mom = np.ascontiguousarray(moments, dtype=np.float64)
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t P = pts.shape[0], K = src.shape[0]
    out_arr = np.empty((P, K, 3), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t p, k
    cdef double rx, ry, rz, d, inv_d, inv_d3, hx, hy, hz, mdotr
    for p in range(P):
        for k in range(K):
            rx = pts[p, 0] - src[k, 0]
            ry = pts[p, 1] - src[k, 1]
            rz = pts[p, 2] - src[k, 2]
            d = sqrt(rx * rx + ry * ry + rz * rz)
            inv_d = 1.0 / d
            inv_d3 = MU0_OVER_4PI * inv_d * inv_d * inv_d
            hx = rx * inv_d
            hy = ry * inv_d
            hz = rz * inv_d
            mdotr = hx * mom[k, 0] + hy * mom[k, 1] + hz * mom[k, 2]
            out[p, k, 0] = (3.0 * mdotr * hx - mom[k, 0]) * inv_d3
            out[p, k, 1] = (3.0 * mdotr * hy - mom[k, 1]) * inv_d3
            out[p, k, 2] = (3.0 * mdotr * hz - mom[k, 2]) * inv_d3
    return out_arr


def lasso_cd(X, y, double lam, double tol, int max_iter, w0=None):
    cdef double[::1, :] Xf = np.asfortranarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xf.shape[0], p = Xf.shape[1]
    w_arr = np.zeros(p) if w0 is None else np.array(w0, dtype=np.float64)
    cdef double[::1] w = w_arr
    resid_arr = np.asarray(y, dtype=np.float64) - np.asarray(X, dtype=np.float64) @ w_arr
    cdef double[::1] resid = resid_arr
    col_sq_arr = np.einsum("ij,ij->j", Xf, Xf) / n
    cdef double[::1] col_sq = col_sq_arr
    cdef Py_ssize_t i, j
    cdef int sweep
    cdef double cj, wj, rho, new, delta, max_delta, dot
    cdef double dn = <double>n
    for sweep in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(p):
            cj = col_sq[j]
            if cj == 0.0:
                continue
            wj = w[j]
            dot = 0.0
            for i in range(n):
                dot += Xf[i, j] * resid[i]
            rho = dot / dn + cj * wj
            if rho > lam:
                new = (rho - lam) / cj
            elif rho < -lam:
                new = (rho + lam) / cj
            else:
                new = 0.0
            delta = new - wj
            if delta != 0.0:
                for i in range(n):
                    resid[i] -= delta * Xf[i, j]
                w[j] = new
                if fabs(delta) > max_delta:
                    max_delta = fabs(delta)
        if max_delta < tol:
            return w_arr, sweep, True
    return w_arr, max_iter, False
