"""Pure-Python/NumPy implementations of the numerical kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them loop for
loop. ``magloc.kernels`` picks whichever is available at import time.
"""

from __future__ import annotations

import numpy as np

# mu_0 / (4 pi), exact for the pre-2019 SI definition used throughout
MU0_OVER_4PI = 1e-7


def dipole_fields(sources, moments, points):
    """Field of K point dipoles evaluated at P points.

    Args:
        sources: (K, 3) dipole positions in metres.
        moments: (K, 3) dipole moments in A*m^2.
        points: (P, 3) evaluation points in metres.

    Returns:
        (P, K, 3) array of field vectors in tesla. Coincident
        source/point pairs produce non-finite values; callers screen them.
    """
    sources = np.asarray(sources, dtype=np.float64)
    moments = np.asarray(moments, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    r = points[:, None, :] - sources[None, :, :]
    dist = np.sqrt(np.einsum("pki,pki->pk", r, r))
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = r / dist[..., None]
        mdotr = np.einsum("pki,ki->pk", rhat, moments)
        field = (3.0 * mdotr[..., None] * rhat - moments[None, :, :]) / dist[..., None] ** 3
    return MU0_OVER_4PI * field


def lasso_cd(X, y, lam, tol, max_iter, w0=None):
    """Cyclic coordinate descent for (1/2n)||y - Xw||^2 + lam*||w||_1.

    ``X`` and ``y`` must already be centred; the intercept is handled by the
    caller. Returns ``(w, sweeps, converged)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    w = np.zeros(p) if w0 is None else np.array(w0, dtype=np.float64)
    resid = y - X @ w
    col_sq = np.einsum("ij,ij->j", X, X) / n
    cols = [np.ascontiguousarray(X[:, j]) for j in range(p)]
    for sweep in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(p):
            cj = col_sq[j]
            if cj == 0.0:
                continue
            wj = w[j]
            rho = float(cols[j] @ resid) / n + cj * wj
            if rho > lam:
                new = (rho - lam) / cj
            elif rho < -lam:
                new = (rho + lam) / cj
            else:
                new = 0.0
            delta = new - wj
            if delta != 0.0:
                resid -= delta * cols[j]
                w[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        if max_delta < tol:
            return w, sweep, True
    return w, max_iter, False
