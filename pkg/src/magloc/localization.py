"""Multilateration from calibrated ranges.

A linear difference-of-spheres solve seeds a Levenberg-Marquardt refinement
of ``sum w * (|p - anchor| - d)**2``. With a pinned receiver height the
solve is planar. With coplanar anchors in full 3-D the solution has a
mirror image, and the transmitters' coupling sign patterns (octant filter)
choose between the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import FUSED_AXIS, CalibrationSet, fused_magnitude, magnitude_to_distance
from .errors import ConvergenceError, GeometryError, InsufficientAnchorsError
from .field_model import TransmitterPose

LM_LAMBDA0 = 1e-3
LM_MAX_ITER = 100
LM_STEP_TOL = 1e-9
_RANK_TOL = 1e-9
_MIN_RELATIVE_SIGMA = 1e-6


@dataclass(frozen=True)
class DistanceObservation:
    transmitter: int
    distance: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.distance >= 0:
            raise GeometryError(f"distance must be >= 0, got {self.distance}")
        if not self.weight >= 0:
            raise GeometryError(f"weight must be >= 0, got {self.weight}")


@dataclass
class PositionEstimate:
    position: np.ndarray
    residual: float
    method: str = "model"
    n_observations: int = 0
    consistent: bool = True
    candidates: list = field(default_factory=list)


def _affine_rank(points: np.ndarray) -> int:
    centred = points - points.mean(axis=0)
    if len(points) < 2:
        return 0
    s = np.linalg.svd(centred, compute_uv=False)
    scale = max(s[0], 1.0)
    return int(np.sum(s > _RANK_TOL * scale))


def _linear_seed(anchors: np.ndarray, d: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Difference-of-spheres least squares against the closest anchor."""
    ref = int(np.argmin(d))
    others = [i for i in range(len(d)) if i != ref]
    A = 2.0 * (anchors[others] - anchors[ref])
    b = (np.sum(anchors[others] ** 2, axis=1) - np.sum(anchors[ref] ** 2)
         - d[others] ** 2 + d[ref] ** 2)
    sw = np.sqrt(w[others])
    sol, *_ = np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)
    return sol


def _residuals(p, anchors, d):
    diff = p[None, :] - anchors
    rng = np.linalg.norm(diff, axis=1)
    return rng - d, diff, rng


def _levenberg_marquardt(p0, anchors, d, w, free):
    """Refine ``p0`` over the coordinates selected by ``free``."""
    p = p0.copy()
    lam = LM_LAMBDA0
    r, diff, rng = _residuals(p, anchors, d)
    cost = float(np.sum(w * r * r))
    for _ in range(LM_MAX_ITER):
        safe = np.where(rng > 0, rng, 1.0)
        J = np.where(rng[:, None] > 0, diff / safe[:, None], 0.0)[:, free]
        JtW = J.T * w
        H = JtW @ J
        g = JtW @ r
        if not np.any(g):
            return p, True
        A = H + lam * np.diag(np.maximum(np.diag(H), 1e-12))
        try:
            step = -np.linalg.solve(A, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(A, g, rcond=None)[0]
        trial = p.copy()
        trial[free] += step
        r_t, diff_t, rng_t = _residuals(trial, anchors, d)
        cost_t = float(np.sum(w * r_t * r_t))
        small = float(np.linalg.norm(step)) < LM_STEP_TOL
        if cost_t < cost:
            p, r, diff, rng, cost = trial, r_t, diff_t, rng_t, cost_t
            lam /= 10.0
        else:
            lam *= 10.0
        if small:
            return p, True
    return p, False


def trilaterate(anchors, observations, fixed_z: float | None = None,
                initial=None) -> PositionEstimate:
    """Least-squares position from ranges to known anchors.

    Args:
        anchors: (T, 3) anchor positions, indexed by
            ``DistanceObservation.transmitter``.
        observations: Ranges to at least three anchors.
        fixed_z: If given, solve in the horizontal plane at this height.
        initial: Optional starting point that replaces the linear seed.

    Raises:
        GeometryError: too few anchors or a degenerate layout.
        ConvergenceError: refinement did not settle within the iteration
            budget; ``last_iterate`` holds the last estimate.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    obs = list(observations)
    if len(obs) < 3:
        raise GeometryError(f"need at least 3 observations, got {len(obs)}")
    a = anchors[[o.transmitter for o in obs]]
    d = np.array([o.distance for o in obs], dtype=np.float64)
    w = np.array([o.weight for o in obs], dtype=np.float64)
    if not np.any(w > 0):
        raise GeometryError("all observation weights are zero")
    if fixed_z is None:
        if len(obs) < 4 or _affine_rank(a) < 3:
            raise GeometryError("3-D trilateration needs >= 4 non-coplanar anchors")
        free = np.array([True, True, True])
        p0 = _linear_seed(a, d, w) if initial is None else np.asarray(initial, dtype=float)
    else:
        if _affine_rank(a[:, :2]) < 2:
            raise GeometryError("planar trilateration needs >= 3 non-collinear anchors")
        free = np.array([True, True, False])
        if initial is None:
            dz = fixed_z - a[:, 2]
            d_h = np.sqrt(np.maximum(d**2 - dz**2, 0.0))
            xy = _linear_seed(a[:, :2], d_h, w)
            p0 = np.array([xy[0], xy[1], fixed_z])
        else:
            p0 = np.asarray(initial, dtype=float).copy()
            p0[2] = fixed_z
    p, converged = _levenberg_marquardt(p0, a, d, w, free)
    r, _, _ = _residuals(p, a, d)
    est = PositionEstimate(p, float(np.sqrt(np.mean(r**2))), "model", len(obs))
    if not converged:
        raise ConvergenceError("Levenberg-Marquardt refinement did not converge", est)
    return est


def mirror_candidates(anchors, observations) -> list:
    """Both solutions for coplanar anchors, one on each side of their plane."""
    anchors = np.asarray(anchors, dtype=np.float64)
    obs = list(observations)
    a = anchors[[o.transmitter for o in obs]]
    d = np.array([o.distance for o in obs])
    w = np.array([o.weight for o in obs])
    if len(obs) < 3:
        raise GeometryError("need at least 3 observations")
    centroid = a.mean(axis=0)
    _, s, vt = np.linalg.svd(a - centroid)
    if s[1] <= _RANK_TOL * max(s[0], 1.0):
        raise GeometryError("anchors are collinear")
    u, v, normal = vt[0], vt[1], vt[2]
    local = np.column_stack([(a - centroid) @ u, (a - centroid) @ v])
    xy = _linear_seed(local, d, w)
    in_plane = centroid + xy[0] * u + xy[1] * v
    height = float(np.sqrt(max(np.mean(d**2 - np.sum((a - in_plane) ** 2, axis=1)), 1e-6)))
    out = []
    for side in (1.0, -1.0):
        p, _ = _levenberg_marquardt(in_plane + side * height * normal, a, d, w, np.ones(3, bool))
        r, _, _ = _residuals(p, a, d)
        out.append(PositionEstimate(p, float(np.sqrt(np.mean(r**2))), "model", len(obs)))
    return out


def implied_octant_products(signs: np.ndarray) -> np.ndarray:
    """sign(c_i * c_j) for the transmitter-local coordinates, i < j.

    Off-diagonal couplings of an axis-aligned receiver satisfy
    ``sign(C[i, j]) = sign(c_i * c_j)``; both entries of a pair are combined
    and a conflict yields 0 (no information).
    """
    s = np.asarray(signs, dtype=np.int64)
    return np.sign(s + s.T)


def octant_filter(candidates, signs, tx: TransmitterPose, tol: float = 1e-9):
    """Keep candidates whose octant around ``tx`` matches the sign pattern.

    The receiver frame is assumed aligned with the transmitter frame.
    ``signs`` is the 3x3 sign pattern of that transmitter from a
    measurement cycle. Returns ``(kept, consistent)``; when nothing
    survives the input list comes back with ``consistent=False``.
    """
    cands = list(candidates)
    implied = implied_octant_products(signs)
    if not np.any(implied[np.triu_indices(3, 1)]):
        return cands, False
    kept = []
    for c in cands:
        pos = c.position if isinstance(c, PositionEstimate) else np.asarray(c, dtype=float)
        local = tx.local_coordinates(pos)
        sig = np.where(np.abs(local) <= tol, 0, np.sign(local)).astype(int)
        ok = True
        for i in range(3):
            for j in range(i + 1, 3):
                prod = sig[i] * sig[j]
                if prod != 0 and implied[i, j] != 0 and prod != implied[i, j]:
                    ok = False
        if ok:
            kept.append(c)
    if not kept:
        return cands, False
    return kept, True


def _relative_sigma(cal, magnitude: float, floor: float) -> float:
    """Relative range uncertainty: calibration scatter plus floor clamping.

    A coil reading on the floor may hide anything in [0, floor], so a
    magnitude only a few floors strong has a relative error of roughly
    ``floor / magnitude``, shrunk by the exponent ``b`` when mapped to range.
    """
    clamp = floor / (cal.b * magnitude) if magnitude > 0 else 1.0
    return max(math.hypot(cal.residual_rms, clamp), _MIN_RELATIVE_SIGMA)


def fuse_ranges(magnitudes: np.ndarray, cals: CalibrationSet, tx_index: int,
                floor: float, fusion: str = "field"):
    """One range and weight for a transmitter, or ``None`` if unusable.

    ``fusion="field"`` converts the RMS of the three axis magnitudes with the
    transmitter's fused calibration. ``fusion="axis"`` converts each axis
    separately and takes the inverse-variance weighted mean, with variances
    taken from the calibration residuals.
    """
    axis_mags = np.linalg.norm(magnitudes, axis=-1)
    usable = np.max(magnitudes, axis=-1) > floor * (1.0 + 1e-6)
    if fusion == "field":
        cal = cals.get((tx_index, FUSED_AXIS))
        if cal is None or not np.all(usable):
            return None
        m = fused_magnitude(magnitudes)
        d = magnitude_to_distance(cal, m)
        sigma = d * _relative_sigma(cal, m, floor)
        return float(d), 1.0 / sigma**2
    if fusion != "axis":
        raise ValueError(f"unknown fusion mode {fusion!r}")
    ds, ws = [], []
    for i in range(3):
        cal = cals.get((tx_index, i))
        if cal is None or not usable[i]:
            continue
        d = magnitude_to_distance(cal, axis_mags[i])
        if not np.isfinite(d):
            continue
        sigma = d * _relative_sigma(cal, axis_mags[i], floor)
        ds.append(d)
        ws.append(1.0 / sigma**2)
    if not ds:
        return None
    ws = np.asarray(ws)
    return float(np.dot(ws, ds) / ws.sum()), float(ws.sum())


def estimate_position(cycle, cals: CalibrationSet, anchors, floor: float = 0.0,
                      planar_height: float | None = None, transmitters=None,
                      method: str = "model", fusion: str = "field") -> PositionEstimate:
    """Range every transmitter, multilaterate, and resolve mirror solutions.

    Raises:
        InsufficientAnchorsError: fewer than three transmitters are usable.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    obs = []
    for t in range(cycle.n_transmitters):
        fused = fuse_ranges(cycle.magnitudes[t], cals, t, floor, fusion)
        if fused is not None:
            obs.append(DistanceObservation(t, fused[0], fused[1]))
    if len(obs) < 3:
        raise InsufficientAnchorsError(f"only {len(obs)} usable transmitters, need 3")
    wmax = max(o.weight for o in obs)
    obs = [DistanceObservation(o.transmitter, o.distance, o.weight / wmax) for o in obs]
    used = anchors[[o.transmitter for o in obs]]
    if planar_height is not None:
        est = _solve_lenient(lambda: trilaterate(anchors, obs, fixed_z=planar_height))
    elif len(obs) >= 4 and _affine_rank(used) == 3:
        est = _solve_lenient(lambda: trilaterate(anchors, obs))
    else:
        cands = mirror_candidates(anchors, obs)
        consistent = True
        if transmitters is not None:
            for o in obs:
                cands, ok = octant_filter(cands, cycle.signs[o.transmitter], transmitters[o.transmitter])
                consistent = consistent and ok
        est = min(cands, key=lambda c: c.residual)
        est.consistent = consistent
        est.candidates = cands
    est.method = method
    return est


def _solve_lenient(solve):
    try:
        return solve()
    except ConvergenceError as exc:
        est = exc.last_iterate
        est.consistent = False
        return est
