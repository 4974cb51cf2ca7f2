"""Magnitude-to-distance calibration, ``d = (a * |B|) ** (sign / b)``.

``b`` is always reported positive. ``sign`` records which way distance moves
with magnitude: ``+1`` is the literal power law (distance grows with the
operand), ``-1`` is the physical regime where the field decays with
distance. Fitting picks the sign from the data, so a pure inverse-cube field
yields ``b = 3, sign = -1`` and samples generated by the literal law yield
``sign = +1``. Scaling all magnitudes by ``c`` changes ``a`` to ``a / c``
in either regime.

The fit is ordinary least squares of ``ln d`` on ``ln |B|``.

Besides one entry per transmitter axis, a calibration set may hold a
``FUSED_AXIS`` entry per transmitter, fitted to the RMS of the three axis
magnitudes; see ``magloc.localization.fuse_ranges``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .environment import AXIS_NAMES, Dataset, Environment, generate_dataset
from .errors import DomainError, InsufficientDataError, SchemaError

FUSED_AXIS = 3
AXIS_LABELS = AXIS_NAMES + ("xyz",)


@dataclass(frozen=True)
class CalibrationSample:
    magnitude: float
    true_distance: float


@dataclass(frozen=True)
class AxisCalibration:
    a: float
    b: float
    tx_index: int = 0
    axis_index: int = 0
    sign: int = 1
    residual_rms: float = 0.0
    n_samples: int = 0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError(f"calibration needs a > 0 and b > 0, got a={self.a}, b={self.b}")
        if self.sign not in (-1, 1):
            raise DomainError(f"sign must be +1 or -1, got {self.sign}")

    @property
    def axis_label(self) -> str:
        return AXIS_LABELS[self.axis_index]


def _as_arrays(samples):
    if isinstance(samples, tuple) and len(samples) == 2 and not isinstance(samples[0], CalibrationSample):
        mags, dists = samples
    else:
        mags = [s.magnitude for s in samples]
        dists = [s.true_distance for s in samples]
    return np.asarray(mags, dtype=np.float64), np.asarray(dists, dtype=np.float64)


def fit_axis(samples, tx_index: int = 0, axis_index: int = 0) -> AxisCalibration:
    """Fit (a, b) from magnitude/distance pairs.

    ``samples`` is a sequence of :class:`CalibrationSample` or a
    ``(magnitudes, distances)`` tuple of arrays.
    """
    mags, dists = _as_arrays(samples)
    if mags.shape != dists.shape:
        raise DomainError("magnitudes and distances differ in length")
    if mags.size and (np.any(~(mags > 0)) or np.any(~(dists > 0))):
        raise DomainError("calibration samples must have positive magnitude and distance")
    if np.unique(mags).size < 2:
        raise InsufficientDataError(
            f"axis ({tx_index}, {axis_index}) needs at least 2 distinct magnitudes, got {np.unique(mags).size}"
        )
    x = np.log(mags)
    y = np.log(dists)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    if slope == 0.0 or not math.isfinite(slope):
        raise DomainError("distance does not vary with magnitude; cannot invert")
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    return AxisCalibration(
        a=float(math.exp(intercept / slope)),
        b=float(1.0 / abs(slope)),
        tx_index=tx_index,
        axis_index=axis_index,
        sign=1 if slope > 0 else -1,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        n_samples=int(mags.size),
    )


def magnitude_to_distance(cal: AxisCalibration, magnitude):
    """Apply the calibrated transfer function; scalars or arrays."""
    m = np.asarray(magnitude, dtype=np.float64)
    if np.any(~(m > 0)):
        raise DomainError("magnitude must be > 0")
    d = np.power(cal.a * m, cal.sign / cal.b)
    return float(d) if d.ndim == 0 else d


class CalibrationSet(dict):
    """Mapping ``(tx_index, axis_index) -> AxisCalibration``."""

    def for_transmitter(self, tx_index: int) -> list:
        return [self[k] for k in sorted(self) if k[0] == tx_index]

    def to_dict(self, meta: dict | None = None) -> dict:
        entries = []
        for key in sorted(self):
            c = asdict(self[key])
            c["axis"] = self[key].axis_label
            entries.append(c)
        out = {"format": "magloc-calibration/1", "calibrations": entries}
        if meta:
            out["meta"] = meta
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationSet":
        if data.get("format") != "magloc-calibration/1":
            raise SchemaError(f"not a calibration file (format={data.get('format')!r})")
        out = cls()
        for i, entry in enumerate(data.get("calibrations", [])):
            try:
                cal = AxisCalibration(
                    a=float(entry["a"]), b=float(entry["b"]),
                    tx_index=int(entry["tx_index"]), axis_index=int(entry["axis_index"]),
                    sign=int(entry["sign"]), residual_rms=float(entry.get("residual_rms", 0.0)),
                    n_samples=int(entry.get("n_samples", 0)),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"calibration entry {i}: {exc}") from exc
            out[(cal.tx_index, cal.axis_index)] = cal
        return out

    def save(self, path, meta: dict | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(meta), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CalibrationSet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def usable_mask(magnitudes: np.ndarray, floor: float) -> np.ndarray:
    """True where an axis has at least one receiver reading above the floor."""
    return np.max(magnitudes, axis=-1) > floor * (1.0 + 1e-6)


def fused_magnitude(magnitudes: np.ndarray) -> np.ndarray:
    """RMS over the three axes of each transmitter's receiver-row norms."""
    axis_mags = np.linalg.norm(magnitudes, axis=-1)
    return np.sqrt(np.mean(axis_mags**2, axis=-1))


def calibrate_dataset(dataset: Dataset, indices=None, include_fused: bool = True,
                      strict: bool = True) -> CalibrationSet:
    """Fit every transmitter axis from a dataset with ground truth.

    Axes whose readings sit on the quantisation floor are skipped. With
    ``strict`` an axis left with too few samples raises; otherwise it is
    omitted from the result.
    """
    if not dataset.has_truth:
        raise InsufficientDataError("calibration requires ground-truth positions")
    if dataset.anchors is None:
        raise SchemaError("dataset has no transmitter anchors")
    idx = np.arange(len(dataset)) if indices is None else np.asarray(indices, dtype=int)
    cycles = [dataset.cycles[i] for i in idx]
    if not cycles:
        raise InsufficientDataError("no samples selected for calibration")
    mags = np.stack([c.magnitudes for c in cycles])  # (n, T, 3, 3)
    pos = np.stack([c.true_position for c in cycles])
    anchors = np.asarray(dataset.anchors)
    dist = np.linalg.norm(pos[:, None, :] - anchors[None, :, :], axis=2)  # (n, T)
    usable = usable_mask(mags, dataset.floor)  # (n, T, 3)
    axis_mags = np.linalg.norm(mags, axis=3)
    out = CalibrationSet()
    for t in range(anchors.shape[0]):
        for i in range(3):
            keep = usable[:, t, i]
            try:
                out[(t, i)] = fit_axis((axis_mags[keep, t, i], dist[keep, t]), t, i)
            except InsufficientDataError:
                if strict:
                    raise
        if include_fused:
            keep = np.all(usable[:, t, :], axis=1)
            try:
                out[(t, FUSED_AXIS)] = fit_axis(
                    (fused_magnitude(mags[keep, t]), dist[keep, t]), t, FUSED_AXIS)
            except InsufficientDataError:
                if strict:
                    raise
    return out


def local_recalibration(dataset: Dataset, fraction: float, seed: int) -> CalibrationSet:
    """Refit all axes on a seeded random ``fraction`` of the dataset."""
    if not 0 < fraction <= 1:
        raise DomainError(f"fraction must be in (0, 1], got {fraction}")
    n = len(dataset)
    k = max(1, int(round(fraction * n)))
    subset = np.random.default_rng(seed).permutation(n)[:k]
    return calibrate_dataset(dataset, np.sort(subset))


def sphere_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def factory_calibration(env: Environment, seed: int, n_per_transmitter: int = 200,
                        distance_range=(0.5, 8.0), receiver=None) -> CalibrationSet:
    """Calibrate each transmitter from a free-space recording around it.

    Distorters are removed; crosstalk and receiver noise stay. Directions
    are uniform on the sphere and distances log-uniform in
    ``distance_range``, so the fit averages over all orientations.
    """
    free = Environment(env.transmitters, env.crosstalk, (), env.chain, env.excitation_freq, None)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xCA1]))
    lo, hi = (math.log(v) for v in distance_range)
    out = CalibrationSet()
    for t, tx in enumerate(env.transmitters):
        pts = []
        while len(pts) < n_per_transmitter:
            d = math.exp(rng.uniform(lo, hi))
            p = tx.origin + d * sphere_directions(rng, 1)[0]
            try:
                free.check_point(p)
            except DomainError:
                continue
            pts.append(p)
        data = generate_dataset(free, np.array(pts), seed=int(rng.integers(2**31)),
                                receiver=receiver)
        single = calibrate_dataset(data, strict=False)
        for i in (0, 1, 2, FUSED_AXIS):
            if (t, i) not in single:
                raise InsufficientDataError(f"factory calibration failed for transmitter {t} axis {i}")
            c = single[(t, i)]
            out[(t, i)] = c
    return out
