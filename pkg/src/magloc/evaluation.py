"""Error statistics and report export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SchemaError
from .records import read_table, write_table

DEFAULT_BANDS = ((0.0, 3.0), (3.0, 5.0), (5.0, 8.0))
ERROR_MAP_COLUMNS = ("x", "y", "z", "error", "method")
INTERVAL_COLUMNS = ("low", "high", "count", "rmse")
BOXPLOT_COLUMNS = ("axis", "low", "high", "count", "min", "q1", "median", "q3", "max")
MEDIAN_COLUMNS = ("method", "count", "median_error")
ESTIMATE_COLUMNS = ("index", "true_x", "true_y", "true_z", "x", "y", "z", "residual", "method")


def _check_bands(bands):
    bands = [(float(lo), float(hi)) for lo, hi in bands]
    for lo, hi in bands:
        if not hi > lo:
            raise DomainError(f"band ({lo}, {hi}) is empty")
    for (_, h0), (l1, _) in zip(bands, bands[1:]):
        if l1 < h0:
            raise DomainError("bands must be ascending and non-overlapping")
    return bands


@dataclass
class IntervalReport:
    """Per-band RMSE; ``rmse[k]`` is None when band k has no samples."""

    bands: list
    rmse: list
    counts: list

    def present(self):
        return [(b, r) for b, r in zip(self.bands, self.rmse) if r is not None]

    def rows(self):
        return [(lo, hi, n, r) for (lo, hi), n, r in zip(self.bands, self.counts, self.rmse)]


def rmse_by_interval(samples, bands=DEFAULT_BANDS) -> IntervalReport:
    """RMSE of (estimated - true) distance per half-open band [low, high)."""
    bands = _check_bands(bands)
    arr = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    true, est = arr[:, 0], arr[:, 1]
    rmse, counts = [], []
    for lo, hi in bands:
        sel = (true >= lo) & (true < hi)
        n = int(sel.sum())
        counts.append(n)
        rmse.append(float(np.sqrt(np.mean((est[sel] - true[sel]) ** 2))) if n else None)
    return IntervalReport(bands, rmse, counts)


def position_errors(estimates, truths) -> np.ndarray:
    e = np.asarray(estimates, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if e.shape != t.shape:
        raise DomainError(f"estimate/truth shapes differ: {e.shape} vs {t.shape}")
    if e.size == 0:
        return np.zeros(0)
    return np.linalg.norm(e.reshape(len(e), -1) - t.reshape(len(t), -1), axis=1)


def median_position_error(estimates, truths) -> float:
    """Median Euclidean error; an even count averages the central pair."""
    errs = position_errors(estimates, truths)
    if errs.size == 0:
        raise DomainError("median of an empty set")
    return float(np.median(errs))


def boxplot_stats(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return None
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return tuple(float(x) for x in q)


@dataclass(frozen=True)
class ErrorMapRecord:
    position: tuple
    error: float
    method: str

    def __post_init__(self):
        if not self.error >= 0:
            raise DomainError("position error must be >= 0")


def export_error_map(records, path, meta: dict | None = None) -> None:
    rows = [(*(float(c) for c in r.position), float(r.error), r.method) for r in records]
    write_table(path, ERROR_MAP_COLUMNS, rows, meta)


def read_error_map(path) -> list:
    _, columns, rows = read_table(path)
    if tuple(columns) != ERROR_MAP_COLUMNS:
        raise SchemaError(f"{path}: unexpected columns {columns}")
    return [ErrorMapRecord((float(r[0]), float(r[1]), float(r[2])), float(r[3]), r[4]) for r in rows]


def export_estimates(rows, path, meta: dict | None = None) -> None:
    """Rows of ``(index, true position or None, estimate, residual, method)``."""
    out = []
    for index, truth, est, resid, method in rows:
        t = (None, None, None) if truth is None else tuple(float(v) for v in truth)
        out.append((int(index), *t, *(float(v) for v in est), float(resid), method))
    write_table(path, ESTIMATE_COLUMNS, out, meta)


def read_estimates(path):
    """Inverse of :func:`export_estimates`; returns ``(meta, rows)``."""
    meta, columns, rows = read_table(path)
    if tuple(columns) != ESTIMATE_COLUMNS:
        raise SchemaError(f"{path}: unexpected columns {columns}")
    out = []
    for lineno, r in enumerate(rows, start=1):
        try:
            truth = None if r[1] == "" else np.array([float(v) for v in r[1:4]])
            out.append((int(r[0]), truth, np.array([float(v) for v in r[4:7]]), float(r[7]), r[8]))
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{path}: row {lineno}: {exc}") from exc
    return meta, out


def export_interval_report(report: IntervalReport, path, meta: dict | None = None) -> None:
    write_table(path, INTERVAL_COLUMNS, report.rows(), meta)


def split_dataset(dataset, fractions, seed: int) -> list:
    """Seeded shuffle, then contiguous blocks sized by ``fractions``.

    Returns one sorted index array per fraction plus the remainder.
    ``dataset`` may be a sized collection or an integer count.
    """
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    fr = [float(f) for f in fractions]
    if any(not 0 <= f <= 1 for f in fr) or sum(fr) > 1 + 1e-12:
        raise DomainError(f"fractions must lie in [0, 1] and sum to <= 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(n)
    edges = [0] + [min(n, int(round(c * n))) for c in np.cumsum(fr)] + [n]
    return [np.sort(order[a:b]) for a, b in zip(edges[:-1], edges[1:])]
