"""End-to-end method comparison on one dataset.

The dataset is split once: ``recal_frac`` for local recalibration,
``train_frac`` for the fingerprint map, and the remainder for evaluation.
All methods are scored on the same evaluation indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import (
    AXIS_LABELS,
    FUSED_AXIS,
    CalibrationSet,
    calibrate_dataset,
    factory_calibration,
    fused_magnitude,
    magnitude_to_distance,
)
from .environment import Dataset, generate_dataset
from .errors import InsufficientAnchorsError, InsufficientDataError
from .evaluation import (
    DEFAULT_BANDS,
    BOXPLOT_COLUMNS,
    INTERVAL_COLUMNS,
    MEDIAN_COLUMNS,
    ErrorMapRecord,
    boxplot_stats,
    export_error_map,
    export_estimates,
    median_position_error,
    rmse_by_interval,
    split_dataset,
)
from .fingerprint import DEFAULT_LAMBDA, cross_validate_lambda, fit_model, select_kind
from .localization import estimate_position
from .records import write_table
from .scenario import Scenario

METHODS = ("model", "recalibrated", "fingerprint")


@dataclass
class MethodResult:
    method: str
    indices: np.ndarray
    estimates: np.ndarray
    truths: np.ndarray
    residuals: np.ndarray
    failures: int = 0
    info: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        return np.linalg.norm(self.estimates - self.truths, axis=1)

    @property
    def median(self) -> float:
        return median_position_error(self.estimates, self.truths) if len(self.estimates) else float("nan")


@dataclass
class PipelineResult:
    results: dict
    splits: list
    calibrations: dict = field(default_factory=dict)
    model: object = None


def simulate(scenario: Scenario, seed: int | None = None, workers: int = 1) -> Dataset:
    seed = scenario.seed if seed is None else int(seed)
    ds = generate_dataset(scenario.env, scenario.positions, seed, scenario.receiver,
                          scenario_id=scenario.id, workers=workers,
                          planar_height=scenario.planar_height)
    ds.meta = {"config_hash": scenario.hash}
    return ds


def scenario_factory_calibration(scenario: Scenario, seed: int) -> CalibrationSet:
    opts = scenario.calibration
    return factory_calibration(
        scenario.env, seed,
        n_per_transmitter=int(opts.get("n_per_transmitter", 200)),
        distance_range=tuple(opts.get("distance_range", (0.5, 8.0))),
        receiver=scenario.receiver,
    )


def localize_all(dataset: Dataset, indices, cals: CalibrationSet, method: str,
                 transmitters=None, fusion: str = "field") -> MethodResult:
    est, truth, resid, idx = [], [], [], []
    failures = 0
    for i in indices:
        cycle = dataset.cycles[i]
        try:
            e = estimate_position(cycle, cals, dataset.anchors, dataset.floor,
                                  dataset.planar_height, transmitters, method, fusion)
        except InsufficientAnchorsError:
            failures += 1
            continue
        est.append(e.position)
        truth.append(cycle.true_position if cycle.true_position is not None else np.full(3, np.nan))
        resid.append(e.residual)
        idx.append(i)
    return MethodResult(method, np.asarray(idx, dtype=int), np.reshape(est, (-1, 3)),
                        np.reshape(truth, (-1, 3)), np.asarray(resid), failures)


def range_pairs(dataset: Dataset, indices, cals: CalibrationSet, axis: int):
    """(true, estimated) distance pairs for one calibration axis of every transmitter."""
    out = []
    for i in indices:
        c = dataset.cycles[i]
        for t in range(c.n_transmitters):
            cal = cals.get((t, axis))
            if cal is None:
                continue
            if axis == FUSED_AXIS:
                if not np.all(np.max(c.magnitudes[t], axis=-1) > dataset.floor * (1 + 1e-6)):
                    continue
                m = fused_magnitude(c.magnitudes[t])
            else:
                if np.max(c.magnitudes[t, axis]) <= dataset.floor * (1 + 1e-6):
                    continue
                m = np.linalg.norm(c.magnitudes[t, axis])
            true = float(np.linalg.norm(c.true_position - dataset.anchors[t]))
            out.append((true, float(magnitude_to_distance(cal, m))))
    return out


def run_pipeline(scenario: Scenario, dataset: Dataset, seed: int, methods=METHODS,
                 recal_frac: float = 0.1, train_frac: float = 0.3, kind: str | None = None,
                 lam: float | str | None = None, fusion: str = "field") -> PipelineResult:
    if "fingerprint" in methods and not dataset.has_truth:
        raise InsufficientDataError("fingerprint training requires ground-truth positions in the dataset")
    if "recalibrated" in methods and not dataset.has_truth:
        raise InsufficientDataError("local recalibration requires ground-truth positions in the dataset")
    recal_idx, train_idx, eval_idx = split_dataset(dataset, [recal_frac, train_frac], seed)
    results, cals = {}, {}
    transmitters = scenario.env.transmitters
    if "model" in methods:
        cals["model"] = scenario_factory_calibration(scenario, seed)
        results["model"] = localize_all(dataset, eval_idx, cals["model"], "model", transmitters, fusion)
    if "recalibrated" in methods:
        cals["recalibrated"] = calibrate_dataset(dataset, recal_idx)
        results["recalibrated"] = localize_all(dataset, eval_idx, cals["recalibrated"],
                                               "recalibrated", transmitters, fusion)
    model = None
    if "fingerprint" in methods:
        F = dataset.feature_matrix()
        P = dataset.positions
        opts = scenario.fingerprint
        lam = opts.get("lambda", DEFAULT_LAMBDA) if lam is None else lam
        kind = kind or opts.get("kind", "auto")
        if lam == "cv":
            lam = cross_validate_lambda(F[train_idx], P[train_idx],
                                        "lasso" if kind == "auto" else kind, seed=seed)
        if kind == "auto":
            kind = select_kind(F[train_idx], P[train_idx], float(lam), seed)
        model = fit_model(F[train_idx], P[train_idx], kind, float(lam),
                          meta={"train_fraction": train_frac, "seed": int(seed),
                                "n_train": int(len(train_idx)), "scenario": dataset.scenario_id})
        pred = model.predict_array(F[eval_idx])
        results["fingerprint"] = MethodResult("fingerprint", np.asarray(eval_idx), pred, P[eval_idx],
                                              np.zeros(len(eval_idx)), 0, {"kind": kind, "lambda": float(lam)})
    return PipelineResult(results, [recal_idx, train_idx, eval_idx], cals, model)


def interval_rows(dataset: Dataset, indices, calibrations: dict, bands=DEFAULT_BANDS):
    """Distance-error RMSE and boxplot rows per (calibration, axis, band)."""
    rmse_rows, box_rows = [], []
    for name in sorted(calibrations):
        cals = calibrations[name]
        for axis in (0, 1, 2, FUSED_AXIS):
            pairs = np.asarray(range_pairs(dataset, indices, cals, axis)).reshape(-1, 2)
            label = AXIS_LABELS[axis]
            rep = rmse_by_interval(pairs, bands)
            for (lo, hi), n, r in zip(rep.bands, rep.counts, rep.rmse):
                rmse_rows.append((name, label, lo, hi, n, r))
                sel = (pairs[:, 0] >= lo) & (pairs[:, 0] < hi)
                stats = boxplot_stats(pairs[sel, 1] - pairs[sel, 0])
                box_rows.append((name, label, lo, hi, int(sel.sum()), *(stats or (None,) * 5)))
            # plain mean of the present bands; empty band edges mark the row
            present = [r for r in rep.rmse if r is not None]
            rmse_rows.append((name, label, None, None, sum(rep.counts),
                              float(np.mean(present)) if present else None))
    return rmse_rows, box_rows


def write_reports(result: PipelineResult, dataset: Dataset, out_dir, meta: dict) -> list:
    """Write the report bundle; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [m for m in METHODS if m in result.results]
    paths = {k: out / f"{k}.csv" for k in ("medians", "estimates", "error_map", "intervals", "boxplot")}
    write_table(paths["medians"], MEDIAN_COLUMNS,
                [(m, len(result.results[m].estimates), result.results[m].median) for m in names], meta)
    est_rows, map_rows = [], []
    for m in names:
        r = result.results[m]
        for i, e, t, res, err in zip(r.indices, r.estimates, r.truths, r.residuals, r.errors):
            est_rows.append((i, t, e, res, m))
            map_rows.append(ErrorMapRecord(tuple(t), float(err), m))
    export_estimates(est_rows, paths["estimates"], meta)
    export_error_map(map_rows, paths["error_map"], meta)
    rmse_rows, box_rows = interval_rows(dataset, result.splits[-1], result.calibrations)
    write_table(paths["intervals"], ("calibration", "axis") + INTERVAL_COLUMNS, rmse_rows, meta)
    write_table(paths["boxplot"], ("calibration",) + BOXPLOT_COLUMNS, box_rows, meta)
    written = list(paths.values())
    for name, cals in sorted(result.calibrations.items()):
        p = out / f"calibration_{name}.json"
        cals.save(p, meta)
        written.append(p)
    if result.model is not None:
        p = out / "model.json"
        result.model.meta.update(meta)
        result.model.save(p)
        written.append(p)
    return written
