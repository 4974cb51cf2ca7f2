"""Line-delimited file formats.

Tables are CSV with optional leading ``# key=value`` metadata lines followed
by one header row; column order is fixed by the writer. Datasets are JSON
Lines: a header object, then one object per measurement cycle.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .environment import Dataset, MeasurementCycle
from .errors import SchemaError

DATASET_FORMAT = "magloc-dataset/1"


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_table(path, columns, rows, meta: dict | None = None) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for key in sorted(meta or {}):
                fh.write(f"# {key}={meta[key]}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_table(path):
    """Return ``(meta, columns, rows)`` with every cell as a string."""
    meta, lines = {}, []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#") and not lines:
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value
            else:
                lines.append(line)
    reader = csv.reader(lines)
    try:
        columns = next(reader)
    except StopIteration as exc:
        raise SchemaError(f"{path}: missing header row") from exc
    return meta, columns, [row for row in reader]


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _vec(v):
    return None if v is None else [float(x) for x in v]


def write_dataset(dataset: Dataset, path, meta: dict | None = None) -> None:
    header = {
        "type": "header",
        "format": DATASET_FORMAT,
        "scenario": dataset.scenario_id,
        "seed": dataset.seed,
        "floor": float(dataset.floor),
        "planar_height": dataset.planar_height,
        "anchors": None if dataset.anchors is None else [_vec(a) for a in dataset.anchors],
        "n_cycles": len(dataset),
        "meta": {**dataset.meta, **(meta or {})},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for c in dataset.cycles:
            rec = {
                "type": "cycle",
                "index": int(c.index),
                "true_position": _vec(c.true_position),
                "magnitudes": [[[float(v) for v in row] for row in tx] for tx in c.magnitudes],
                "signs": c.signs.astype(int).tolist(),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:1: {exc}") from exc
    if header.get("format") != DATASET_FORMAT:
        raise SchemaError(f"{path}:1: not a magloc dataset (format={header.get('format')!r})")
    cycles = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            cycles.append(MeasurementCycle(
                magnitudes=np.array(rec["magnitudes"], dtype=float),
                signs=np.array(rec["signs"], dtype=np.int8),
                index=int(rec["index"]),
                true_position=None if rec.get("true_position") is None else np.array(rec["true_position"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    anchors = header.get("anchors")
    return Dataset(
        cycles=cycles,
        scenario_id=header.get("scenario", ""),
        seed=int(header.get("seed", 0)),
        floor=float(header.get("floor", 0.0)),
        anchors=None if anchors is None else np.array(anchors, dtype=float),
        planar_height=header.get("planar_height"),
        meta=dict(header.get("meta", {})),
    )
