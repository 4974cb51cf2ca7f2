"""Scenario configuration files (YAML or JSON).

Top-level keys::

    id: office                  # scenario identifier
    seed: 11                    # default RNG seed
    bounds: {x: [0, 10], y: [0, 7], z: [0, 3]}
    receiver: {height: 1.0, turns: 300, radius: 0.0125}
    planar: true                # pin the receiver height when localizing
    transmitter_defaults: {turns: 40, radius: 0.1, current: 1.0, crosstalk: new}
    transmitters:               # origin plus optional per-entry overrides
      - {origin: [0.2, 0.2, 1.0], yaw_deg: 0}
    distorters:                 # polarizability: scalar (isotropic) or 3x3, m^3
      - {position: [3, 4, 0.2], polarizability: -0.2, label: fridge}
    positions:                  # one of grid / random / list
      grid: {bounds: [0, 5, 0, 8.5], spacing: 0.5}
    chain: {filter: {...}, log_amp: {...}, noise: {...}, adc: {...}}
    calibration: {n_per_transmitter: 200, distance_range: [0.5, 8.0]}
    fingerprint: {kind: auto, lambda: 0.01}

``crosstalk`` accepts ``ideal``, ``old``, ``new`` (Table-1 activation
voltages of the cube and spherical coils) or an explicit 3x3 matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .environment import (
    NEW_COIL_VOLTAGES,
    OLD_COIL_VOLTAGES,
    Distorter,
    Environment,
    crosstalk_from_voltages,
    generate_grid,
)
from .errors import DomainError, MaglocError, SchemaError
from .field_model import ReceiverPose, TransmitterPose, frame_from_rotation, rotation_matrix
from .records import config_hash
from .signal_chain import AdcSpec, FilterSpec, LogAmpSpec, NoiseSpec, SignalChain

BUNDLED = ("reference_office", "office", "robotic_lab", "industrial")
CROSSTALK_PRESETS = {
    "ideal": np.eye(3),
    "old": crosstalk_from_voltages(OLD_COIL_VOLTAGES),
    "new": crosstalk_from_voltages(NEW_COIL_VOLTAGES),
}
# Random positions keep this clearance from every transmitter.
_TX_CLEARANCE = 0.5


@dataclass
class Scenario:
    id: str
    env: Environment
    receiver: ReceiverPose
    positions: np.ndarray
    seed: int = 0
    planar_height: float | None = None
    calibration: dict = field(default_factory=dict)
    fingerprint: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    source: str = ""

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def _get(cfg: dict, key: str, where: str, default=...):
    if key in cfg:
        return cfg[key]
    if default is ...:
        raise SchemaError(f"{where}: missing required field '{key}'")
    return default


def _vec(value, where: str, n: int = 3) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: expected {n} numbers, got {value!r}") from exc
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise SchemaError(f"{where}: expected {n} finite numbers, got {value!r}")
    return arr


def _crosstalk(value, where: str) -> np.ndarray:
    if isinstance(value, str):
        if value not in CROSSTALK_PRESETS:
            raise SchemaError(f"{where}: unknown crosstalk preset {value!r}")
        return CROSSTALK_PRESETS[value]
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: crosstalk must be a preset name or 3x3 matrix") from exc
    if arr.shape != (3, 3):
        raise SchemaError(f"{where}: crosstalk must be 3x3")
    return arr


def _frame(cfg: dict) -> np.ndarray:
    if "axes" in cfg:
        return np.asarray(cfg["axes"], dtype=float)
    angles = [math.radians(float(cfg.get(k, 0.0))) for k in ("yaw_deg", "pitch_deg", "roll_deg")]
    if not any(angles):
        return np.eye(3)
    return frame_from_rotation(rotation_matrix(*angles))


def _chain(cfg: dict) -> SignalChain:
    try:
        return SignalChain(
            filter=FilterSpec(**cfg.get("filter", {})),
            log_amp=LogAmpSpec(**cfg.get("log_amp", {})),
            noise=NoiseSpec(**cfg.get("noise", {})),
            adc=AdcSpec(**cfg.get("adc", {})),
        )
    except TypeError as exc:
        raise SchemaError(f"chain: {exc}") from exc


def _positions(cfg: dict, bounds, height: float, transmitters, seed: int) -> np.ndarray:
    if "grid" in cfg:
        g = cfg["grid"]
        return generate_grid(_vec(_get(g, "bounds", "positions.grid"), "positions.grid.bounds", 4),
                             float(_get(g, "spacing", "positions.grid")), float(g.get("height", height)))
    if "random" in cfg:
        r = cfg["random"]
        count = int(_get(r, "count", "positions.random"))
        margin = float(r.get("margin", 0.0))
        lo, hi = bounds[0] + margin, bounds[1] - margin
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9051]))
        anchors = np.stack([tx.origin for tx in transmitters])
        out = []
        while len(out) < count:
            p = np.array([rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1]), height])
            if np.min(np.linalg.norm(anchors - p, axis=1)) >= _TX_CLEARANCE:
                out.append(p)
        return np.array(out)
    if "list" in cfg:
        return np.array([_vec(p, f"positions.list[{i}]") for i, p in enumerate(cfg["list"])])
    raise SchemaError("positions: expected one of 'grid', 'random', 'list'")


def build_scenario(cfg: dict, source: str = "") -> Scenario:
    if not isinstance(cfg, dict):
        raise SchemaError(f"{source or 'scenario'}: top level must be a mapping")
    sid = str(_get(cfg, "id", "scenario"))
    seed = int(cfg.get("seed", 0))
    b = _get(cfg, "bounds", "scenario")
    lo = np.array([b["x"][0], b["y"][0], b.get("z", [0.0, 3.0])[0]], dtype=float)
    hi = np.array([b["x"][1], b["y"][1], b.get("z", [0.0, 3.0])[1]], dtype=float)
    rcfg = cfg.get("receiver", {})
    height = float(rcfg.get("height", 1.0))
    receiver = ReceiverPose(
        np.array([lo[0], lo[1], height]),
        turns=int(rcfg.get("turns", 300)),
        area=math.pi * float(rcfg.get("radius", 0.0125)) ** 2,
    )
    defaults = cfg.get("transmitter_defaults", {})
    txs, xtalks = [], []
    tx_list = _get(cfg, "transmitters", "scenario")
    if not tx_list:
        raise SchemaError("transmitters: at least one transmitter is required")
    for i, entry in enumerate(tx_list):
        where = f"transmitters[{i}]"
        merged = {**defaults, **entry}
        try:
            txs.append(TransmitterPose.build(
                _vec(_get(merged, "origin", where), f"{where}.origin"),
                turns=int(merged.get("turns", 40)), radius=float(merged.get("radius", 0.1)),
                current=float(merged.get("current", 1.0)), axes=_frame(merged)))
        except DomainError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
        xtalks.append(_crosstalk(merged.get("crosstalk", "ideal"), f"{where}.crosstalk"))
    dists = []
    for i, entry in enumerate(cfg.get("distorters", []) or []):
        where = f"distorters[{i}]"
        try:
            dists.append(Distorter(_vec(_get(entry, "position", where), f"{where}.position"),
                                   np.asarray(_get(entry, "polarizability", where), dtype=float),
                                   str(entry.get("label", ""))))
        except DomainError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
    try:
        env = Environment(tuple(txs), tuple(xtalks), tuple(dists), _chain(cfg.get("chain", {})),
                          float(cfg.get("excitation_freq", 20_000.0)), (lo, hi))
    except MaglocError as exc:
        raise SchemaError(f"{source or sid}: {exc}") from exc
    positions = _positions(_get(cfg, "positions", "scenario"), (lo, hi), height, txs, seed)
    for p in positions:
        try:
            env.check_point(p)
        except DomainError as exc:
            raise SchemaError(f"positions: {exc}") from exc
    return Scenario(
        id=sid, env=env, receiver=receiver, positions=positions, seed=seed,
        planar_height=height if cfg.get("planar", True) else None,
        calibration=dict(cfg.get("calibration", {})), fingerprint=dict(cfg.get("fingerprint", {})),
        raw=cfg, source=source,
    )


def read_config(path) -> dict:
    """Parse a YAML/JSON scenario or run-config file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def load_scenario(name_or_path) -> Scenario:
    """Load a bundled scenario by name or a scenario file by path."""
    text = str(name_or_path)
    if text in BUNDLED and not Path(text).exists():
        ref = resources.files("magloc") / "scenarios" / f"{text}.yaml"
        with ref.open("r", encoding="utf-8") as fh:
            return build_scenario(yaml.safe_load(fh), f"bundled:{text}")
    return build_scenario(read_config(text), text)
