"""Scenario assembly and TDMA measurement simulation.

A cycle excites every transmitter axis in a fixed global order
(tx0.x, tx0.y, tx0.z, tx1.x, ...). For each slot the receiver sees the
primary dipole field plus single-scattering contributions from distorters,
the transmitter's crosstalk mixes the axis rows, and every receiver coil
reading goes through the signal chain.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .errors import DomainError, SingularityError
from .field_model import (
    MU_0,
    ReceiverPose,
    TransmitterPose,
    as_vec3,
    coupling_from_fields,
)
from .signal_chain import SignalChain, sense

AXIS_NAMES = ("x", "y", "z")

# Row = activated axis, column = voltage read on the X, Y, Z coil.
OLD_COIL_VOLTAGES = np.array([[232.0, 155.0, 137.0],
                              [158.0, 245.0, 179.0],
                              [132.0, 167.0, 236.0]])
NEW_COIL_VOLTAGES = np.array([[286.0, 21.0, 30.0],
                              [17.0, 270.0, 24.0],
                              [31.0, 27.0, 272.0]])

_COINCIDENT = 1e-9


def validate_crosstalk(xtalk) -> np.ndarray:
    x = np.asarray(xtalk, dtype=np.float64)
    if x.shape != (3, 3) or not np.all(np.isfinite(x)):
        raise DomainError("crosstalk matrix must be a finite 3x3 array")
    diag = np.diag(x)
    if np.any(diag <= 0.5) or np.any(diag > 1.5):
        raise DomainError(f"crosstalk diagonal must lie in (0.5, 1.5], got {diag}")
    return x


def crosstalk_from_voltages(voltages) -> np.ndarray:
    """Mixing matrix from a per-axis activation voltage table.

    Entry (i, k) is the voltage on coil k while axis i is driven, divided by
    coil k's own voltage when it is the driven axis. That ratio is the
    fraction of axis k's field that leaks into slot i.
    """
    v = np.asarray(voltages, dtype=np.float64)
    diag = np.diag(v)
    if np.any(diag == 0):
        raise DomainError("activation table has a zero diagonal")
    return v / diag[None, :]


def apply_crosstalk(xtalk, ideal) -> np.ndarray:
    """Distorted row i = sum_k xtalk[i, k] * ideal row k."""
    x = np.asarray(xtalk, dtype=np.float64)
    m = np.asarray(ideal, dtype=np.float64)
    if x.shape != (3, 3) or m.shape[-2:] != (3, 3):
        raise DomainError("crosstalk and coupling matrices must be 3x3")
    return x @ m


def crosstalk_ratio(xtalk) -> np.ndarray:
    """Per-column mean off-diagonal magnitude relative to the diagonal, in percent."""
    x = np.asarray(xtalk, dtype=np.float64)
    diag = np.diag(x)
    if np.any(diag == 0):
        raise DomainError("crosstalk matrix has a zero diagonal")
    off = np.abs(x) * (1.0 - np.eye(3))
    return 100.0 * off.sum(axis=0) / 2.0 / np.abs(diag)


@dataclass(frozen=True)
class Distorter:
    """Conductive or ferromagnetic object modelled as an induced point dipole.

    The induced moment is ``polarizability @ B_incident / mu_0``; negative
    eigenvalues model eddy-current (diamagnetic-like) response.
    """

    position: np.ndarray
    polarizability: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "distorter position"))
        pol = np.asarray(self.polarizability, dtype=np.float64)
        if pol.ndim == 0:
            pol = float(pol) * np.eye(3)
        if pol.shape != (3, 3) or not np.all(np.isfinite(pol)):
            raise DomainError("polarizability must be a finite 3x3 matrix")
        if np.max(np.abs(pol - pol.T)) > 1e-12:
            raise DomainError("polarizability must be symmetric")
        object.__setattr__(self, "polarizability", pol)


@dataclass(frozen=True)
class Environment:
    transmitters: tuple
    crosstalk: tuple
    distorters: tuple = ()
    chain: SignalChain = field(default_factory=SignalChain)
    excitation_freq: float = 20_000.0
    bounds: tuple | None = None

    def __post_init__(self):
        if len(self.transmitters) < 1:
            raise DomainError("an environment needs at least one transmitter")
        object.__setattr__(self, "transmitters", tuple(self.transmitters))
        xt = self.crosstalk
        if xt is None or len(xt) == 0:
            xt = [np.eye(3)] * len(self.transmitters)
        if len(xt) != len(self.transmitters):
            raise DomainError("one crosstalk matrix per transmitter is required")
        object.__setattr__(self, "crosstalk", tuple(validate_crosstalk(x) for x in xt))
        object.__setattr__(self, "distorters", tuple(self.distorters))
        origins = self.anchors
        for i in range(len(origins)):
            for j in range(i + 1, len(origins)):
                if np.linalg.norm(origins[i] - origins[j]) < _COINCIDENT:
                    raise DomainError(f"transmitters {i} and {j} share an origin")
        for d in self.distorters:
            for t, tx in enumerate(self.transmitters):
                if np.linalg.norm(d.position - tx.origin) < tx.min_range:
                    raise SingularityError(
                        f"distorter {d.label or d.position} is inside the near field of transmitter {t}"
                    )

    @property
    def anchors(self) -> np.ndarray:
        return np.stack([tx.origin for tx in self.transmitters])

    @property
    def n_slots(self) -> int:
        return 3 * len(self.transmitters)

    @property
    def angular_freq(self) -> float:
        return 2.0 * math.pi * self.excitation_freq

    def without_distorters(self) -> "Environment":
        return Environment(self.transmitters, self.crosstalk, (), self.chain,
                           self.excitation_freq, self.bounds)

    def with_chain(self, chain: SignalChain) -> "Environment":
        return Environment(self.transmitters, self.crosstalk, self.distorters, chain,
                           self.excitation_freq, self.bounds)

    @cached_property
    def _primary_sources(self):
        sources = np.repeat(self.anchors, 3, axis=0)
        moments = np.concatenate([tx.moments for tx in self.transmitters])
        return sources, moments

    @cached_property
    def _scatter_sources(self):
        """Induced dipoles, grouped as (n_slots, n_distorters)."""
        if not self.distorters:
            return np.zeros((0, 3)), np.zeros((self.n_slots, 0, 3))
        sources, moments = self._primary_sources
        positions = np.stack([d.position for d in self.distorters])
        incident = kernels.dipole_fields(sources, moments, positions)  # (D, S, 3)
        pols = np.stack([d.polarizability for d in self.distorters])
        induced = np.einsum("dij,dsj->sdi", pols, incident) / MU_0
        return positions, induced

    def check_point(self, point) -> np.ndarray:
        point = as_vec3(point, "point")
        for t, tx in enumerate(self.transmitters):
            r = float(np.linalg.norm(point - tx.origin))
            if r < tx.min_range:
                raise SingularityError(
                    f"point {point} is {r:.3g} m from transmitter {t}, inside its near field"
                )
        for d in self.distorters:
            if np.linalg.norm(point - d.position) < _COINCIDENT:
                raise SingularityError(f"point {point} coincides with distorter {d.label}")
        return point

    def slot_fields(self, point) -> np.ndarray:
        """Total field of every slot at ``point``; shape (n_transmitters, 3, 3)."""
        point = self.check_point(point)
        sources, moments = self._primary_sources
        fields = kernels.dipole_fields(sources, moments, point[None, :])[0]
        if self.distorters:
            positions, induced = self._scatter_sources
            n_d = len(self.distorters)
            scat = kernels.dipole_fields(
                np.tile(positions, (self.n_slots, 1)),
                induced.reshape(-1, 3),
                point[None, :],
            )[0].reshape(self.n_slots, n_d, 3)
            fields = fields + scat.sum(axis=1)
        return fields.reshape(len(self.transmitters), 3, 3)


def total_field(env: Environment, tx_index: int, axis_index: int, point) -> np.ndarray:
    """Primary plus single-scattered field of one transmitter axis, in tesla."""
    return env.slot_fields(point)[tx_index, axis_index]


@dataclass
class MeasurementCycle:
    """One TDMA sweep over all transmitters.

    ``magnitudes[t, i, j]`` is the recovered amplitude on receiver coil j
    while axis i of transmitter t was driven; ``signs`` holds the sign of
    the noise-free coupling for the same entry.
    """

    magnitudes: np.ndarray
    signs: np.ndarray
    index: int = 0
    true_position: np.ndarray | None = None

    def __post_init__(self):
        self.magnitudes = np.asarray(self.magnitudes, dtype=np.float64)
        self.signs = np.asarray(self.signs, dtype=np.int8)
        if self.magnitudes.ndim != 3 or self.magnitudes.shape[1:] != (3, 3):
            raise DomainError("magnitudes must have shape (n_transmitters, 3, 3)")
        if self.signs.shape != self.magnitudes.shape:
            raise DomainError("signs must match magnitudes in shape")
        if np.any(self.magnitudes < 0):
            raise DomainError("magnitudes must be >= 0")
        if self.true_position is not None:
            self.true_position = as_vec3(self.true_position, "true_position")

    @property
    def n_transmitters(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def slots(self) -> list[tuple[int, int]]:
        return [(t, i) for t in range(self.n_transmitters) for i in range(3)]

    def axis_magnitudes(self) -> np.ndarray:
        """(n_transmitters, 3) norm of each axis' receiver readings."""
        return np.linalg.norm(self.magnitudes, axis=2)

    def features(self) -> np.ndarray:
        """Axis magnitudes flattened in slot order."""
        return self.axis_magnitudes().reshape(-1)


@dataclass
class Dataset:
    cycles: list
    scenario_id: str = ""
    seed: int = 0
    floor: float = 0.0
    anchors: np.ndarray | None = None
    planar_height: float | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.cycles)

    @property
    def has_truth(self) -> bool:
        return all(c.true_position is not None for c in self.cycles)

    @property
    def positions(self) -> np.ndarray:
        return np.stack([c.true_position for c in self.cycles])

    def feature_matrix(self) -> np.ndarray:
        return np.stack([c.features() for c in self.cycles])

    def subset(self, indices) -> "Dataset":
        return Dataset([self.cycles[i] for i in indices], self.scenario_id, self.seed,
                       self.floor, self.anchors, self.planar_height, dict(self.meta))


def _check_bounds(env: Environment, point: np.ndarray) -> None:
    if env.bounds is None:
        return
    lo = np.asarray(env.bounds[0], dtype=float)
    hi = np.asarray(env.bounds[1], dtype=float)
    if np.any(point < lo - 1e-9) or np.any(point > hi + 1e-9):
        raise DomainError(f"receiver at {point} is outside the scenario bounds")


def run_cycle(env: Environment, rx: ReceiverPose, rng=None, index: int = 0,
              record_truth: bool = True) -> MeasurementCycle:
    """Simulate one TDMA sweep for a static receiver.

    Noise draws are consumed in slot order, three per slot (one per
    receiver coil), so a given ``rng`` state fully determines the cycle.
    """
    _check_bounds(env, rx.origin)
    fields = env.slot_fields(rx.origin)
    ideal = coupling_from_fields(fields, rx, env.angular_freq)
    mixed = np.stack([apply_crosstalk(x, m) for x, m in zip(env.crosstalk, ideal)])
    signs = np.sign(mixed).astype(np.int8)
    result = sense(env.chain, np.abs(mixed), env.excitation_freq, rng)
    return MeasurementCycle(
        magnitudes=np.asarray(result.magnitude).reshape(mixed.shape),
        signs=signs,
        index=index,
        true_position=rx.origin.copy() if record_truth else None,
    )


def generate_grid(bounds, spacing: float, height: float) -> np.ndarray:
    """Closed lattice over ``bounds = (xmin, xmax, ymin, ymax)``, x varying fastest.

    Both boundary edges are included whenever they fall on the lattice.
    """
    if not spacing > 0:
        raise DomainError(f"spacing must be > 0, got {spacing}")
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    if not (xmax > xmin and ymax > ymin):
        raise DomainError(f"degenerate bounds {bounds}")
    nx = int(math.floor((xmax - xmin) / spacing + 1e-9)) + 1
    ny = int(math.floor((ymax - ymin) / spacing + 1e-9)) + 1
    xs = xmin + spacing * np.arange(nx)
    ys = ymin + spacing * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(nx * ny, float(height))])


def point_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for grid point ``index``; stable across worker counts."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _simulate_chunk(args):
    env, rx, seed, start, points = args
    return [run_cycle(env, rx.moved_to(p), point_rng(seed, start + k), start + k)
            for k, p in enumerate(points)]


def generate_dataset(env: Environment, positions, seed: int, receiver: ReceiverPose | None = None,
                     scenario_id: str = "", workers: int = 1,
                     planar_height: float | None = None) -> Dataset:
    """Run one cycle per position; the result does not depend on ``workers``."""
    positions = np.asarray(positions, dtype=np.float64)
    rx = receiver if receiver is not None else ReceiverPose(np.zeros(3))
    if workers <= 1 or len(positions) < 2 * workers:
        cycles = _simulate_chunk((env, rx, seed, 0, positions))
    else:
        bounds = np.linspace(0, len(positions), workers + 1).astype(int)
        jobs = [(env, rx, seed, int(a), positions[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cycles = [c for chunk in pool.map(_simulate_chunk, jobs) for c in chunk]
    return Dataset(
        cycles=cycles,
        scenario_id=scenario_id,
        seed=int(seed),
        floor=env.chain.floor(env.excitation_freq),
        anchors=env.anchors,
        planar_height=planar_height,
    )
