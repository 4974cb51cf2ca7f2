"""Quasi-static fields of excited transmitter coils and induced receiver voltages.

Transmitter axes are modelled as point dipoles with moment ``N * I * pi * a**2``
along the coil normal. The exact on-axis loop formula is kept alongside as the
reference the dipole approximation must converge to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, SingularityError

MU_0 = 4.0 * math.pi * 1e-7
EXCITATION_FREQ = 20_000.0
DEFAULT_OMEGA = 2.0 * math.pi * EXCITATION_FREQ

# Dipole model is rejected closer than this many coil radii.
NEAR_FIELD_RADII = 3.0

_UNIT_TOL = 1e-12
_ORTHO_TOL = 1e-9


def as_vec3(value, name: str = "vector") -> np.ndarray:
    """Return ``value`` as a finite float64 array of shape (3,)."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,):
        raise DomainError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite components: {arr}")
    return arr


def _check_frame(axes: np.ndarray, what: str) -> np.ndarray:
    axes = np.asarray(axes, dtype=np.float64)
    if axes.shape != (3, 3) or not np.all(np.isfinite(axes)):
        raise DomainError(f"{what} axes must be a finite 3x3 array")
    norms = np.linalg.norm(axes, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise DomainError(f"{what} axes must be unit vectors, norms={norms}")
    gram = axes @ axes.T
    off = gram - np.diag(np.diag(gram))
    if np.max(np.abs(off)) > _ORTHO_TOL:
        raise DomainError(f"{what} axes are not mutually orthogonal")
    return axes


def rotation_matrix(yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """Z-Y-X intrinsic rotation; angles in radians."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def frame_from_rotation(rot) -> np.ndarray:
    """Rows of the returned frame are the rotated x, y, z unit vectors.

    The result is re-orthonormalised so that it passes the strict frame
    invariants even after a round trip through text.
    """
    rot = np.asarray(rot, dtype=np.float64)
    u, _, vt = np.linalg.svd(rot)
    return (u @ vt).T


@dataclass(frozen=True)
class CoilSpec:
    """Physical parameters of one coil axis.

    Attributes:
        turns: Number of windings N.
        radius: Coil radius a in metres.
        current: Peak excitation current I in amperes.
        axis_unit: Unit normal of the coil (moment direction).
    """

    turns: int
    radius: float
    current: float
    axis_unit: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if not (math.isfinite(self.radius) and math.isfinite(self.current)):
            raise DomainError("coil radius and current must be finite")
        if self.turns < 1:
            raise DomainError(f"turns must be >= 1, got {self.turns}")
        if self.radius <= 0:
            raise DomainError(f"radius must be > 0, got {self.radius}")
        if self.current <= 0:
            raise DomainError(f"current must be > 0, got {self.current}")
        axis = as_vec3(self.axis_unit, "axis_unit")
        if abs(np.linalg.norm(axis) - 1.0) > _UNIT_TOL:
            raise DomainError(f"axis_unit must have unit norm, got {np.linalg.norm(axis)}")
        object.__setattr__(self, "axis_unit", axis)

    @property
    def moment_magnitude(self) -> float:
        return self.turns * self.current * math.pi * self.radius**2

    @property
    def moment(self) -> np.ndarray:
        return self.moment_magnitude * self.axis_unit

    def with_axis(self, axis) -> "CoilSpec":
        return CoilSpec(self.turns, self.radius, self.current, np.asarray(axis, dtype=float))


@dataclass(frozen=True)
class TransmitterPose:
    """Three orthogonal coil axes sharing one origin.

    ``axes[i]`` is the unit normal of ``coils[i]``; both are kept so that a
    coil spec can differ per axis (e.g. unequal windings).
    """

    origin: np.ndarray
    axes: np.ndarray
    coils: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", as_vec3(self.origin, "transmitter origin"))
        axes = _check_frame(self.axes, "transmitter")
        object.__setattr__(self, "axes", axes)
        if len(self.coils) != 3:
            raise DomainError("a transmitter needs exactly three coil specs")
        coils = tuple(c.with_axis(axes[i]) for i, c in enumerate(self.coils))
        object.__setattr__(self, "coils", coils)

    @classmethod
    def build(cls, origin, turns: int = 40, radius: float = 0.1, current: float = 1.0,
              axes=None) -> "TransmitterPose":
        axes = np.eye(3) if axes is None else np.asarray(axes, dtype=float)
        coil = CoilSpec(turns, radius, current, axes[0])
        return cls(np.asarray(origin, dtype=float), axes, (coil, coil, coil))

    @property
    def moments(self) -> np.ndarray:
        """(3, 3) array; row i is the dipole moment of axis i."""
        return np.stack([c.moment for c in self.coils])

    @property
    def min_range(self) -> float:
        return NEAR_FIELD_RADII * max(c.radius for c in self.coils)

    def local_coordinates(self, point) -> np.ndarray:
        return self.axes @ (np.asarray(point, dtype=float) - self.origin)


@dataclass(frozen=True)
class ReceiverPose:
    """3-axis receiver coil. ``axes[j]`` is the normal of receiver coil j."""

    origin: np.ndarray
    axes: np.ndarray = field(default_factory=lambda: np.eye(3))
    turns: int = 300
    area: float = math.pi * 0.0125**2

    def __post_init__(self):
        object.__setattr__(self, "origin", as_vec3(self.origin, "receiver origin"))
        object.__setattr__(self, "axes", _check_frame(self.axes, "receiver"))
        if self.turns < 1 or not self.area > 0:
            raise DomainError("receiver turns must be >= 1 and area > 0")

    @property
    def sensitivity(self) -> float:
        """N_rx * A_rx, volts per (T * rad/s)."""
        return self.turns * self.area

    def moved_to(self, origin) -> "ReceiverPose":
        return ReceiverPose(np.asarray(origin, dtype=float), self.axes, self.turns, self.area)


def on_axis_field(coil: CoilSpec, z: float) -> float:
    """Exact on-axis field magnitude of a circular loop, in tesla."""
    if not math.isfinite(z):
        raise DomainError(f"z must be finite, got {z}")
    if z < 0:
        raise DomainError(f"z must be >= 0, got {z}")
    a = coil.radius
    return MU_0 * coil.turns * a * a * coil.current / (2.0 * math.sqrt(a * a + z * z) ** 3)


def dipole_field(tx_origin, moment_axis, coil: CoilSpec, point) -> np.ndarray:
    """Point-dipole field of one coil axis at ``point``.

    Raises:
        SingularityError: if ``point`` is within the near-field cutoff
            (``NEAR_FIELD_RADII`` coil radii) of the origin.
    """
    origin = as_vec3(tx_origin, "tx_origin")
    axis = as_vec3(moment_axis, "moment_axis")
    point = as_vec3(point, "point")
    r = float(np.linalg.norm(point - origin))
    if r < NEAR_FIELD_RADII * coil.radius:
        raise SingularityError(
            f"point {point} is {r:.3g} m from the coil, inside the "
            f"{NEAR_FIELD_RADII:g}a near-field cutoff"
        )
    moment = coil.moment_magnitude * axis / np.linalg.norm(axis)
    return kernels.dipole_fields(origin[None, :], moment[None, :], point[None, :])[0, 0]


def transmitter_fields(tx: TransmitterPose, point) -> np.ndarray:
    """(3, 3) array: row i is the field of transmitter axis i at ``point``."""
    point = as_vec3(point, "point")
    r = float(np.linalg.norm(point - tx.origin))
    if r < tx.min_range:
        raise SingularityError(
            f"point {point} is {r:.3g} m from transmitter at {tx.origin}, "
            f"inside the near-field cutoff {tx.min_range:.3g} m"
        )
    sources = np.repeat(tx.origin[None, :], 3, axis=0)
    return kernels.dipole_fields(sources, tx.moments, point[None, :])[0]


def coupling_from_fields(fields, rx: ReceiverPose, angular_freq: float) -> np.ndarray:
    """Project per-axis field vectors onto receiver coils (Faraday amplitude)."""
    return angular_freq * rx.sensitivity * (np.asarray(fields) @ rx.axes.T)


def coupling_matrix(tx: TransmitterPose, rx: ReceiverPose,
                    angular_freq: float = DEFAULT_OMEGA) -> np.ndarray:
    """Signed induced-voltage amplitudes; rows = transmitter axes, cols = receiver coils."""
    return coupling_from_fields(transmitter_fields(tx, rx.origin), rx, angular_freq)


def axis_magnitude(row) -> float:
    """Euclidean norm of one transmitter axis' three receiver readings."""
    row = np.asarray(row, dtype=np.float64)
    if not np.all(np.isfinite(row)):
        raise DomainError("axis row must be finite")
    return float(np.linalg.norm(row))
