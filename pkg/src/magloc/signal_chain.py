"""Receiver analog chain in the amplitude domain.

induced amplitude -> bandpass gain -> additive noise -> log amplifier -> ADC,
then the log map is inverted to report an input-referred magnitude. Only
steady-state tone amplitudes are modelled; there is no time-domain state.

The log-amp and filter defaults are not hardware values. They were chosen to
give the reference scenarios about 5 decades of usable range at 16 bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

# Frozen by matching the reference single-transmitter scenario's 0-3 m
# distance RMSE; see tests/test_acceptance.py::test_noise_calibration_target.
DEFAULT_NOISE_RMS = 5.0e-7


@dataclass(frozen=True)
class FilterSpec:
    """Maximally flat bandpass described by its asymptotic slopes.

    ``bandwidth`` is the -3 dB width; it defaults to ``center_freq`` which puts
    the 40 dB/dec asymptote within a fraction of a dB of the textbook line one
    decade out.
    """

    center_freq: float = 20_000.0
    passband_gain: float = 10.0
    rolloff: float = 40.0
    order: int = 4
    bandwidth: float | None = None

    def __post_init__(self):
        if not self.center_freq > 0:
            raise DomainError("center_freq must be > 0")
        if not self.passband_gain > 0:
            raise DomainError("passband_gain must be > 0")
        if not self.rolloff > 0:
            raise DomainError("rolloff must be > 0")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise DomainError("bandwidth must be > 0")

    @property
    def effective_bandwidth(self) -> float:
        return self.center_freq if self.bandwidth is None else self.bandwidth


@dataclass(frozen=True)
class LogAmpSpec:
    slope: float = 0.65
    intercept_ref: float = 1e-5
    output_clip: float = 3.3

    def __post_init__(self):
        if not self.slope > 0:
            raise DomainError("log-amp slope must be > 0")
        if not self.intercept_ref > 0:
            raise DomainError("log-amp intercept_ref must be > 0")
        if not self.output_clip > 0:
            raise DomainError("log-amp output_clip must be > 0")


@dataclass(frozen=True)
class NoiseSpec:
    rms: float = DEFAULT_NOISE_RMS
    seed: int = 0

    def __post_init__(self):
        if not self.rms >= 0:
            raise DomainError("noise rms must be >= 0")


@dataclass(frozen=True)
class AdcSpec:
    bits: int = 16
    full_scale: float = 3.3

    def __post_init__(self):
        if not 8 <= self.bits <= 24:
            raise DomainError(f"ADC bits must be in [8, 24], got {self.bits}")
        if not self.full_scale > 0:
            raise DomainError("ADC full_scale must be > 0")

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1

    @property
    def lsb(self) -> float:
        return self.full_scale / self.max_code


@dataclass(frozen=True)
class SignalChain:
    filter: FilterSpec = field(default_factory=FilterSpec)
    log_amp: LogAmpSpec = field(default_factory=LogAmpSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    adc: AdcSpec = field(default_factory=AdcSpec)

    def floor(self, freq: float) -> float:
        """Smallest input-referred magnitude the chain can report (code 0)."""
        return self.log_amp.intercept_ref / bandpass_gain(self.filter, freq)

    def sense(self, v_induced, freq, rng=None):
        return sense(self, v_induced, freq, rng)


@dataclass(frozen=True)
class SenseResult:
    code: np.ndarray | int
    magnitude: np.ndarray | float


def bandpass_gain(filt: FilterSpec, freq: float) -> float:
    """Linear magnitude response of the bandpass at ``freq`` Hz."""
    if not freq > 0:
        raise DomainError(f"frequency must be > 0, got {freq}")
    f0 = filt.center_freq
    x = (freq / f0 - f0 / freq) * (f0 / filt.effective_bandwidth)
    n = filt.rolloff / 20.0
    return filt.passband_gain / math.sqrt(1.0 + abs(x) ** (2.0 * n))


def log_amplify(amp: LogAmpSpec, v_in):
    """``slope * log10(v_in / intercept_ref)`` clipped to +/- ``output_clip``."""
    v = np.asarray(v_in, dtype=np.float64)
    if np.any(~(v > 0)):
        raise DomainError("log amplifier input must be > 0")
    out = np.clip(amp.slope * np.log10(v / amp.intercept_ref), -amp.output_clip, amp.output_clip)
    return float(out) if out.ndim == 0 else out


def quantize(adc: AdcSpec, v):
    """Unipolar ADC: round to nearest code, saturating at both rails."""
    codes = np.rint(np.asarray(v, dtype=np.float64) / adc.lsb)
    codes = np.clip(codes, 0, adc.max_code).astype(np.int64)
    return int(codes) if codes.ndim == 0 else codes


def sense(chain: SignalChain, v_induced, freq: float, rng=None) -> SenseResult:
    """Pass induced amplitudes through the chain; scalars or arrays.

    One standard-normal draw is taken per amplitude whenever ``rng`` is given,
    even if the noise rms is zero, so the stream position does not depend on
    the noise level.
    """
    v = np.asarray(v_induced, dtype=np.float64)
    if np.any(~(v >= 0)):
        raise DomainError("induced amplitude must be >= 0")
    gain = bandpass_gain(chain.filter, freq)
    out = v * gain
    if rng is not None:
        draw = rng.standard_normal(v.shape)
        out = out + chain.noise.rms * gain * draw
    amp = chain.log_amp
    positive = out > amp.intercept_ref
    logv = np.zeros_like(out)
    logv[positive] = log_amplify(amp, out[positive]) if np.any(positive) else 0.0
    codes = quantize(chain.adc, logv)
    recovered = amp.intercept_ref * np.power(10.0, np.asarray(codes) * chain.adc.lsb / amp.slope) / gain
    if v.ndim == 0:
        return SenseResult(int(codes), float(recovered))
    return SenseResult(codes, recovered)
