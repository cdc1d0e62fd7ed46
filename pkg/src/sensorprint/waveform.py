"""Waveforms, converter models and the two response features (RMS, variance).

Feature sums go through numpy's pairwise reduction, which keeps the
accumulated rounding error at O(log n) ulps; a one-million-sample window is
therefore stable far below 1e-12 relative.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CaptureFormatError,
    EmptyWaveform,
    InsufficientSampling,
    NyquistViolation,
    RangeViolation,
)

MIN_SAMPLES_PER_PERIOD = 8


@dataclass(frozen=True)
class Waveform:
    """A uniformly sampled voltage trace.

    ``samples`` is stored as a read-only float64 array so a waveform can be
    shared between threads without copying.
    """

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate!r}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("waveform samples must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def scaled(self, k: float) -> "Waveform":
        return Waveform(self.samples * k, self.sample_rate)


@dataclass(frozen=True)
class ConverterSpec:
    """Resolution, voltage window and rate of a DAC or ADC."""

    bits: int
    v_min: float
    v_max: float
    sample_rate: float

    def __post_init__(self):
        if isinstance(self.bits, bool) or int(self.bits) != self.bits or not 1 <= self.bits <= 24:
            raise ValueError(f"bits must be an integer in [1, 24], got {self.bits!r}")
        if not self.v_min < self.v_max:
            raise ValueError(f"need v_min < v_max, got [{self.v_min}, {self.v_max}]")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate!r}")
        object.__setattr__(self, "bits", int(self.bits))

    @property
    def max_code(self) -> int:
        return (1 << self.bits) - 1

    @property
    def step(self) -> float:
        """Voltage difference between adjacent codes."""
        return (self.v_max - self.v_min) / self.max_code

    def with_rate(self, sample_rate: float) -> "ConverterSpec":
        return ConverterSpec(self.bits, self.v_min, self.v_max, sample_rate)


# Equipment used for the reference measurements: 16-bit / 125 MSa/s generator,
# 8-bit / 1 GSa/s oscilloscope. Voltage windows are per-setup choices.
DAC_BITS = 16
DAC_SAMPLE_RATE = 125e6
ADC_BITS = 8
ADC_SAMPLE_RATE = 1e9


@dataclass(frozen=True)
class ResponseStats:
    rms: float
    variance: float
    n_samples: int


def quantize_array(x: np.ndarray, spec: ConverterSpec) -> np.ndarray:
    """Clamp, round half away from zero to a code, and map back to volts."""
    span = spec.v_max - spec.v_min
    clamped = np.clip(np.asarray(x, dtype=np.float64), spec.v_min, spec.v_max)
    scaled = (clamped - spec.v_min) / span * spec.max_code
    # scaled >= 0 after clamping, so floor(x + 0.5) is round-half-away-from-zero
    codes = np.floor(scaled + 0.5)
    return spec.v_min + codes / spec.max_code * span


def quantize(w: Waveform, spec: ConverterSpec) -> Waveform:
    return Waveform(quantize_array(w.samples, spec), w.sample_rate)


def synthesize_sine(
    frequency: float,
    amplitude: float,
    offset: float,
    spec: ConverterSpec,
    n_periods: int = 16,
) -> Waveform:
    """Sample ``offset + amplitude*sin(2*pi*f*t)`` over whole periods and quantize it.

    Raises:
        NyquistViolation: ``frequency`` is above half the converter rate.
        InsufficientSampling: fewer than 8 samples would land in one period.
        RangeViolation: the waveform leaves the converter's voltage window.
    """
    if not frequency > 0:
        raise ValueError(f"frequency must be positive, got {frequency!r}")
    if int(n_periods) != n_periods or n_periods < 1:
        raise ValueError(f"n_periods must be a positive integer, got {n_periods!r}")
    if frequency > spec.sample_rate / 2:
        raise NyquistViolation(
            f"{frequency:g} Hz exceeds the Nyquist limit {spec.sample_rate / 2:g} Hz"
        )
    if spec.sample_rate / frequency < MIN_SAMPLES_PER_PERIOD:
        raise InsufficientSampling(
            f"{spec.sample_rate / frequency:g} samples per period at {frequency:g} Hz; "
            f"need at least {MIN_SAMPLES_PER_PERIOD}"
        )
    lo, hi = offset - abs(amplitude), offset + abs(amplitude)
    if lo < spec.v_min or hi > spec.v_max:
        raise RangeViolation(
            f"waveform spans [{lo:g}, {hi:g}] V, converter window is [{spec.v_min:g}, {spec.v_max:g}] V"
        )
    n = int(round(n_periods * spec.sample_rate / frequency))
    t = np.arange(n, dtype=np.float64) / spec.sample_rate
    x = offset + amplitude * np.sin(2.0 * np.pi * frequency * t)
    return Waveform(quantize_array(x, spec), spec.sample_rate)


def _nonempty(w: Waveform) -> np.ndarray:
    if w.samples.size == 0:
        raise EmptyWaveform("feature computation needs at least one sample")
    return w.samples


def _avg(x: np.ndarray) -> float:
    # add.reduce sums pairwise, like np.mean, without its wrapper overhead
    return float(np.add.reduce(x)) / x.size


def mean(w: Waveform) -> float:
    return _avg(_nonempty(w))


def rms(w: Waveform) -> float:
    """Effective value: square root of the mean squared sample."""
    x = _nonempty(w)
    return math.sqrt(_avg(x * x))


def variance(w: Waveform) -> float:
    """Population variance (divides by n)."""
    x = _nonempty(w)
    # shifting by the first sample makes constant inputs exactly zero
    s = x - x[0]
    d = s - _avg(s)
    return _avg(d * d)


def response_stats(w: Waveform) -> ResponseStats:
    return ResponseStats(rms=rms(w), variance=variance(w), n_samples=len(w))


# -- capture files ----------------------------------------------------------

CAPTURE_HEADER = "sample_rate_hz="


def write_capture(path: str | os.PathLike, w: Waveform) -> None:
    lines = [f"{CAPTURE_HEADER}{w.sample_rate!r}"]
    lines.extend(repr(float(v)) for v in w.samples)
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_capture(path: str | os.PathLike) -> Waveform:
    """Load a capture CSV: a ``sample_rate_hz=`` header, then one voltage per line."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CaptureFormatError(f"{path}: {exc}") from exc
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith(CAPTURE_HEADER):
        raise CaptureFormatError(f"{path}: first line must be '{CAPTURE_HEADER}<real>'")
    try:
        rate = float(lines[0][len(CAPTURE_HEADER):])
    except ValueError as exc:
        raise CaptureFormatError(f"{path}: bad sample rate: {exc}") from exc
    values = []
    for lineno, ln in enumerate(lines[1:], start=2):
        try:
            values.append(float(ln.split(",")[0]))
        except ValueError:
            raise CaptureFormatError(f"{path}:{lineno}: not a voltage: {ln!r}") from None
    if not values:
        raise CaptureFormatError(f"{path}: no samples")
    try:
        return Waveform(np.array(values), rate)
    except ValueError as exc:
        raise CaptureFormatError(f"{path}: {exc}") from exc


__all__ = [
    "ADC_BITS",
    "ADC_SAMPLE_RATE",
    "DAC_BITS",
    "DAC_SAMPLE_RATE",
    "ConverterSpec",
    "ResponseStats",
    "Waveform",
    "mean",
    "quantize",
    "quantize_array",
    "read_capture",
    "response_stats",
    "rms",
    "synthesize_sine",
    "variance",
    "write_capture",
]
