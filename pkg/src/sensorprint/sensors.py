"""Parametric simulator of analog temperature-sensor circuits.

Each sensor model is a damped second-order resonator driven through its
supply pin: a sinusoidal challenge on the supply rail shows up at the output
scaled by the resonator's magnitude response, on top of the sensor's
temperature-dependent DC level. Manufacturing spread is modelled by drawing
per-instance circuit parameters around the model's nominal values.
"""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .errors import ModelFileError, OutOfOperatingRange
from .waveform import (
    ADC_BITS,
    ADC_SAMPLE_RATE,
    DAC_BITS,
    DAC_SAMPLE_RATE,
    ConverterSpec,
    Waveform,
    quantize_array,
    synthesize_sine,
)

SeedLike = Union[int, Sequence[int]]

# Draw order for process variation; one standard normal per entry, in order.
PARAM_ORDER = ("resonant_freq", "damping", "gain", "output_offset")

DEFAULT_VARIATION = 0.01
DEFAULT_AMPLITUDE = 0.3
DEFAULT_N_PERIODS = 16
DEFAULT_SAMPLES_PER_PERIOD = 32
DEFAULT_TEMP_JITTER = 0.25

# Function-generator output window.
DAC_V_MIN, DAC_V_MAX = 0.0, 10.0


@dataclass(frozen=True)
class CircuitParams:
    """Resonator parameters of one circuit.

    ``output_offset`` is the circuit's DC output at 25 degC.
    """

    resonant_freq: float
    damping: float
    gain: float
    output_offset: float

    def __post_init__(self):
        if not (self.resonant_freq > 0 and self.damping > 0 and self.gain > 0):
            raise ValueError(f"resonant_freq, damping and gain must be positive: {self}")

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in PARAM_ORDER}


@dataclass(frozen=True)
class ShutdownBand:
    """Output collapses to 0 V for challenges in ``[f_lo, f_hi]``."""

    f_lo: float
    f_hi: float

    def __post_init__(self):
        if not 0 < self.f_lo <= self.f_hi:
            raise ValueError(f"need 0 < f_lo <= f_hi, got {self.f_lo}, {self.f_hi}")


@dataclass(frozen=True)
class FlatHighBand:
    """Above ``f_knee`` the gain is frozen at its value at the knee."""

    f_knee: float


@dataclass(frozen=True)
class SaturatingVariance:
    """Captured output variance never exceeds ``cap`` (V^2)."""

    cap: float


Quirk = Union[None, ShutdownBand, FlatHighBand, SaturatingVariance]


@dataclass(frozen=True)
class SensorModel:
    name: str
    supply_min: float
    supply_max: float
    temp_min: float
    temp_max: float
    dc_output_at_25C: float
    temp_slope: float
    base_params: CircuitParams
    variation: Mapping[str, float] = field(default_factory=dict)
    noise_rms: float = 0.0
    quirk: Quirk = None
    adc_range: tuple[float, float] = (0.0, 3.3)

    def __post_init__(self):
        if not self.supply_min < self.supply_max:
            raise ValueError(f"{self.name}: supply_min must be below supply_max")
        if not self.temp_min < self.temp_max:
            raise ValueError(f"{self.name}: temp_min must be below temp_max")
        if not math.isclose(self.base_params.output_offset, self.dc_output_at_25C, abs_tol=1e-12):
            raise ValueError(f"{self.name}: base_params.output_offset must equal dc_output_at_25C")
        var = {k: DEFAULT_VARIATION for k in PARAM_ORDER}
        for k, v in dict(self.variation).items():
            if k not in PARAM_ORDER:
                raise ValueError(f"{self.name}: unknown variation key {k!r}")
            if v < 0:
                raise ValueError(f"{self.name}: variation for {k} must be >= 0")
            var[k] = float(v)
        object.__setattr__(self, "variation", var)
        if self.noise_rms < 0:
            raise ValueError(f"{self.name}: noise_rms must be >= 0")
        lo, hi = self.adc_range
        object.__setattr__(self, "adc_range", (float(lo), float(hi)))
        ConverterSpec(ADC_BITS, lo, hi, ADC_SAMPLE_RATE)

    def adc(self, sample_rate: float = ADC_SAMPLE_RATE) -> ConverterSpec:
        return ConverterSpec(ADC_BITS, self.adc_range[0], self.adc_range[1], sample_rate)

    def with_overrides(self, **changes) -> "SensorModel":
        """Copy with fields replaced; ``dc_output_at_25C`` keeps ``base_params`` in sync."""
        if "dc_output_at_25C" in changes and "base_params" not in changes:
            changes["base_params"] = replace(
                self.base_params, output_offset=changes["dc_output_at_25C"]
            )
        return replace(self, **changes)

    def noiseless(self) -> "SensorModel":
        return self.with_overrides(noise_rms=0.0)

    def without_variation(self) -> "SensorModel":
        return self.with_overrides(variation={k: 0.0 for k in PARAM_ORDER})


@dataclass(frozen=True)
class SensorInstance:
    instance_id: str
    model: SensorModel
    params: CircuitParams
    seed: int


@dataclass(frozen=True)
class Environment:
    temperature: float = 25.0
    temp_jitter_std: float = DEFAULT_TEMP_JITTER

    def __post_init__(self):
        if self.temp_jitter_std < 0:
            raise ValueError("temp_jitter_std must be >= 0")

    def check(self, model: SensorModel) -> None:
        if not model.temp_min <= self.temperature <= model.temp_max:
            raise OutOfOperatingRange(
                f"{self.temperature:g} degC outside {model.name} range "
                f"[{model.temp_min:g}, {model.temp_max:g}] degC"
            )


@dataclass(frozen=True)
class Challenge:
    frequency: float
    amplitude: float = DEFAULT_AMPLITUDE
    offset: float = 3.3
    n_periods: int = DEFAULT_N_PERIODS

    def at(self, frequency: float) -> "Challenge":
        return Challenge(float(frequency), self.amplitude, self.offset, self.n_periods)


def default_challenge(model: SensorModel, frequency: float = 1000.0) -> Challenge:
    """Stimulus riding on the model's minimum supply voltage."""
    return Challenge(
        frequency=float(frequency),
        amplitude=DEFAULT_AMPLITUDE,
        offset=model.supply_min,
        n_periods=DEFAULT_N_PERIODS,
    )


def instantiate(model: SensorModel, seed: int) -> SensorInstance:
    """Draw a concrete circuit from ``model``.

    Parameters are perturbed as ``base * (1 + variation * z)`` with one
    standard normal ``z`` per parameter from ``numpy.random.default_rng(seed)``,
    drawn in :data:`PARAM_ORDER`. Draws happen even for zero variation so the
    stream position never depends on the model.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(len(PARAM_ORDER))
    base = model.base_params.as_dict()
    drawn = {
        name: base[name] * (1.0 + model.variation[name] * z[i]) if model.variation[name] else base[name]
        for i, name in enumerate(PARAM_ORDER)
    }
    return SensorInstance(
        instance_id=f"{model.name}-{seed}",
        model=model,
        params=CircuitParams(**drawn),
        seed=int(seed),
    )


def magnitude_response(params: CircuitParams, frequency) -> np.ndarray | float:
    """Gain of a damped second-order resonator at ``frequency``."""
    r = np.asarray(frequency, dtype=np.float64) / params.resonant_freq
    h = params.gain / np.sqrt((1.0 - r * r) ** 2 + (2.0 * params.damping * r) ** 2)
    return float(h) if h.ndim == 0 else h


def effective_gain(instance: SensorInstance, frequency: float) -> float:
    quirk = instance.model.quirk
    if isinstance(quirk, FlatHighBand) and frequency > quirk.f_knee:
        frequency = quirk.f_knee
    return magnitude_response(instance.params, frequency)


def respond(
    instance: SensorInstance,
    challenge: Challenge,
    env: Environment,
    measurement_seed: SeedLike,
    samples_per_period: int = DEFAULT_SAMPLES_PER_PERIOD,
) -> Waveform:
    """Simulate one captured output trace for ``challenge``.

    The generator waveform (16-bit DAC) is sampled at ``samples_per_period``
    points per challenge period, passed through the resonator, offset by the
    temperature-dependent DC level, disturbed by white noise and finally
    captured by the 8-bit ADC over the model's ``adc_range``.

    Randomness comes from ``numpy.random.default_rng(measurement_seed)``:
    first the temperature jitter (one normal), then the noise vector.
    """
    model = instance.model
    env.check(model)
    if challenge.offset - abs(challenge.amplitude) < 0 or challenge.offset + abs(challenge.amplitude) > model.supply_max:
        raise OutOfOperatingRange(
            f"challenge swings outside [0, {model.supply_max:g}] V supply for {model.name}"
        )
    f = float(challenge.frequency)
    rate = samples_per_period * f
    if rate > ADC_SAMPLE_RATE:
        raise OutOfOperatingRange(f"{rate:g} Sa/s exceeds the ADC rate")
    stimulus = _stimulus(f, challenge.amplitude, challenge.offset, challenge.n_periods, rate)
    adc = model.adc(rate)

    rng = np.random.default_rng(measurement_seed)
    t_eff = env.temperature + rng.normal(0.0, env.temp_jitter_std)
    noise = rng.normal(0.0, model.noise_rms, stimulus.samples.size)

    dc = instance.params.output_offset + model.temp_slope * (t_eff - 25.0)
    out = dc + effective_gain(instance, f) * (stimulus.samples - challenge.offset) + noise

    quirk = model.quirk
    if isinstance(quirk, ShutdownBand) and quirk.f_lo <= f <= quirk.f_hi:
        out = np.zeros_like(out)
    elif isinstance(quirk, SaturatingVariance):
        out = _cap_variance(out, quirk.cap, adc.step)
    return Waveform(quantize_array(out, adc), rate)


@functools.lru_cache(maxsize=8192)
def _stimulus(frequency: float, amplitude: float, offset: float, n_periods: int, rate: float) -> Waveform:
    dac = ConverterSpec(DAC_BITS, DAC_V_MIN, DAC_V_MAX, min(rate, DAC_SAMPLE_RATE))
    return synthesize_sine(frequency, amplitude, offset, dac, n_periods)


def _cap_variance(x: np.ndarray, cap: float, code_step: float) -> np.ndarray:
    # Quantization can add up to half a code step of spread, so the analog
    # standard deviation is limited to sqrt(cap) - step/2; that bound carries
    # through the ADC (clamping never widens the spread).
    mu = float(np.mean(x))
    d = x - mu
    var = float(np.mean(d * d))
    limit = math.sqrt(cap) - code_step / 2.0
    if limit <= 0.0:
        return np.full_like(x, mu)
    if var > limit * limit:
        return mu + d * (limit / math.sqrt(var))
    return x


class Responder:
    """Callable measurement front end for one sensor instance.

    Every call uses a fresh measurement seed ``(seed, call_index)``, so a
    responder replays the same sequence of captures when rebuilt with the
    same seed.
    """

    def __init__(self, instance: SensorInstance, seed: SeedLike = 0, samples_per_period: int = DEFAULT_SAMPLES_PER_PERIOD):
        self.instance = instance
        self._seed = tuple(np.atleast_1d(np.asarray(seed, dtype=np.int64)).tolist())
        self._calls = 0
        self.samples_per_period = samples_per_period

    def __call__(self, challenge: Challenge, env: Environment) -> Waveform:
        seed = self._seed + (self._calls,)
        self._calls += 1
        return respond(self.instance, challenge, env, seed, self.samples_per_period)


RespondFn = Callable[[Challenge, Environment], Waveform]


# -- presets ----------------------------------------------------------------

def _model(name, supply, temps, dc, slope, f0, zeta, gain, variation, noise, quirk, adc_range):
    return SensorModel(
        name=name,
        supply_min=supply[0],
        supply_max=supply[1],
        temp_min=temps[0],
        temp_max=temps[1],
        dc_output_at_25C=dc,
        temp_slope=slope,
        base_params=CircuitParams(f0, zeta, gain, dc),
        variation=variation,
        noise_rms=noise,
        quirk=quirk,
        adc_range=adc_range,
    )


def builtin_presets() -> list[SensorModel]:
    """The four temperature-sensor presets.

    Supply and temperature ranges follow the datasheet figures of the TMP36,
    LM61, MCP9700 and LMT85. Resonator parameters, spreads, noise, quirks
    and ADC windows are calibration values chosen so the four curves are
    clearly distinct.
    """
    return [
        _model(
            "TMP36", (2.7, 5.5), (-40.0, 125.0), 0.750, 0.010,
            f0=150e3, zeta=0.25, gain=0.05,
            variation={"resonant_freq": 0.01, "damping": 0.01, "gain": 0.01, "output_offset": 0.01},
            noise=0.02, quirk=SaturatingVariance(1e-6), adc_range=(0.6, 0.9),
        ),
        _model(
            "LM61", (2.7, 10.0), (-30.0, 100.0), 0.850, 0.010,
            f0=350e3, zeta=0.05, gain=0.25,
            variation={"resonant_freq": 0.05, "damping": 0.1, "gain": 0.05, "output_offset": 0.003},
            noise=0.12, quirk=None, adc_range=(0.0, 2.0),
        ),
        _model(
            "MCP9700", (2.3, 5.5), (-40.0, 150.0), 0.600, 0.010,
            f0=60e3, zeta=0.05, gain=0.2,
            variation={"resonant_freq": 0.05, "damping": 0.1, "gain": 0.05, "output_offset": 0.004},
            noise=0.12, quirk=ShutdownBand(90e3, 110e3), adc_range=(0.0, 2.0),
        ),
        _model(
            "LMT85", (1.8, 5.5), (-50.0, 150.0), 1.575, -0.0082,
            f0=120e3, zeta=0.5, gain=0.6,
            variation={"resonant_freq": 0.005, "damping": 0.005, "gain": 0.002, "output_offset": 0.001},
            noise=0.12, quirk=FlatHighBand(200e3), adc_range=(0.0, 3.3),
        ),
    ]


def get_preset(name: str) -> SensorModel:
    for m in builtin_presets():
        if m.name.lower() == name.lower():
            return m
    raise KeyError(f"no preset named {name!r}; known: {[m.name for m in builtin_presets()]}")


# -- model files ------------------------------------------------------------
#
#   # comment
#   name = TMP36
#   supply_min = 2.7
#   ...
#   variation.gain = 0.01
#   quirk = saturating_variance 1e-06
#
# A new ``name`` line starts the next model.

_FLOAT_KEYS = (
    "supply_min", "supply_max", "temp_min", "temp_max", "dc_output_at_25C",
    "temp_slope", "resonant_freq", "damping", "gain", "noise_rms",
    "adc_v_min", "adc_v_max",
)
_REQUIRED = ("supply_min", "supply_max", "temp_min", "temp_max", "dc_output_at_25C",
             "temp_slope", "resonant_freq", "damping", "gain")


def _quirk_to_text(q: Quirk) -> str:
    if q is None:
        return "none"
    if isinstance(q, ShutdownBand):
        return f"shutdown_band {q.f_lo!r} {q.f_hi!r}"
    if isinstance(q, FlatHighBand):
        return f"flat_high_band {q.f_knee!r}"
    return f"saturating_variance {q.cap!r}"


def _quirk_from_text(text: str) -> Quirk:
    kind, *args = text.split()
    vals = [float(a) for a in args]
    table = {"none": (type(None), 0), "shutdown_band": (ShutdownBand, 2),
             "flat_high_band": (FlatHighBand, 1), "saturating_variance": (SaturatingVariance, 1)}
    if kind not in table or len(vals) != table[kind][1]:
        raise ValueError(f"bad quirk {text!r}")
    return None if kind == "none" else table[kind][0](*vals)


def dump_models(models: Sequence[SensorModel]) -> str:
    out = ["# sensorprint model file", "version = 1"]
    for m in models:
        out += [
            "",
            f"name = {m.name}",
            f"supply_min = {m.supply_min!r}",
            f"supply_max = {m.supply_max!r}",
            f"temp_min = {m.temp_min!r}",
            f"temp_max = {m.temp_max!r}",
            f"dc_output_at_25C = {m.dc_output_at_25C!r}",
            f"temp_slope = {m.temp_slope!r}",
            f"resonant_freq = {m.base_params.resonant_freq!r}",
            f"damping = {m.base_params.damping!r}",
            f"gain = {m.base_params.gain!r}",
        ]
        out += [f"variation.{k} = {m.variation[k]!r}" for k in PARAM_ORDER]
        out += [
            f"noise_rms = {m.noise_rms!r}",
            f"quirk = {_quirk_to_text(m.quirk)}",
            f"adc_v_min = {m.adc_range[0]!r}",
            f"adc_v_max = {m.adc_range[1]!r}",
        ]
    return "\n".join(out) + "\n"


def parse_models(text: str, source: str = "<string>") -> list[SensorModel]:
    blocks: list[tuple[int, dict[str, str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ModelFileError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "version":
            if value != "1":
                raise ModelFileError(f"{source}:{lineno}: unsupported version {value}")
            continue
        if key == "name":
            blocks.append((lineno, {"name": value}))
            continue
        if not blocks:
            raise ModelFileError(f"{source}:{lineno}: '{key}' before any 'name' line")
        if key in blocks[-1][1]:
            raise ModelFileError(f"{source}:{lineno}: duplicate key {key!r}")
        blocks[-1][1][key] = value
    return [_model_from_block(b, source, ln) for ln, b in blocks]


def _model_from_block(b: dict[str, str], source: str, lineno: int) -> SensorModel:
    try:
        missing = [k for k in _REQUIRED if k not in b]
        if missing:
            raise ValueError(f"missing keys {missing}")
        unknown = set(b) - set(_FLOAT_KEYS) - {"name", "quirk"} - {f"variation.{k}" for k in PARAM_ORDER}
        if unknown:
            raise ValueError(f"unknown keys {sorted(unknown)}")
        num = {k: float(b[k]) for k in _FLOAT_KEYS if k in b}
        variation = {k: float(b[f"variation.{k}"]) for k in PARAM_ORDER if f"variation.{k}" in b}
        return SensorModel(
            name=b["name"],
            supply_min=num["supply_min"],
            supply_max=num["supply_max"],
            temp_min=num["temp_min"],
            temp_max=num["temp_max"],
            dc_output_at_25C=num["dc_output_at_25C"],
            temp_slope=num["temp_slope"],
            base_params=CircuitParams(num["resonant_freq"], num["damping"], num["gain"], num["dc_output_at_25C"]),
            variation=variation,
            noise_rms=num.get("noise_rms", 0.0),
            quirk=_quirk_from_text(b.get("quirk", "none")),
            adc_range=(num.get("adc_v_min", 0.0), num.get("adc_v_max", 3.3)),
        )
    except (ValueError, TypeError) as exc:
        raise ModelFileError(f"{source}:{lineno}: model {b.get('name')!r}: {exc}") from None


def save_models(path: str | os.PathLike, models: Sequence[SensorModel]) -> None:
    Path(path).write_text(dump_models(models), encoding="utf-8")


def load_models(path: str | os.PathLike) -> list[SensorModel]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFileError(f"{path}: {exc}") from exc
    return parse_models(text, str(path))
