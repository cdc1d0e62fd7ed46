"""Fingerprints, challenge scheduling and RMSE matching."""

from __future__ import annotations

import decimal
import hashlib
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorruptFingerprint, FrequencyNotInGrid, InvalidP
from .sensors import Challenge, Environment, RespondFn
from .waveform import response_stats

DEFAULT_THETA = 0.01
DEFAULT_P = 10
DEFAULT_REPEATS = 3
FORMAT_VERSION = 1


def format_hz(f: float) -> str:
    f = float(f)
    return str(int(f)) if f.is_integer() and abs(f) < 2**53 else repr(f)


@dataclass(frozen=True)
class FrequencyGrid:
    """Evenly spaced challenge frequencies ``f_min, f_min + step, ..., f_max``."""

    f_min: float = 1e3
    f_max: float = 1e6
    step: float = 1e3

    def __post_init__(self):
        for name in ("f_min", "f_max", "step"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.f_min > 0 and self.step > 0 and self.f_max >= self.f_min):
            raise ValueError(f"invalid grid {self}")
        n = (self.f_max - self.f_min) / self.step
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"(f_max - f_min) must be a multiple of step: {self}")

    @property
    def size(self) -> int:
        return int(round((self.f_max - self.f_min) / self.step)) + 1

    def __len__(self) -> int:
        return self.size

    def frequencies(self) -> np.ndarray:
        return self.f_min + np.arange(self.size, dtype=np.float64) * self.step

    def frequency(self, index: int) -> float:
        return self.f_min + index * self.step

    def index_of(self, frequency: float) -> int:
        k = (float(frequency) - self.f_min) / self.step
        i = int(round(k))
        if not (0 <= i < self.size) or abs(k - i) > 1e-9:
            raise FrequencyNotInGrid(f"{frequency!r} Hz is not on grid {self}")
        return i

    def __str__(self) -> str:
        return f"{format_hz(self.f_min)}:{format_hz(self.f_max)}:{format_hz(self.step)}"

    @classmethod
    def parse(cls, text: str) -> "FrequencyGrid":
        parts = text.strip().split(":")
        if len(parts) != 3:
            raise ValueError(f"grid must be '<f_min>:<f_max>:<step>', got {text!r}")
        return cls(*(float(p) for p in parts))


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FullFingerprint:
    """Per-frequency mean RMS, mean variance and RMS spread over the bootstrap repeats."""

    device_id: str
    grid: FrequencyGrid
    mean_rms: np.ndarray
    mean_var: np.ndarray
    std_rms: np.ndarray
    n_repeats: int
    bootstrap_temperature: float

    def __post_init__(self):
        for name in ("mean_rms", "mean_var", "std_rms"):
            arr = _frozen(getattr(self, name))
            if arr.size != self.grid.size:
                raise ValueError(f"{name} has {arr.size} entries, grid has {self.grid.size}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        if np.any(self.std_rms < 0):
            raise ValueError("std_rms must be non-negative")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be >= 1")

    @property
    def frequencies(self) -> np.ndarray:
        return self.grid.frequencies()

    def rms_at(self, frequencies: Iterable[float]) -> np.ndarray:
        return self.mean_rms[[self.grid.index_of(f) for f in frequencies]]

    def __eq__(self, other):
        if not isinstance(other, FullFingerprint):
            return NotImplemented
        return (
            self.device_id == other.device_id
            and self.grid == other.grid
            and self.n_repeats == other.n_repeats
            and self.bootstrap_temperature == other.bootstrap_temperature
            and np.array_equal(self.mean_rms, other.mean_rms)
            and np.array_equal(self.mean_var, other.mean_var)
            and np.array_equal(self.std_rms, other.std_rms)
        )


@dataclass(frozen=True)
class PartialFingerprint:
    device_id: str
    points: tuple[tuple[float, float], ...]
    timestamp: int = 0

    def __post_init__(self):
        pts = tuple((float(f), float(x)) for f, x in self.points)
        if not pts:
            raise InvalidP("a partial fingerprint needs at least one point")
        if len({f for f, _ in pts}) != len(pts):
            raise ValueError("partial fingerprint frequencies must be distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "timestamp", int(self.timestamp))

    @property
    def frequencies(self) -> list[float]:
        return [f for f, _ in self.points]

    @property
    def values(self) -> np.ndarray:
        return np.array([x for _, x in self.points])

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class MatchResult:
    epsilon: float
    theta: float
    accepted: bool
    per_point_residuals: tuple[float, ...]


def rmse(expected: Sequence[float] | np.ndarray, observed: Sequence[float] | np.ndarray) -> float:
    """Root-mean-square deviation between two equally long response vectors."""
    a = np.asarray(expected, dtype=np.float64)
    b = np.asarray(observed, dtype=np.float64)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("rmse needs two non-empty vectors of equal length")
    d = b - a
    return math.sqrt(float(np.mean(d * d)))


def match(full: FullFingerprint, partial: PartialFingerprint, theta: float = DEFAULT_THETA) -> MatchResult:
    """Compare a partial fingerprint with the enrolled full fingerprint.

    The device ids are deliberately not compared; matching someone else's
    fingerprint is exactly what an impostor attempt does.
    """
    expected = full.rms_at(partial.frequencies)
    observed = partial.values
    eps = rmse(expected, observed)
    return MatchResult(
        epsilon=eps,
        theta=float(theta),
        accepted=eps <= theta,
        per_point_residuals=tuple((observed - expected).tolist()),
    )


def bootstrap(
    respond_fn: RespondFn,
    grid: FrequencyGrid,
    n_repeats: int = DEFAULT_REPEATS,
    challenge_template: Challenge | None = None,
    env: Environment | None = None,
    device_id: str = "",
) -> FullFingerprint:
    """Sweep the whole grid, measuring each frequency ``n_repeats`` times.

    The RMS spread is the population standard deviation of the repeats.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    challenge_template = challenge_template or Challenge(frequency=grid.f_min)
    env = env or Environment()
    freqs = grid.frequencies()
    rms_vals = np.empty((freqs.size, n_repeats))
    var_vals = np.empty((freqs.size, n_repeats))
    for i, f in enumerate(freqs):
        ch = challenge_template.at(f)
        for k in range(n_repeats):
            st = response_stats(respond_fn(ch, env))
            rms_vals[i, k] = st.rms
            var_vals[i, k] = st.variance
    return FullFingerprint(
        device_id=device_id,
        grid=grid,
        mean_rms=_shifted_mean(rms_vals),
        mean_var=_shifted_mean(var_vals),
        std_rms=(rms_vals - rms_vals[:, :1]).std(axis=1),
        n_repeats=n_repeats,
        bootstrap_temperature=env.temperature,
    )


def _shifted_mean(a: np.ndarray) -> np.ndarray:
    # identical repeats average to exactly that value, so noiseless self-matches give zero error
    return a[:, 0] + (a - a[:, :1]).mean(axis=1)


def _digest_words(seed: bytes):
    block = hashlib.sha256(seed).digest()
    while True:
        yield from struct.unpack(">8I", block)
        block = hashlib.sha256(block).digest()


def schedule_challenges(timestamp: int, device_id: str, P: int, grid: FrequencyGrid) -> list[float]:
    """Derive ``P`` distinct grid frequencies from a timestamp.

    SHA-256 over ``device_id || 0x00 || timestamp (8-byte big-endian)``
    yields a stream of 4-byte big-endian words (re-hashing the digest when
    exhausted); each word modulo the grid size is a candidate index, and
    duplicates are skipped until ``P`` indices are collected.
    """
    n = grid.size
    if isinstance(P, bool) or int(P) != P or not 1 <= P <= n:
        raise InvalidP(f"P must be in [1, {n}], got {P!r}")
    seed = device_id.encode("utf-8") + b"\x00" + struct.pack(">q", int(timestamp))
    chosen: list[int] = []
    seen = bytearray(n)
    for word in _digest_words(seed):
        idx = word % n
        if seen[idx]:
            continue
        seen[idx] = 1
        chosen.append(idx)
        if len(chosen) == P:
            break
    return [grid.frequency(i) for i in chosen]


def extract_partial(
    respond_fn: RespondFn,
    frequencies: Sequence[float],
    challenge_template: Challenge | None = None,
    env: Environment | None = None,
    timestamp: int = 0,
    device_id: str = "",
) -> PartialFingerprint:
    """Single-shot RMS measurement at each requested frequency."""
    if len(frequencies) == 0:
        raise InvalidP("no challenge frequencies given")
    challenge_template = challenge_template or Challenge(frequency=float(frequencies[0]))
    env = env or Environment()
    points = []
    for f in frequencies:
        w = respond_fn(challenge_template.at(f), env)
        points.append((float(f), response_stats(w).rms))
    return PartialFingerprint(device_id=device_id, points=tuple(points), timestamp=timestamp)


def expected_fn_after_retries(fn_rate: float, k: int) -> float:
    """False-negative probability after ``k`` independent attempts.

    The rate is taken at its shortest decimal form and raised to ``k`` in
    decimal arithmetic, so ``0.029`` squared gives the float nearest to
    0.000841 instead of accumulating binary rounding.
    """
    if not 0.0 <= fn_rate <= 1.0:
        raise ValueError("fn_rate must be a probability")
    if k < 1:
        raise ValueError("k must be >= 1")
    with decimal.localcontext() as ctx:
        ctx.prec = 60
        return float(decimal.Decimal(repr(float(fn_rate))) ** int(k))


# -- file format ------------------------------------------------------------

def dumps_fingerprint(fp: FullFingerprint) -> str:
    lines = [
        f"version={FORMAT_VERSION}",
        f"device_id={fp.device_id}",
        f"grid={fp.grid}",
        f"n_repeats={fp.n_repeats}",
        f"bootstrap_temperature_c={fp.bootstrap_temperature!r}",
    ]
    for f, m, v, s in zip(fp.frequencies, fp.mean_rms, fp.mean_var, fp.std_rms):
        lines.append(f"{format_hz(f)},{float(m)!r},{float(v)!r},{float(s)!r}")
    return "\n".join(lines) + "\n"


def loads_fingerprint(text: str, source: str = "<string>") -> FullFingerprint:
    lines = text.splitlines()
    header: dict[str, str] = {}
    body_start = 0
    for body_start, line in enumerate(lines):
        if "=" not in line:
            break
        key, value = line.split("=", 1)
        header[key] = value
    else:
        body_start = len(lines)
    try:
        if header.get("version") != str(FORMAT_VERSION):
            raise ValueError(f"unsupported version {header.get('version')!r}")
        missing = {"device_id", "grid", "n_repeats", "bootstrap_temperature_c"} - set(header)
        if missing:
            raise ValueError(f"missing header fields {sorted(missing)}")
        grid = FrequencyGrid.parse(header["grid"])
        rows = [ln for ln in lines[body_start:] if ln.strip()]
        if len(rows) != grid.size:
            raise ValueError(f"{len(rows)} data rows for a grid of {grid.size} frequencies")
        data = np.empty((grid.size, 3))
        for i, row in enumerate(rows):
            cells = row.split(",")
            if len(cells) != 4:
                raise ValueError(f"row {i + 1}: expected 4 fields")
            if grid.index_of(float(cells[0])) != i:
                raise ValueError(f"row {i + 1}: frequency {cells[0]} out of order")
            data[i] = [float(c) for c in cells[1:]]
        return FullFingerprint(
            device_id=header["device_id"],
            grid=grid,
            mean_rms=data[:, 0],
            mean_var=data[:, 1],
            std_rms=data[:, 2],
            n_repeats=int(header["n_repeats"]),
            bootstrap_temperature=float(header["bootstrap_temperature_c"]),
        )
    except (ValueError, FrequencyNotInGrid) as exc:
        raise CorruptFingerprint(f"{source}: {exc}") from None


def save_fingerprint(path: str | os.PathLike, fp: FullFingerprint) -> None:
    Path(path).write_text(dumps_fingerprint(fp), encoding="utf-8")


def load_fingerprint(path: str | os.PathLike) -> FullFingerprint:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorruptFingerprint(f"{path}: {exc}") from exc
    return loads_fingerprint(text, str(path))
