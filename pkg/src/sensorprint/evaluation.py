"""Monte Carlo experiments over simulated sensor populations.

A *population* is ``instances_per_model`` simulated instances of each
configured model, each with a bootstrapped full fingerprint. Every random
choice is drawn from a generator seeded by ``(config.seed, purpose, ...)``,
so an experiment is a pure function of its configuration.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import CaptureFormatError, ConfigError, FrequencyNotInGrid, InvalidP, MissingFrequency
from .fingerprint import (
    DEFAULT_P,
    DEFAULT_REPEATS,
    DEFAULT_THETA,
    FrequencyGrid,
    FullFingerprint,
    bootstrap,
    format_hz,
    rmse,
)
from .sensors import (
    Environment,
    Responder,
    SensorInstance,
    SensorModel,
    builtin_presets,
    default_challenge,
    instantiate,
    load_models,
)
from .waveform import read_capture, response_stats, rms, write_capture

# Purpose tags keep seed streams of different experiment stages disjoint.
_INSTANCE, _BOOTSTRAP, _P_SWEEP, _THETA, _CONFUSION, _PAIRS = 1, 2, 3, 4, 5, 6
_GENUINE, _INTER, _INTRA = 0, 1, 2


def default_theta_values() -> list[float]:
    return [float(t) for t in np.linspace(0.001, 0.02, 20)]


@dataclass
class ExperimentConfig:
    models: list[str] = field(default_factory=lambda: [m.name for m in builtin_presets()])
    instances_per_model: int = 3
    seed: int = 1
    n_matchings: int = 1000
    P_values: list[int] = field(default_factory=lambda: [5, 10, 20, 50, 100])
    theta_values: list[float] = field(default_factory=default_theta_values)
    P: int = DEFAULT_P
    theta: float = DEFAULT_THETA
    environment: Environment = field(default_factory=Environment)
    grid: FrequencyGrid = field(default_factory=FrequencyGrid)
    n_repeats: int = DEFAULT_REPEATS
    output_dir: Path = Path("results")
    model_file: Path | None = None

    def __post_init__(self):
        if self.n_matchings < 1:
            raise ConfigError("n_matchings must be >= 1")
        if self.instances_per_model < 1:
            raise ConfigError("instances_per_model must be >= 1")
        if not self.models:
            raise ConfigError("at least one model is required")
        self.output_dir = Path(self.output_dir)

    def resolve_models(self) -> list[SensorModel]:
        known = {m.name: m for m in builtin_presets()}
        if self.model_file is not None:
            known.update({m.name: m for m in load_models(self.model_file)})
        lowered = {k.lower(): v for k, v in known.items()}
        try:
            return [lowered[name.lower()] for name in self.models]
        except KeyError as exc:
            raise ConfigError(f"unknown model {exc.args[0]!r}; known: {sorted(known)}") from None


# -- config files -----------------------------------------------------------

def _parse_list(text: str, conv) -> list:
    return [conv(x) for x in text.replace(",", " ").split()]


_CONFIG_KEYS: dict[str, Callable[[str], object]] = {
    "models": lambda s: _parse_list(s, str),
    "instances_per_model": int,
    "seed": int,
    "n_matchings": int,
    "P_values": lambda s: _parse_list(s, int),
    "theta_values": lambda s: _parse_list(s, float),
    "P": int,
    "theta": float,
    "temperature": float,
    "temp_jitter_std": float,
    "grid": FrequencyGrid.parse,
    "n_repeats": int,
    "output_dir": Path,
    "model_file": Path,
}


def config_from_mapping(values: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from raw ``key -> text`` pairs layered over ``base``."""
    cfg = base or ExperimentConfig()
    kwargs = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    env = cfg.environment
    for key, raw in values.items():
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            value = _CONFIG_KEYS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        if key == "temperature":
            env = replace(env, temperature=value)
        elif key == "temp_jitter_std":
            env = replace(env, temp_jitter_std=value)
        else:
            kwargs[key] = value
    kwargs["environment"] = env
    return ExperimentConfig(**kwargs)


def parse_config_text(text: str, source: str = "<string>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def load_config(path: str | os.PathLike, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values = parse_config_text(text, str(path))
    values.update(overrides or {})
    cfg = config_from_mapping(values)
    if cfg.model_file is not None and not cfg.model_file.is_absolute():
        cfg.model_file = path.parent / cfg.model_file
    return cfg


# -- population -------------------------------------------------------------

def _seed_int(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint32)[0])


@dataclass
class Device:
    model_index: int
    index: int
    instance: SensorInstance
    fingerprint: FullFingerprint


class Population:
    """Simulated instances plus their bootstrapped full fingerprints."""

    def __init__(self, config: ExperimentConfig, models: list[SensorModel], devices: list[list[Device]]):
        self.config = config
        self.models = models
        self.devices = devices

    @classmethod
    def build(cls, config: ExperimentConfig) -> "Population":
        models = config.resolve_models()
        devices = []
        for mi, model in enumerate(models):
            row = []
            for j in range(config.instances_per_model):
                inst = instantiate(model, _seed_int(config.seed, _INSTANCE, mi, j))
                fp = bootstrap(
                    Responder(inst, (config.seed, _BOOTSTRAP, mi, j)),
                    config.grid,
                    config.n_repeats,
                    default_challenge(model, config.grid.f_min),
                    config.environment,
                    device_id=inst.instance_id,
                )
                row.append(Device(mi, j, inst, fp))
            devices.append(row)
        return cls(config, models, devices)

    def measure(self, device: Device, freqs: np.ndarray, seed: tuple[int, ...]) -> np.ndarray:
        """Single-shot RMS at each frequency."""
        responder = Responder(device.instance, seed)
        template = default_challenge(device.instance.model)
        env = self.config.environment
        return np.array([rms(responder(template.at(f), env)) for f in freqs])


def _population(config: ExperimentConfig, population: Population | None) -> Population:
    return population if population is not None else Population.build(config)


def _check_P(P: int, grid: FrequencyGrid) -> None:
    if not 1 <= P <= grid.size:
        raise InvalidP(f"P={P} outside [1, {grid.size}] for grid {grid}")


def _subset(rng: np.random.Generator, grid: FrequencyGrid, P: int) -> np.ndarray:
    return grid.f_min + np.sort(rng.choice(grid.size, size=P, replace=False)) * grid.step


# -- CSV helpers ------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    return path


# -- experiments ------------------------------------------------------------

SWEEP_HEADER = ("frequency", "mean_rms", "std_rms", "mean_var")


def run_sweep_experiment(config: ExperimentConfig, population: Population | None = None, write: bool = True) -> dict[str, list[tuple]]:
    """Full-fingerprint sweep of every instance; one CSV per instance.

    Returns ``{"<model>_<index>": rows}``.
    """
    pop = _population(config, population)
    out: dict[str, list[tuple]] = {}
    for row in pop.devices:
        for dev in row:
            fp = dev.fingerprint
            key = f"{dev.instance.model.name}_{dev.index}"
            rows = list(zip(fp.frequencies.tolist(), fp.mean_rms.tolist(), fp.std_rms.tolist(), fp.mean_var.tolist()))
            out[key] = rows
            if write:
                _write(config.output_dir / f"sweep_{key}.csv", _csv_text(SWEEP_HEADER, rows))
    if write:
        _write(config.output_dir / "sweep.gp", _sweep_gnuplot(sorted(out)))
    return out


P_SWEEP_HEADER = ("P", "mean_rmse_target", "std_rmse_target", "mean_rmse_intra", "std_rmse_intra")


def p_sweep_samples(config: ExperimentConfig, population: Population | None = None) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Raw target and intra-device RMSE samples per partial-fingerprint size.

    Each matching measures a random target instance at a uniformly random
    frequency subset and matches it against the target's own fingerprint
    and against one random sibling's fingerprint.
    """
    if not config.P_values:
        raise ConfigError("P_values must not be empty")
    for P in config.P_values:
        _check_P(P, config.grid)
    pop = _population(config, population)
    grid = config.grid
    result = {}
    for P in config.P_values:
        target, intra = [], []
        for mi, row in enumerate(pop.devices):
            rng = np.random.default_rng([config.seed, _P_SWEEP, P, mi])
            for m in range(config.n_matchings):
                dev = row[rng.integers(len(row))]
                freqs = _subset(rng, grid, P)
                x = pop.measure(dev, freqs, (config.seed, _P_SWEEP, P, mi, m))
                target.append(rmse(dev.fingerprint.rms_at(freqs), x))
                if len(row) > 1:
                    k = rng.integers(len(row) - 1)
                    sib = row[k if k < dev.index else k + 1]
                    intra.append(rmse(sib.fingerprint.rms_at(freqs), x))
        result[P] = (np.array(target), np.array(intra))
    return result


def run_P_sweep(config: ExperimentConfig, population: Population | None = None, write: bool = True) -> list[tuple]:
    samples = p_sweep_samples(config, population)
    rows = []
    for P, (t, i) in samples.items():
        intra_mean = float(i.mean()) if i.size else float("nan")
        intra_std = float(i.std()) if i.size else float("nan")
        rows.append((P, float(t.mean()), float(t.std()), intra_mean, intra_std))
    if write:
        _write(config.output_dir / "p_sweep.csv", _csv_text(P_SWEEP_HEADER, rows))
        _write(config.output_dir / "p_sweep.gp", _P_GNUPLOT)
    return rows


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp_inter: int
    fp_intra: int
    fn: int
    tn: int

    @property
    def fp(self) -> int:
        return self.fp_inter + self.fp_intra

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class Attempts:
    """RMSE of every attempt in a study, split by kind and model."""

    genuine: np.ndarray  # (n_models, n_matchings)
    inter: np.ndarray
    intra: np.ndarray

    def counts(self, theta: float, model_index: int | None = None) -> ConfusionCounts:
        sel = slice(None) if model_index is None else slice(model_index, model_index + 1)
        g, e, a = self.genuine[sel], self.inter[sel], self.intra[sel]
        tp = int(np.count_nonzero(g <= theta))
        fp_inter = int(np.count_nonzero(e <= theta))
        fp_intra = int(np.count_nonzero(a <= theta))
        return ConfusionCounts(
            tp=tp,
            fp_inter=fp_inter,
            fp_intra=fp_intra,
            fn=g.size - tp,
            tn=e.size + a.size - fp_inter - fp_intra,
        )


def collect_attempts(
    config: ExperimentConfig,
    P: int,
    n_inter: int,
    n_intra: int,
    tag: int,
    population: Population | None = None,
) -> Attempts:
    """Genuine, inter-model and intra-model attempts against each model's instances.

    Per model: ``n_matchings`` genuine attempts, ``n_inter`` attempts by a
    random instance of another model and ``n_intra`` by a random sibling.
    Kinds with no possible impostor (single model, single instance) are
    left empty.
    """
    _check_P(P, config.grid)
    pop = _population(config, population)
    grid = config.grid
    n_models = len(pop.devices)
    genuine = np.empty((n_models, config.n_matchings))
    inter = np.empty((n_models, n_inter if n_models > 1 else 0))
    intra = np.empty((n_models, n_intra if config.instances_per_model > 1 else 0))
    for mi, row in enumerate(pop.devices):
        for kind, out in ((_GENUINE, genuine), (_INTER, inter), (_INTRA, intra)):
            rng = np.random.default_rng([config.seed, tag, P, mi, kind])
            for m in range(out.shape[1]):
                target = row[rng.integers(len(row))]
                if kind == _GENUINE:
                    source = target
                elif kind == _INTER:
                    k = rng.integers(n_models - 1)
                    other = pop.devices[k if k < mi else k + 1]
                    source = other[rng.integers(len(other))]
                else:
                    k = rng.integers(len(row) - 1)
                    source = row[k if k < target.index else k + 1]
                freqs = _subset(rng, grid, P)
                x = pop.measure(source, freqs, (config.seed, tag, P, mi, kind, m))
                out[mi, m] = rmse(target.fingerprint.rms_at(freqs), x)
    return Attempts(genuine, inter, intra)


def inter_pair_epsilons(
    config: ExperimentConfig, P: int | None = None, population: Population | None = None
) -> dict[tuple[str, str], np.ndarray]:
    """RMSE of ``n_matchings`` impostor attempts for every ordered model pair.

    Key ``(target, impostor)``: a random instance of the impostor model is
    measured and matched against a random instance of the target model.
    """
    P = config.P if P is None else P
    _check_P(P, config.grid)
    pop = _population(config, population)
    out = {}
    for ti, trow in enumerate(pop.devices):
        for si, srow in enumerate(pop.devices):
            if si == ti:
                continue
            rng = np.random.default_rng([config.seed, _PAIRS, P, ti, si])
            eps = np.empty(config.n_matchings)
            for m in range(config.n_matchings):
                target = trow[rng.integers(len(trow))]
                source = srow[rng.integers(len(srow))]
                freqs = _subset(rng, config.grid, P)
                x = pop.measure(source, freqs, (config.seed, _PAIRS, P, ti, si, m))
                eps[m] = rmse(target.fingerprint.rms_at(freqs), x)
            out[(pop.models[ti].name, pop.models[si].name)] = eps
    return out


THETA_HEADER = ("theta", "precision", "recall", "f1")


def run_theta_sweep(config: ExperimentConfig, P: int | None = None, population: Population | None = None, write: bool = True) -> list[tuple]:
    """Precision, recall and F1 over the threshold grid, pooled over models.

    The impostor pool per model is half inter-model, half intra-model.
    """
    P = config.P if P is None else P
    if not config.theta_values:
        raise ConfigError("theta_values must not be empty")
    n_inter = config.n_matchings // 2
    att = collect_attempts(config, P, n_inter, config.n_matchings - n_inter, _THETA, population)
    rows = []
    for theta in config.theta_values:
        c = att.counts(theta)
        rows.append((float(theta), c.precision, c.recall, c.f1))
    if write:
        _write(config.output_dir / f"theta_sweep_P{P}.csv", _csv_text(THETA_HEADER, rows))
        _write(config.output_dir / f"theta_sweep_P{P}.gp", _theta_gnuplot(P))
    return rows


CONFUSION_HEADER = ("model", "n_genuine", "n_inter", "n_intra", "tp", "fn", "fp_inter", "fp_intra", "tn",
                    "fn_rate", "fp_inter_rate", "fp_intra_rate", "precision", "recall", "f1")


def run_confusion_matrix(
    config: ExperimentConfig,
    P: int | None = None,
    theta: float | None = None,
    population: Population | None = None,
    write: bool = True,
) -> dict[str, ConfusionCounts]:
    """Per-model FN, inter- and intra-model FP counts, ``n_matchings`` attempts each."""
    P = config.P if P is None else P
    theta = config.theta if theta is None else theta
    pop = _population(config, population)
    att = collect_attempts(config, P, config.n_matchings, config.n_matchings, _CONFUSION, pop)
    table: dict[str, ConfusionCounts] = {}
    rows = []
    for mi, model in enumerate(pop.models):
        c = att.counts(theta, mi)
        table[model.name] = c
        n_g, n_e, n_a = att.genuine.shape[1], att.inter.shape[1], att.intra.shape[1]
        rows.append((
            model.name, n_g, n_e, n_a, c.tp, c.fn, c.fp_inter, c.fp_intra, c.tn,
            c.fn / n_g if n_g else 0.0,
            c.fp_inter / n_e if n_e else 0.0,
            c.fp_intra / n_a if n_a else 0.0,
            c.precision, c.recall, c.f1,
        ))
    if write:
        _write(config.output_dir / "confusion.csv", _csv_text(CONFUSION_HEADER, rows))
        _write(config.output_dir / "confusion.txt", format_confusion_table(table, att, P, theta))
    return table


def format_confusion_table(table: dict[str, ConfusionCounts], att: Attempts, P: int, theta: float) -> str:
    n_g, n_e, n_a = att.genuine.shape[1], att.inter.shape[1], att.intra.shape[1]
    pct = lambda k, n: f"{100.0 * k / n:.1f}%" if n else "-"  # noqa: E731
    lines = [
        f"P={P} theta={theta!r} genuine={n_g} inter={n_e} intra={n_a} per model",
        f"{'model':<10}{'FN':>8}{'FP (inter)':>12}{'FP (intra)':>12}",
    ]
    for name, c in table.items():
        lines.append(f"{name:<10}{pct(c.fn, n_g):>8}{pct(c.fp_inter, n_e):>12}{pct(c.fp_intra, n_a):>12}")
    return "\n".join(lines) + "\n"


# -- capture ingestion ------------------------------------------------------

def export_captures(
    directory: str | os.PathLike,
    respond_fn,
    grid: FrequencyGrid,
    challenge_template,
    env: Environment,
) -> Path:
    """Write one ``<hz>.csv`` capture per grid frequency (single measurement each)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for f in grid.frequencies():
        write_capture(directory / f"{format_hz(f)}.csv", respond_fn(challenge_template.at(f), env))
    return directory


def ingest_captures(
    directory: str | os.PathLike,
    grid: FrequencyGrid,
    device_id: str = "",
    bootstrap_temperature: float = 25.0,
) -> FullFingerprint:
    """Assemble a full fingerprint from one capture file per grid frequency."""
    directory = Path(directory)
    if not directory.is_dir():
        raise CaptureFormatError(f"{directory}: not a directory")
    files: dict[int, Path] = {}
    for p in sorted(directory.glob("*.csv")):
        try:
            idx = grid.index_of(float(p.stem))
        except (ValueError, FrequencyNotInGrid):
            raise CaptureFormatError(f"{p}: file name is not a grid frequency") from None
        if idx in files:
            raise CaptureFormatError(f"{p}: duplicate capture for {format_hz(grid.frequency(idx))} Hz")
        files[idx] = p
    missing = [format_hz(grid.frequency(i)) for i in range(grid.size) if i not in files]
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise MissingFrequency(f"{directory}: no capture for {len(missing)} frequencies: {shown} Hz")
    stats = [response_stats(read_capture(files[i])) for i in range(grid.size)]
    return FullFingerprint(
        device_id=device_id,
        grid=grid,
        mean_rms=[s.rms for s in stats],
        mean_var=[s.variance for s in stats],
        std_rms=np.zeros(grid.size),
        n_repeats=1,
        bootstrap_temperature=bootstrap_temperature,
    )


# -- gnuplot scripts --------------------------------------------------------

def _sweep_gnuplot(keys: list[str]) -> str:
    rms = ", \\\n     ".join(f"'sweep_{k}.csv' using ($1/1000):2 with lines title '{k}'" for k in keys)
    var = ", \\\n     ".join(f"'sweep_{k}.csv' using ($1/1000):4 with lines title '{k}'" for k in keys)
    return (
        "set datafile separator ','\nset key autotitle columnhead\n"
        "set terminal pngcairo size 1200,500\nset output 'sweep.png'\nset multiplot layout 1,2\n"
        "set xlabel 'frequency (kHz)'\nset ylabel 'RMS (V)'\n"
        f"plot {rms}\n"
        "set ylabel 'variance (V^2)'\nset logscale y\n"
        f"plot {var}\nunset multiplot\n"
    )


_P_GNUPLOT = (
    "set datafile separator ','\nset terminal pngcairo size 700,500\nset output 'p_sweep.png'\n"
    "set xlabel 'partial fingerprint size P'\nset ylabel 'RMSE (V)'\nset logscale x\n"
    "plot 'p_sweep.csv' using 1:2:3 with yerrorlines title 'target', \\\n"
    "     'p_sweep.csv' using 1:4:5 with yerrorlines title 'intra-device'\n"
)


def _theta_gnuplot(P: int) -> str:
    name = f"theta_sweep_P{P}"
    return (
        f"set datafile separator ','\nset terminal pngcairo size 700,500\nset output '{name}.png'\n"
        "set xlabel 'theta (V)'\nset yrange [0:1.05]\n"
        f"plot '{name}.csv' using 1:2 with lines title 'precision', \\\n"
        f"     '{name}.csv' using 1:3 with lines title 'recall', \\\n"
        f"     '{name}.csv' using 1:4 with lines title 'F1'\n"
    )
