"""``sensorprint-eval``: run the fingerprinting experiments from the shell.

Every subcommand reads an optional key-value config file (``--config``) and
applies ``--set key=value`` overrides on top. On failure a single line
``error: <kind>: <message>`` is written to stderr and the exit code is 1.
"""

from __future__ import annotations

import argparse
import sys

from .errors import SensorprintError
from .evaluation import (
    ExperimentConfig,
    config_from_mapping,
    ingest_captures,
    load_config,
    run_confusion_matrix,
    run_P_sweep,
    run_sweep_experiment,
    run_theta_sweep,
)
from .fingerprint import FrequencyGrid, save_fingerprint


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args) -> ExperimentConfig:
    overrides = _overrides(args.set)
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.config:
        return load_config(args.config, overrides)
    return config_from_mapping(overrides)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="sensorprint-eval", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True)
    for name, help_ in [
        ("sweep", "full-fingerprint sweep of every simulated instance"),
        ("p-sweep", "target vs intra-device RMSE over partial-fingerprint sizes"),
        ("theta-sweep", "precision, recall and F1 over the threshold grid"),
        ("confusion", "per-model FN / FP (inter) / FP (intra) table"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key-value experiment config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--output-dir")
    ing = sub.add_parser("ingest", help="build a full fingerprint from a directory of <hz>.csv captures")
    ing.add_argument("directory")
    ing.add_argument("--grid", type=FrequencyGrid.parse, default=FrequencyGrid())
    ing.add_argument("--device", default="")
    ing.add_argument("--temperature", type=float, default=25.0)
    ing.add_argument("--out", required=True, help="fingerprint file to write")

    args = parser.parse_args(argv)
    try:
        if args.cmd == "ingest":
            fp = ingest_captures(args.directory, args.grid, args.device, args.temperature)
            save_fingerprint(args.out, fp)
            print(f"wrote {args.out} ({fp.grid.size} frequencies)")
            return 0
        cfg = _config(args)
        if args.cmd == "sweep":
            rows = run_sweep_experiment(cfg)
            print(f"wrote {len(rows)} sweep files to {cfg.output_dir}")
        elif args.cmd == "p-sweep":
            for P, mt, st, mi, si in run_P_sweep(cfg):
                print(f"P={P:<5d} target={mt:.5f}+-{st:.5f} intra={mi:.5f}+-{si:.5f}")
        elif args.cmd == "theta-sweep":
            for theta, p, r, f1 in run_theta_sweep(cfg):
                print(f"theta={theta:.4f} precision={p:.3f} recall={r:.3f} f1={f1:.3f}")
        else:
            run_confusion_matrix(cfg)
            print((cfg.output_dir / "confusion.txt").read_text(), end="")
        return 0
    except (SensorprintError, OSError, ValueError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
