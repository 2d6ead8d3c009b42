"""Command-line entry point: ``genlaplace <command> --config cfg.json --out dir``.

Exit codes: 0 success, 1 invariant breach, 2 usage or configuration error.
Every CSV starts with ``#`` provenance lines (config hash, package version)
followed by a header row.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ConfigError, DatasetError, GLAError
from .experiments import (
    ExperimentConfig,
    classification_config,
    run_ood,
    run_sweep,
    run_theory,
    run_toy_regression,
    fit_run,
    toy_config,
)
from .nn import save_checkpoint

COMMANDS = ("train", "toy-regression", "sweep", "ood", "theory")


def config_hash(config):
    doc = {k: v for k, v in config.to_dict().items() if k != "output_dir"}
    blob = json.dumps(doc, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()


def write_rows(path, rows, config, columns=None):
    """Write ``rows`` atomically with provenance comments and a header."""
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    buf.write(f"# config_sha256: {config_hash(config)}\n")
    buf.write(f"# genlaplace_version: {__version__}\n")
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    _atomic_write(path, buf.getvalue())


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def _atomic_write(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _default_config(command):
    if command in ("sweep", "ood"):
        return classification_config()
    if command == "theory":
        return ExperimentConfig(seeds=(0,))
    return toy_config()


def load_config(command, path=None, seed=None, kinds=None, out=None):
    if path is None:
        doc = _default_config(command).to_dict()
    else:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}", field="config") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}", field="config") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object", field="config")
    if seed is not None:
        doc["seeds"] = [seed]
    if kinds:
        doc["kinds"] = [k for k in kinds.split(",") if k]
    if out is not None:
        doc["output_dir"] = out
    return ExperimentConfig.from_dict(doc)


def cmd_train(config, out):
    seed = config.seeds[0]
    run = fit_run(config, seed, kinds=())
    prior_std = config.train_config(seed).prior_std
    save_checkpoint(out / "checkpoint.json", run.arch, run.theta, seed=seed, prior_std=prior_std)
    write_rows(out / "trace.csv", [{"epoch": e, "loss": loss} for e, loss in run.trace], config)
    return 0


def cmd_toy_regression(config, out):
    bands, summary = run_toy_regression(config)
    for seed in config.seeds:
        for kind in config.kinds:
            rows = [
                {k: r[k] for k in ("x_grid", "mean", "std", "map")}
                for r in bands
                if r["seed"] == seed and r["kind"] == kind
            ]
            name = f"toy_{kind}.csv" if len(config.seeds) == 1 else f"toy_seed{seed}_{kind}.csv"
            write_rows(out / name, rows, config)
    write_rows(out / "toy_summary.csv", summary, config)
    return 0


def cmd_sweep(config, out):
    write_rows(out / "sweep.csv", run_sweep(config), config)
    return 0


def cmd_ood(config, out):
    rows = run_ood(config)
    write_rows(out / "ood.csv", rows, config)
    for r in rows:
        if r["ood_below_in"]:
            print(
                f"note: OOD entropy below in-distribution at seed={r['seed']} "
                f"T={r['temperature']:g} kind={r['kind']}",
                file=sys.stderr,
            )
    return 0


def cmd_theory(config, out):
    reports, breaches = run_theory(config)
    for name, rows in reports.items():
        write_rows(out / f"theory_{name}.csv", rows, config)
    for b in breaches:
        print(f"invariant breach: {b}", file=sys.stderr)
    return 1 if breaches else 0


HANDLERS = {
    "train": cmd_train,
    "toy-regression": cmd_toy_regression,
    "sweep": cmd_sweep,
    "ood": cmd_ood,
    "theory": cmd_theory,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="genlaplace", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config (defaults built in)")
        p.add_argument("--out", help="output directory (default: config output_dir or .)")
        p.add_argument("--seed", type=int, help="run a single seed, overriding the config")
        p.add_argument("--kinds", help="comma-separated curvature kinds, overriding the config")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative", field="seed")
        config = load_config(args.command, args.config, args.seed, args.kinds, args.out)
        out = Path(config.output_dir or ".")
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](config, out)
    except (ConfigError, DatasetError) as err:
        field = getattr(err, "field", None)
        print(f"error: {err}" + (f" (field: {field})" if field else ""), file=sys.stderr)
        return 2
    except (GLAError, TypeError, KeyError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
