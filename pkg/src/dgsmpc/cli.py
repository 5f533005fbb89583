"""Command-line entry point.

Every subcommand takes one JSON config document; see ``configs/`` for examples.
Errors are reported as a JSON object on stderr with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bank import OperatorBank
from .config import RunConfig, load_config, output_path
from .controller import fmt
from .errors import ConfigError, DgsmpcError, UsageError
from .properties import verify_properties
from .selection import feasible_set_boundary, initial_gain, unit_directions
from .simulation import derive_seed, monte_carlo, paired_difference, run_closed_loop
from .synthesis import GainLibrary, default_grid, dp_fixed_point, generate_gain_library

log = logging.getLogger("dgsmpc")


class _JsonArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump_json(doc, path) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _library(cfg: RunConfig) -> GainLibrary:
    path = cfg.library
    if path:
        try:
            return GainLibrary.load(path, cfg.model)
        except OSError as exc:
            raise ConfigError(f"cannot read library {path}: {exc}") from exc
    grid = default_grid(cfg.grid.count, cfg.grid.mu_min, cfg.grid.spacing)
    return generate_gain_library(cfg.model, grid)


def cmd_synth(cfg: RunConfig, args) -> None:
    lib = _library(cfg)
    doc = lib.to_dict()
    doc["header"]["config_hash"] = cfg.hash()
    path = output_path(args.out or cfg.library_out or cfg.output, "library.json")
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")
    log.info("wrote %d records to %s", len(lib), path)


def cmd_simulate(cfg: RunConfig, args) -> None:
    lib = _library(cfg)
    bank = OperatorBank.from_library(cfg.model, lib)
    seed = derive_seed(cfg.seed, 0)
    multi = len(cfg.modes) > 1
    for mode in cfg.modes:
        tr = run_closed_loop(cfg.model, lib, cfg.controller_config(mode), cfg.x0, cfg.T, seed,
                             cfg.distribution, bank=bank, config_hash=cfg.hash())
        name = args.out or cfg.output or "trajectory.csv"
        if multi:
            stem, dot, ext = name.rpartition(".")
            name = f"{stem}_{mode}.{ext}" if dot else f"{name}_{mode}"
        path = output_path(name, "trajectory.csv")
        tr.to_csv(path, comment=f"config_hash={cfg.hash()} seed={seed} mode={mode}")
        log.info("wrote %d steps to %s", tr.steps, path)


def cmd_montecarlo(cfg: RunConfig, args) -> None:
    lib = _library(cfg)
    bank = OperatorBank.from_library(cfg.model, lib)
    results = {}
    for mode in cfg.modes:
        results[mode] = monte_carlo(cfg.model, lib, cfg.controller_config(mode), cfg.x0, cfg.runs, cfg.T,
                                    cfg.violation_horizon, cfg.seed, cfg.distribution, bank=bank,
                                    config_hash=cfg.hash())
    paired = []
    modes = list(cfg.modes)
    for i, a in enumerate(modes):
        for b in modes[i + 1:]:
            if cfg.runs > 1:
                dJ, seJ = paired_difference(results[a], results[b], "J_runs")
                dP, seP = paired_difference(results[a], results[b], "P_runs")
            else:
                dJ, seJ = float(results[a].J_runs[0] - results[b].J_runs[0]), None
                dP, seP = float(results[a].P_runs[0] - results[b].P_runs[0]), None
            paired.append({"a": a, "b": b, "J_diff": dJ, "J_diff_se": seJ, "P_diff": dP, "P_diff_se": seP})
    doc = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "metrics": [results[m].to_dict() for m in modes],
        "paired": paired,
    }
    path = output_path(args.out or cfg.output, "metrics.json")
    _dump_json(doc, path)
    log.info("wrote metrics to %s", path)


def cmd_check_properties(cfg: RunConfig, args) -> None:
    lib = _library(cfg)
    x0 = np.asarray(cfg.x0, float)
    eps0 = cfg.model.e if cfg.epsilon0 is None else cfg.epsilon0
    mc_state = None
    if np.any(x0):
        sel = initial_gain(lib, cfg.model, x0, eps0, cfg.initial_policy)
        mc_state = (sel.mu_index, x0, eps0)
    report = verify_properties(cfg.model, lib, seed=cfg.seed, draws=cfg.draws,
                               random_instances=cfg.property_instances, mc_state=mc_state)
    report["config_hash"] = cfg.hash()
    path = output_path(args.out or cfg.output, "properties.json")
    _dump_json(report, path)
    log.info("property report (%s) written to %s", "pass" if report["pass"] else "FAIL", path)
    if not report["pass"]:
        raise SystemExit(3)


def cmd_feasible_set(cfg: RunConfig, args) -> None:
    model = cfg.model
    eps0 = model.e if cfg.epsilon0 is None else cfg.epsilon0
    D = unit_directions(cfg.directions, model.nx)
    path = output_path(args.out or cfg.output, "feasible_set.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={cfg.hash()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mu", "direction"] + [f"d{i}" for i in range(model.nx)] + ["radius"]
                   + [f"x{i}" for i in range(model.nx)])
        for mu in cfg.mu_values:
            rec = dp_fixed_point(model, mu)
            radii = feasible_set_boundary(rec, model, eps0, D)
            for n, (d, r) in enumerate(zip(D, radii)):
                pts = [fmt(r * v) if np.isfinite(r) else "inf" for v in d]
                w.writerow([fmt(mu), n] + [fmt(v) for v in d] + [fmt(r) if np.isfinite(r) else "inf"] + pts)
    log.info("wrote feasible-set radii to %s", path)


COMMANDS = {
    "synth": (cmd_synth, "build and save the gain library"),
    "simulate": (cmd_simulate, "one closed-loop run per mode, as CSV"),
    "montecarlo": (cmd_montecarlo, "Monte Carlo metrics as JSON"),
    "check-properties": (cmd_check_properties, "numerical property report as JSON"),
    "feasible-set": (cmd_feasible_set, "initial feasible-set radii as CSV"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _JsonArgumentParser(prog="dgsmpc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_JsonArgumentParser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON config document")
        p.add_argument("--out", help="output file (relative paths go to DGSMPC_OUTPUT_DIR)")
        if name != "synth":
            p.add_argument("--library", help="saved gain library to use instead of synthesising one")
    return parser


def _report(exc: DgsmpcError) -> int:
    sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True) + "\n")
    return 2 if isinstance(exc, (ConfigError, UsageError)) else 1


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config)
        if getattr(args, "library", None):
            # the hash must describe the library actually used
            cfg = replace(cfg, library=str(Path(args.library).resolve()))
        COMMANDS[args.command][0](cfg, args)
    except DgsmpcError as exc:
        return _report(exc)
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
