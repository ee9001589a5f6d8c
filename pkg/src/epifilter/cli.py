"""Command-line entry point.

Subcommands:

* ``simulate``    -- run the stochastic epidemic model and dump S, I, R
* ``synthesize``  -- generate the truth data frames used for assimilation
* ``assimilate``  -- run the full assimilation experiment for one variant
* ``diagnose``    -- recompute RMSE / centroid metrics from two field dumps

Every run writes delimited CSV and 16-bit PGM field dumps (and PNG
figures unless ``--no-figures``) into the output directory.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import streams
from .config import VARIANTS, ConfigError, load_config, parse_config
from .experiment import (
    build_population,
    centroid_error,
    initial_state,
    rmse,
    run_experiment,
    synthesize_data,
)
from .fieldio import read_field, write_field
from .sir import advance

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epifilter",
        description="Ensemble filters with spectral covariances and morphing "
        "for a stochastic spatial epidemic model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="config file (INI-style key=value)")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--variant", choices=VARIANTS, default=None, help="filter variant override")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--lanes", type=int, default=None, help="worker lanes for member advancement")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p_sim = sub.add_parser("simulate", help="run the epidemic model and dump the final state")
    add_common(p_sim)
    p_sim.add_argument("--steps", type=int, default=None, help="steps to run (default: spinup_steps)")

    p_syn = sub.add_parser("synthesize", help="generate truth data frames")
    add_common(p_syn)

    p_asm = sub.add_parser("assimilate", help="run the assimilation experiment")
    add_common(p_asm)

    p_diag = sub.add_parser("diagnose", help="recompute metrics from two field dumps")
    p_diag.add_argument("field_a", type=Path)
    p_diag.add_argument("field_b", type=Path)
    return parser


def _load(args) -> "ExperimentConfig":
    overrides = {}
    if args.seed is not None:
        overrides["run.master_seed"] = int(args.seed)
    if args.variant is not None:
        overrides["filter.variant"] = args.variant
    if args.lanes is not None:
        overrides["run.lanes"] = int(args.lanes)
    if args.config is not None:
        return load_config(args.config, overrides)
    return parse_config("", overrides)


def _cmd_simulate(args) -> int:
    config = _load(args)
    steps = config.spinup_steps if args.steps is None else args.steps
    if steps < 0:
        raise ConfigError("steps: must be >= 0")
    population = build_population(config)
    state = initial_state(config, population)
    state = advance(state, steps, config.epi, streams.derive(config.master_seed, streams.SPINUP))
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for name, field in (
        ("susceptible", state.susceptible),
        ("infected", state.infected),
        ("removed", state.removed),
    ):
        write_field(field, config.grid, out / f"final_{name}.csv")
        write_field(field, config.grid, out / f"final_{name}.pgm")
    if not args.no_figures:
        from . import figures

        figures.save_state_figure(state, out / "final_state.png", title=f"t = {state.time:g}")
    print(f"simulated {steps} steps -> {out}")
    return 0


def _cmd_synthesize(args) -> int:
    config = _load(args)
    frames = synthesize_data(config)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for j, frame in enumerate(frames):
        stem = f"data_cycle_{j + 1:02d}_infected"
        write_field(frame, config.grid, out / (stem + ".csv"))
        write_field(frame, config.grid, out / (stem + ".pgm"))
        if not args.no_figures:
            from . import figures

            time = config.spinup_steps + j * config.cycle_steps
            figures.save_field_figure(frame, config.grid, out / (stem + ".png"),
                                      title=f"truth infected, t={time * config.epi.dt:g}")
    print(f"synthesized {len(frames)} data frames -> {out}")
    return 0


def _cmd_assimilate(args) -> int:
    config = _load(args)
    reports = run_experiment(config, out_dir=args.out, figures=not args.no_figures)
    for report in reports:
        print(
            f"cycle {report.cycle}: forecast_rmse={report.forecast_rmse!r} "
            f"analysis_rmse={report.analysis_rmse!r} "
            f"forecast_centroid_error_km={report.forecast_centroid_error_km!r} "
            f"analysis_centroid_error_km={report.analysis_centroid_error_km!r}"
        )
    print(f"wrote report and dumps -> {args.out}")
    return 0


def _cmd_diagnose(args) -> int:
    field_a, grid_a = read_field(args.field_a)
    field_b, grid_b = read_field(args.field_b)
    if field_a.shape != field_b.shape:
        raise ConfigError("diagnose: field shapes differ")
    error = rmse(field_a, field_b)
    try:
        cent = centroid_error(field_a, field_b, grid_a)
    except ValueError:
        cent = float("nan")
    print(f"rmse={error!r} centroid_error_km={cent!r}")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    commands = {
        "simulate": _cmd_simulate,
        "synthesize": _cmd_synthesize,
        "assimilate": _cmd_assimilate,
        "diagnose": _cmd_diagnose,
    }
    try:
        return commands[args.command](args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
