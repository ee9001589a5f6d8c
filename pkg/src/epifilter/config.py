"""Experiment configuration: flat key-value text with one section per area.

An empty document parses to the default experiment (the full assimilation
setup at 100 x 100 desk scale).  Unknown sections or keys are rejected,
and every validation error names the offending ``section.key``.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

from .grid import Grid, make_grid
from .morphing import RegistrationOptions
from .sir import EpiParams
from .spectral import SmoothnessSpec

VARIANTS = ("enkf", "fft_enkf", "morphing_enkf", "morphing_fft_enkf")
MORPHING_VARIANTS = ("morphing_enkf", "morphing_fft_enkf")
POPULATION_KINDS = ("constant", "blobs")


class ConfigError(ValueError):
    """Malformed or invalid configuration text."""


# section -> key -> (type tag, default)
SCHEMA = {
    "grid": {
        "nx": ("int", 100),
        "ny": ("int", 100),
        "dx": ("float", 10.0),
        "dy": ("float", 10.0),
    },
    "model": {
        "alpha": ("float", 1.5e-6),
        "spread_scale": ("float", 10.0),
        "removal_rate": ("float", 5e-4),
        "dt": ("float", 1.0),
        "cutoff_radius": ("float", 40.0),
    },
    "population": {
        "kind": ("str", "constant"),
        "base": ("float", 200.0),
        "blobs": ("int", 6),
        "blob_amplitude": ("float", 300.0),
        "blob_width": ("float", 120.0),
    },
    "infection": {
        "center_x": ("int", 50),
        "center_y": ("int", 50),
        "radius": ("float", 3.0),
        "fraction": ("float", 0.2),
    },
    "ensemble": {
        "size": ("int", 5),
        "spinup_steps": ("int", 100),
        "cycle_steps": ("int", 20),
        "cycles": ("int", 3),
    },
    "filter": {
        "variant": ("str", "morphing_fft_enkf"),
        "auto_tune": ("bool", True),
        "obs_variance": ("float", 1e-4),
        "position_variance": ("float", 100.0),
        "amplitude_variance": ("float", 1e6),
    },
    # Spectrum amplitudes are per-mode coefficient scales in the orthonormal
    # sine basis; at 100 x 100 these give ~2-cell warps and ~20% amplitude
    # perturbations, concentrated in smooth low modes so that a 5-member
    # span covers most of the position uncertainty.
    "perturbation": {
        "warp_amplitude": ("float", 2200.0),
        "warp_decay": ("float", 1.0),
        "amp_amplitude": ("float", 33.0),
        "amp_decay": ("float", 1.0),
        "residual_amplitude": ("float", 0.0),
        "residual_decay": ("float", 1.0),
    },
    "registration": {
        "levels": ("int", 4),
        "smoothness_weight": ("float", 1e-5),
        "gradient_weight": ("float", 3e-3),
        "max_iters": ("int", 200),
        "step_tolerance": ("float", 0.01),
    },
    "postprocess": {
        "threshold": ("float", 0.01),
    },
    "run": {
        "master_seed": ("int", 3),
        "lanes": ("int", 1),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment setup."""

    grid: Grid
    epi: EpiParams
    population_kind: str
    population_base: float
    population_blobs: int
    population_blob_amplitude: float
    population_blob_width: float
    infection_center: tuple[int, int]
    infection_radius: float
    infection_fraction: float
    n_members: int
    spinup_steps: int
    cycle_steps: int
    n_cycles: int
    variant: str
    auto_tune: bool
    obs_variance: float
    position_variance: float
    amplitude_variance: float
    warp_spec: SmoothnessSpec
    amp_spec: SmoothnessSpec
    residual_spec: SmoothnessSpec | None
    registration: RegistrationOptions
    threshold: float
    master_seed: int
    lanes: int


def _parse_raw(text: str) -> dict[str, dict[str, object]]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None

    values: dict[str, dict[str, object]] = {
        section: {key: default for key, (_, default) in keys.items()}
        for section, keys in SCHEMA.items()
    }
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            kind = SCHEMA[section][key][0]
            try:
                if kind == "int":
                    values[section][key] = int(raw)
                elif kind == "float":
                    values[section][key] = float(raw)
                elif kind == "bool":
                    values[section][key] = parser.getboolean(section, key)
                else:
                    values[section][key] = raw.strip()
            except ValueError:
                raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {kind}") from None
    return values


def _require(condition: bool, field: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{field}: {message}")


def build_config(values: dict[str, dict[str, object]]) -> ExperimentConfig:
    g = values["grid"]
    try:
        grid = make_grid(g["nx"], g["ny"], g["dx"], g["dy"])
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None
    m = values["model"]
    try:
        epi = EpiParams(m["alpha"], m["spread_scale"], m["removal_rate"], m["dt"], m["cutoff_radius"])
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None

    p = values["population"]
    _require(p["kind"] in POPULATION_KINDS, "population.kind", f"must be one of {POPULATION_KINDS}")
    _require(p["base"] > 0.0, "population.base", "must be > 0")
    _require(p["blobs"] >= 0, "population.blobs", "must be >= 0")
    _require(p["blob_amplitude"] >= 0.0, "population.blob_amplitude", "must be >= 0")
    _require(p["blob_width"] > 0.0, "population.blob_width", "must be > 0")

    i = values["infection"]
    _require(0 <= i["center_x"] < grid.nx, "infection.center_x", "outside the grid")
    _require(0 <= i["center_y"] < grid.ny, "infection.center_y", "outside the grid")
    _require(i["radius"] > 0.0, "infection.radius", "must be > 0")
    _require(0.0 < i["fraction"] <= 1.0, "infection.fraction", "must be in (0, 1]")

    e = values["ensemble"]
    _require(e["size"] >= 2, "ensemble.size", "must be >= 2")
    _require(e["spinup_steps"] >= 0, "ensemble.spinup_steps", "must be >= 0")
    _require(e["cycle_steps"] >= 0, "ensemble.cycle_steps", "must be >= 0")
    _require(e["cycles"] >= 0, "ensemble.cycles", "must be >= 0")

    f = values["filter"]
    _require(f["variant"] in VARIANTS, "filter.variant", f"must be one of {VARIANTS}")
    _require(f["obs_variance"] > 0.0, "filter.obs_variance", "must be > 0")
    _require(f["position_variance"] > 0.0, "filter.position_variance", "must be > 0")
    _require(f["amplitude_variance"] > 0.0, "filter.amplitude_variance", "must be > 0")

    t = values["perturbation"]
    for key in ("warp_amplitude", "warp_decay", "amp_amplitude", "amp_decay",
                "residual_amplitude", "residual_decay"):
        _require(t[key] >= 0.0, f"perturbation.{key}", "must be >= 0")
    residual_spec = None
    if t["residual_amplitude"] > 0.0:
        residual_spec = SmoothnessSpec(t["residual_amplitude"], t["residual_decay"])

    r = values["registration"]
    _require(r["levels"] >= 1, "registration.levels", "must be >= 1")
    _require(r["max_iters"] >= 1, "registration.max_iters", "must be >= 1")
    _require(r["smoothness_weight"] >= 0.0, "registration.smoothness_weight", "must be >= 0")
    _require(r["gradient_weight"] >= 0.0, "registration.gradient_weight", "must be >= 0")
    _require(r["step_tolerance"] > 0.0, "registration.step_tolerance", "must be > 0")

    post = values["postprocess"]
    _require(0.0 <= post["threshold"] < 1.0, "postprocess.threshold", "must be in [0, 1)")

    run = values["run"]
    _require(run["master_seed"] >= 0, "run.master_seed", "must be >= 0")
    _require(run["lanes"] >= 1, "run.lanes", "must be >= 1")

    return ExperimentConfig(
        grid=grid,
        epi=epi,
        population_kind=p["kind"],
        population_base=p["base"],
        population_blobs=p["blobs"],
        population_blob_amplitude=p["blob_amplitude"],
        population_blob_width=p["blob_width"],
        infection_center=(i["center_x"], i["center_y"]),
        infection_radius=i["radius"],
        infection_fraction=i["fraction"],
        n_members=e["size"],
        spinup_steps=e["spinup_steps"],
        cycle_steps=e["cycle_steps"],
        n_cycles=e["cycles"],
        variant=f["variant"],
        auto_tune=f["auto_tune"],
        obs_variance=f["obs_variance"],
        position_variance=f["position_variance"],
        amplitude_variance=f["amplitude_variance"],
        warp_spec=SmoothnessSpec(t["warp_amplitude"], t["warp_decay"]),
        amp_spec=SmoothnessSpec(t["amp_amplitude"], t["amp_decay"]),
        residual_spec=residual_spec,
        registration=RegistrationOptions(
            levels=r["levels"],
            smoothness_weight=r["smoothness_weight"],
            gradient_weight=r["gradient_weight"],
            max_iters=r["max_iters"],
            step_tolerance=r["step_tolerance"],
        ),
        threshold=post["threshold"],
        master_seed=run["master_seed"],
        lanes=run["lanes"],
    )


def parse_config(text: str, overrides: dict[str, object] | None = None) -> ExperimentConfig:
    """Parse config text; ``overrides`` maps "section.key" to replacement values."""
    values = _parse_raw(text)
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {dotted}")
        values[section][key] = value
    return build_config(values)


def load_config(path, overrides: dict[str, object] | None = None) -> ExperimentConfig:
    with io.open(path, "r", encoding="utf-8") as handle:
        return parse_config(handle.read(), overrides)


def config_values(config: ExperimentConfig) -> dict[str, dict[str, object]]:
    """Flat section -> key -> value echo of a resolved config (manifest use)."""
    residual_amplitude = 0.0
    residual_decay = SCHEMA["perturbation"]["residual_decay"][1]
    if config.residual_spec is not None:
        residual_amplitude = config.residual_spec.amplitude
        residual_decay = config.residual_spec.decay
    return {
        "grid": {
            "nx": config.grid.nx, "ny": config.grid.ny,
            "dx": config.grid.dx, "dy": config.grid.dy,
        },
        "model": {
            "alpha": config.epi.alpha,
            "spread_scale": config.epi.spread_scale,
            "removal_rate": config.epi.removal_rate,
            "dt": config.epi.dt,
            "cutoff_radius": config.epi.cutoff_radius,
        },
        "population": {
            "kind": config.population_kind,
            "base": config.population_base,
            "blobs": config.population_blobs,
            "blob_amplitude": config.population_blob_amplitude,
            "blob_width": config.population_blob_width,
        },
        "infection": {
            "center_x": config.infection_center[0],
            "center_y": config.infection_center[1],
            "radius": config.infection_radius,
            "fraction": config.infection_fraction,
        },
        "ensemble": {
            "size": config.n_members,
            "spinup_steps": config.spinup_steps,
            "cycle_steps": config.cycle_steps,
            "cycles": config.n_cycles,
        },
        "filter": {
            "variant": config.variant,
            "auto_tune": config.auto_tune,
            "obs_variance": config.obs_variance,
            "position_variance": config.position_variance,
            "amplitude_variance": config.amplitude_variance,
        },
        "perturbation": {
            "warp_amplitude": config.warp_spec.amplitude,
            "warp_decay": config.warp_spec.decay,
            "amp_amplitude": config.amp_spec.amplitude,
            "amp_decay": config.amp_spec.decay,
            "residual_amplitude": residual_amplitude,
            "residual_decay": residual_decay,
        },
        "registration": {
            "levels": config.registration.levels,
            "smoothness_weight": config.registration.smoothness_weight,
            "gradient_weight": config.registration.gradient_weight,
            "max_iters": config.registration.max_iters,
            "step_tolerance": config.registration.step_tolerance,
        },
        "postprocess": {"threshold": config.threshold},
        "run": {"master_seed": config.master_seed, "lanes": config.lanes},
    }
