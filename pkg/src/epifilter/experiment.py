"""Assimilation-cycle experiment: twin-data runs of the four filter variants.

One experiment builds a synthetic population raster, seeds an infection,
spins the model up, perturbs the spun-up state into an initial ensemble,
and then alternates analysis and advance against data synthesized from an
independent truth run.  All filtering happens on population fractions;
after each analysis the states are clipped, thresholded, renormalized and
rescaled so that the people count in every cell equals the population
raster again.

Variants: "enkf" and "fft_enkf" filter the raw fields; "morphing_enkf"
and "morphing_fft_enkf" filter the morphing representation (registration
mapping plus amplitude residuals), which lets the analysis move the
infection wave spatially.
"""
from __future__ import annotations

import logging
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import streams
from .config import MORPHING_VARIANTS, ExperimentConfig
from .enkf import OBSERVED_BLOCK_INFECTED, ObsSpec, dense_analysis
from .fft_enkf import fft_enkf_analysis
from .grid import Ensemble, Grid, ModelState, ensemble_mean
from .morphing import (
    FILTER_DENSE,
    FILTER_SPECTRAL,
    MorphObsParams,
    initial_ensemble,
    morphing_analysis_full,
    perturb_state,
)
from .sir import advance

log = logging.getLogger(__name__)

ERROR_SHAPE_MISMATCH = "field shapes do not match"
ERROR_ZERO_FIELD = "centroid of an all-zero field is undefined"

VARIANCE_FLOOR = 1e-12


def build_population(config: ExperimentConfig) -> np.ndarray:
    """Synthetic positive population raster (people per cell)."""
    grid = config.grid
    pop = np.full(grid.shape, float(config.population_base))
    if config.population_kind == "blobs" and config.population_blobs > 0:
        rng = streams.derive(config.master_seed, streams.POPULATION)
        x, y = grid.cell_centers()
        for _ in range(config.population_blobs):
            cx = rng.uniform(0.0, grid.nx * grid.dx)
            cy = rng.uniform(0.0, grid.ny * grid.dy)
            bump = np.exp(
                -((x[:, None] - cx) ** 2 + (y[None, :] - cy) ** 2)
                / (2.0 * config.population_blob_width**2)
            )
            pop += config.population_blob_amplitude * bump
    return pop


def initial_state(config: ExperimentConfig, population: np.ndarray) -> ModelState:
    """Everyone susceptible except an infected disc around the seed cell."""
    grid = config.grid
    ci, cj = config.infection_center
    ii, jj = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny), indexing="ij")
    mask = (ii - ci) ** 2 + (jj - cj) ** 2 <= config.infection_radius**2
    infected = np.where(mask, config.infection_fraction * population, 0.0)
    return ModelState(grid, population - infected, infected, np.zeros(grid.shape), time=0.0)


def to_fraction(state: ModelState, population: np.ndarray) -> ModelState:
    """Scale compartments to fractions of the local population."""
    blocks = state.blocks()
    out = np.zeros_like(blocks)
    np.divide(blocks, population[None], out=out, where=population[None] > 0.0)
    return state.with_blocks(out)


def postprocess(state: ModelState, population: np.ndarray, threshold: float) -> ModelState:
    """Make a fraction-space analysis state physical and rescale to people.

    Clip each fraction to [0, 1], zero infected fractions below the
    threshold, renormalize each cell to sum to one (cells losing all mass
    become fully susceptible), then multiply by the population so every
    cell holds exactly its population again.
    """
    blocks = np.clip(state.blocks(), 0.0, 1.0)
    infected = blocks[1]
    infected[infected < threshold] = 0.0
    total = blocks.sum(axis=0)
    empty = total <= 0.0
    safe_total = np.where(empty, 1.0, total)
    blocks = blocks / safe_total
    blocks[0][empty] = 1.0
    blocks[1][empty] = 0.0
    blocks[2][empty] = 0.0
    return state.with_blocks(blocks * population[None])


def rmse(field_a: np.ndarray, field_b: np.ndarray) -> float:
    """Root-mean-square difference of two fields."""
    if field_a.shape != field_b.shape:
        raise ValueError(ERROR_SHAPE_MISMATCH)
    return float(np.sqrt(np.mean((field_a - field_b) ** 2)))


def centroid(field: np.ndarray, grid: Grid) -> tuple[float, float]:
    """Mass-weighted mean position (km) of a nonneg intensity field."""
    mass = float(np.sum(field))
    if mass <= 0.0:
        raise ValueError(ERROR_ZERO_FIELD)
    x, y = grid.cell_centers()
    cx = float(np.sum(field.sum(axis=1) * x)) / mass
    cy = float(np.sum(field.sum(axis=0) * y)) / mass
    return cx, cy


def centroid_error(field_a: np.ndarray, field_b: np.ndarray, grid: Grid) -> float:
    """Distance in km between the centroids of two fields."""
    if field_a.shape != field_b.shape:
        raise ValueError(ERROR_SHAPE_MISMATCH)
    ax, ay = centroid(field_a, grid)
    bx, by = centroid(field_b, grid)
    return float(np.hypot(ax - bx, ay - by))


def _centroid_error_or_nan(field_a: np.ndarray, field_b: np.ndarray, grid: Grid) -> float:
    try:
        return centroid_error(field_a, field_b, grid)
    except ValueError:
        return float("nan")


def synthesize_data(config: ExperimentConfig, population: np.ndarray | None = None) -> list[np.ndarray]:
    """Infected fields of an independent truth run, one per analysis time.

    The truth trajectory is initialized exactly like the ensemble (same
    initial condition, own random stream, same spinup length, one random
    position/amplitude perturbation) and then advanced cycle_steps between
    frames.  Frame j is the infected field at time
    spinup + j * cycle_steps, j = 0 .. cycles - 1.
    """
    if population is None:
        population = build_population(config)
    rng = streams.derive(config.master_seed, streams.TRUTH)
    state = initial_state(config, population)
    state = advance(state, config.spinup_steps, config.epi, rng)
    state = perturb_state(
        state, config.warp_spec, config.amp_spec, rng, residual_spec=config.residual_spec
    )
    frames = []
    for j in range(config.n_cycles):
        if j > 0:
            state = advance(state, config.cycle_steps, config.epi, rng)
        frames.append(state.infected.copy())
    return frames


@dataclass
class CycleReport:
    """Metrics and field dumps of one assimilation cycle."""

    cycle: int
    time: float
    forecast_infected: np.ndarray
    data_infected: np.ndarray
    analysis_infected: np.ndarray
    forecast_rmse: float
    analysis_rmse: float
    forecast_centroid_error_km: float
    analysis_centroid_error_km: float
    centroid_shift_km: float
    obs_variance_used: float
    position_variance_used: float
    wall_clock_seconds: float


REPORT_COLUMNS = (
    "cycle",
    "time",
    "forecast_rmse",
    "analysis_rmse",
    "forecast_centroid_error_km",
    "analysis_centroid_error_km",
    "centroid_shift_km",
    "obs_variance_used",
    "position_variance_used",
)


def _advance_states(states, rngs, n_steps, config):
    if config.lanes <= 1 or len(states) <= 1:
        return [advance(s, n_steps, config.epi, r) for s, r in zip(states, rngs)]
    with ThreadPoolExecutor(max_workers=config.lanes) as pool:
        return list(pool.map(lambda pair: advance(pair[0], n_steps, config.epi, pair[1]), zip(states, rngs)))


def run_cycle(
    ens: Ensemble,
    data: np.ndarray,
    config: ExperimentConfig,
    rng: np.random.Generator,
    member_rngs: list | None = None,
    population: np.ndarray | None = None,
    obs_variance: float | None = None,
    position_variance: float | None = None,
) -> tuple[Ensemble, CycleReport]:
    """One analysis step plus the following model advance.

    ``rng`` drives the data perturbations.  ``member_rngs`` supplies one
    continuing stream per member (plus one for the reference member);
    when omitted, fresh per-member streams are derived from the master
    seed.  ``obs_variance`` / ``position_variance`` carry variances tuned
    in an earlier cycle; with auto-tuning enabled and no carried value the
    variance is measured from the forecast spread of this cycle.
    """
    started = _time.perf_counter()
    grid = config.grid
    if population is None:
        population = build_population(config)
    if member_rngs is None:
        member_rngs = [
            streams.member_stream(config.master_seed, k)
            for k in range(1, len(ens.members) + 2)
        ]
    morphing = config.variant in MORPHING_VARIANTS

    cycle_time = ens.members[0].time
    frac_members = [to_fraction(m, population) for m in ens.members]
    frac_reference = None
    if ens.reference is not None:
        frac_reference = to_fraction(ens.reference, population)
    data_fraction = np.zeros_like(data)
    np.divide(data, population, out=data_fraction, where=population > 0.0)

    position_variance_used = float("nan")
    obs_variance_used = float("nan")
    if morphing:
        if position_variance is None:
            # <= 0 asks the morphing analysis to tune from forecast spread.
            position_variance = 0.0 if config.auto_tune else config.position_variance
        obs = MorphObsParams(position_variance, config.amplitude_variance)
        kind = FILTER_DENSE if config.variant == "morphing_enkf" else FILTER_SPECTRAL
        analysis, info = morphing_analysis_full(
            Ensemble(frac_members, reference=frac_reference),
            data_fraction,
            kind,
            obs,
            config.registration,
            rng,
        )
        position_variance_used = info.position_variance_used
        forecast_mean_infected = info.forecast_mean.infected * population
    else:
        if obs_variance is None:
            if config.auto_tune:
                # Spread-weighted mean of the per-cell forecast variance: the
                # plain mean would be diluted by the empty background, push the
                # per-mode gains toward one and make the analysis copy the
                # data; weighting by the variance itself recovers the typical
                # variance of the cells that actually spread, which puts the
                # analysis roughly half way between forecast and data there.
                spread = np.var(np.stack([m.infected for m in frac_members]), axis=0, ddof=1)
                total = float(np.sum(spread))
                weighted = float(np.sum(spread**2)) / total if total > 0.0 else 0.0
                obs_variance = max(weighted, VARIANCE_FLOOR)
            else:
                obs_variance = config.obs_variance
        obs_variance_used = obs_variance
        obs = ObsSpec(OBSERVED_BLOCK_INFECTED, obs_variance, data_fraction)
        forecast_mean_infected = ensemble_mean(ens).infected
        forecast = Ensemble(frac_members, reference=frac_reference)
        if config.variant == "enkf":
            analysis = dense_analysis(forecast, obs, rng)
        else:
            analysis = fft_enkf_analysis(forecast, obs, rng)

    processed_members = [postprocess(m, population, config.threshold) for m in analysis.members]
    processed_reference = None
    if analysis.reference is not None:
        processed_reference = postprocess(analysis.reference, population, config.threshold)

    if morphing and processed_reference is not None:
        analysis_mean_infected = processed_reference.infected
    else:
        analysis_mean_infected = np.mean([m.infected for m in processed_members], axis=0)

    report = CycleReport(
        cycle=0,
        time=cycle_time,
        forecast_infected=forecast_mean_infected,
        data_infected=np.asarray(data, dtype=float).copy(),
        analysis_infected=analysis_mean_infected,
        forecast_rmse=rmse(forecast_mean_infected, data),
        analysis_rmse=rmse(analysis_mean_infected, data),
        forecast_centroid_error_km=_centroid_error_or_nan(forecast_mean_infected, data, grid),
        analysis_centroid_error_km=_centroid_error_or_nan(analysis_mean_infected, data, grid),
        centroid_shift_km=_centroid_error_or_nan(analysis_mean_infected, forecast_mean_infected, grid),
        obs_variance_used=obs_variance_used,
        position_variance_used=position_variance_used,
        wall_clock_seconds=0.0,
    )

    all_states = list(processed_members)
    all_rngs = list(member_rngs[: len(processed_members)])
    if processed_reference is not None:
        all_states.append(processed_reference)
        all_rngs.append(member_rngs[len(processed_members)])
    advanced = _advance_states(all_states, all_rngs, config.cycle_steps, config)
    if processed_reference is not None:
        next_ens = Ensemble(advanced[:-1], reference=advanced[-1])
    else:
        next_ens = Ensemble(advanced, reference=None)
    report.wall_clock_seconds = _time.perf_counter() - started
    return next_ens, report


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    figures: bool = True,
) -> list[CycleReport]:
    """Full twin experiment; optionally write dumps, report, and manifest."""
    timings: dict[str, object] = {}
    started = _time.perf_counter()
    population = build_population(config)
    init = initial_state(config, population)
    base = advance(init, config.spinup_steps, config.epi, streams.derive(config.master_seed, streams.SPINUP))
    ens = initial_ensemble(
        base,
        config.n_members,
        config.warp_spec,
        config.amp_spec,
        streams.derive(config.master_seed, streams.INIT),
        residual_spec=config.residual_spec,
    )
    timings["spinup"] = _time.perf_counter() - started

    data_started = _time.perf_counter()
    data_frames = synthesize_data(config, population)
    timings["synthesize"] = _time.perf_counter() - data_started

    noise_rng = streams.derive(config.master_seed, streams.NOISE)
    member_rngs = [
        streams.member_stream(config.master_seed, k) for k in range(1, config.n_members + 2)
    ]

    writer = None
    if out_dir is not None:
        from .fieldio import ExperimentWriter  # deferred: optional output path

        writer = ExperimentWriter(Path(out_dir), config, figures=figures)
        writer.write_spinup(base)

    reports: list[CycleReport] = []
    obs_variance = None
    position_variance = None
    cycle_times: list[float] = []
    for j, data in enumerate(data_frames):
        ens, report = run_cycle(
            ens,
            data,
            config,
            noise_rng,
            member_rngs=member_rngs,
            population=population,
            obs_variance=obs_variance,
            position_variance=position_variance,
        )
        report.cycle = j + 1
        if j == 0:
            if np.isfinite(report.obs_variance_used):
                obs_variance = report.obs_variance_used
            if np.isfinite(report.position_variance_used):
                position_variance = report.position_variance_used
        reports.append(report)
        cycle_times.append(report.wall_clock_seconds)
        log.info(
            "cycle %d: forecast rmse %.4g, analysis rmse %.4g",
            report.cycle, report.forecast_rmse, report.analysis_rmse,
        )
        if writer is not None:
            writer.write_cycle(report)
    timings["cycles"] = cycle_times
    timings["total"] = _time.perf_counter() - started

    if writer is not None:
        writer.write_report(reports)
        writer.write_manifest(reports, timings)
    return reports
