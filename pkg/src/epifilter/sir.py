"""Stochastic spatial S-I-R cell model.

Cells infect each other through a distance kernel

    w(a, b) = alpha * exp(-dist(a, b) / spread_scale),

truncated to zero beyond ``cutoff_radius``.  Over one step of length
``dt`` each cell draws Poisson increments

    dS_i ~ Pois(S_i * sum_j w(i, j) * I_j * A * dt)   (new infections)
    dR_i ~ Pois(removal_rate * I_i * A * dt)          (removals)

with ``A`` the cell area, clamped so that no compartment goes negative:
``dS_i <= S_i`` and ``dR_i <= I_i + dS_i``.  All increments are computed
from the time-t state and applied at once, so the per-cell total
S + I + R is conserved exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as _signal

from .grid import Grid, ModelState

ERROR_BAD_PARAM = "epidemic parameters out of range"
ERROR_CUTOFF = "cutoff_radius must be >= spread_scale"
ERROR_NEGATIVE_STATE = "state has negative entries"
ERROR_CELL_RANGE = "cell index out of range"


@dataclass(frozen=True)
class EpiParams:
    """Epidemic model constants.

    alpha: infection coefficient (kernel height).
    spread_scale: e-folding distance of the kernel, km.
    removal_rate: per-capita removal intensity coefficient.
    dt: time step.
    cutoff_radius: kernel truncation distance, km.
    """

    alpha: float
    spread_scale: float
    removal_rate: float
    dt: float
    cutoff_radius: float

    def __post_init__(self):
        if self.alpha < 0.0 or self.spread_scale <= 0.0 or self.removal_rate < 0.0 or self.dt <= 0.0:
            raise ValueError(ERROR_BAD_PARAM)
        if self.cutoff_radius < self.spread_scale:
            raise ValueError(ERROR_CUTOFF)


def weight(point_a: tuple[float, float], point_b: tuple[float, float], params: EpiParams) -> float:
    """Infection kernel between two points in km; zero beyond the cutoff."""
    d = float(np.hypot(point_a[0] - point_b[0], point_a[1] - point_b[1]))
    if d > params.cutoff_radius:
        return 0.0
    return params.alpha * float(np.exp(-d / params.spread_scale))


def kernel_stencil(grid: Grid, params: EpiParams) -> np.ndarray:
    """Kernel sampled on cell-offset distances, for convolution with I."""
    mi = int(params.cutoff_radius / grid.dx)
    mj = int(params.cutoff_radius / grid.dy)
    di = np.arange(-mi, mi + 1) * grid.dx
    dj = np.arange(-mj, mj + 1) * grid.dy
    dist = np.hypot(di[:, None], dj[None, :])
    stencil = params.alpha * np.exp(-dist / params.spread_scale)
    stencil[dist > params.cutoff_radius] = 0.0
    return stencil


def infection_intensity(state: ModelState, cell: tuple[int, int], params: EpiParams) -> float:
    """Poisson intensity of new infections in one cell, by direct summation."""
    ci, cj = cell
    grid = state.grid
    if not (0 <= ci < grid.nx and 0 <= cj < grid.ny):
        raise IndexError(ERROR_CELL_RANGE)
    mi = int(params.cutoff_radius / grid.dx)
    mj = int(params.cutoff_radius / grid.dy)
    lo_i, hi_i = max(0, ci - mi), min(grid.nx, ci + mi + 1)
    lo_j, hi_j = max(0, cj - mj), min(grid.ny, cj + mj + 1)
    di = (np.arange(lo_i, hi_i) - ci) * grid.dx
    dj = (np.arange(lo_j, hi_j) - cj) * grid.dy
    dist = np.hypot(di[:, None], dj[None, :])
    w = params.alpha * np.exp(-dist / params.spread_scale)
    w[dist > params.cutoff_radius] = 0.0
    contact = float(np.sum(w * state.infected[lo_i:hi_i, lo_j:hi_j]))
    return float(state.susceptible[ci, cj]) * contact * grid.cell_area * params.dt


def _intensity_field(state: ModelState, params: EpiParams, stencil: np.ndarray) -> np.ndarray:
    contact = _signal.fftconvolve(state.infected, stencil, mode="same")
    # FFT round-off can leave tiny negatives where the exact sum is zero.
    np.maximum(contact, 0.0, out=contact)
    return state.susceptible * contact * state.grid.cell_area * params.dt


def step_stochastic(
    state: ModelState,
    params: EpiParams,
    rng: np.random.Generator,
    stencil: np.ndarray | None = None,
) -> ModelState:
    """One synchronous stochastic step; conserves S + I + R per cell."""
    s, i, r = state.susceptible, state.infected, state.removed
    if np.min(s) < 0.0 or np.min(i) < 0.0 or np.min(r) < 0.0:
        raise ValueError(ERROR_NEGATIVE_STATE)
    if stencil is None:
        stencil = kernel_stencil(state.grid, params)
    lam_s = _intensity_field(state, params, stencil)
    lam_r = params.removal_rate * i * state.grid.cell_area * params.dt
    ds = np.minimum(rng.poisson(lam_s).astype(float), s)
    dr = np.minimum(rng.poisson(lam_r).astype(float), i + ds)
    return ModelState(state.grid, s - ds, i + ds - dr, r + dr, state.time + params.dt)


def advance(
    state: ModelState,
    n_steps: int,
    params: EpiParams,
    rng: np.random.Generator,
) -> ModelState:
    """Run ``n_steps`` stochastic steps; ``n_steps = 0`` returns the input."""
    if n_steps == 0:
        return state
    stencil = kernel_stencil(state.grid, params)
    for _ in range(n_steps):
        state = step_stochastic(state, params, rng, stencil=stencil)
    return state
