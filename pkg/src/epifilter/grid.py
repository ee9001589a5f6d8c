"""Grid geometry, multi-block model state, and ensemble containers.

Conventions used throughout the package:

* fields are 2-D float arrays of shape ``(nx, ny)`` with x along the first
  axis (row-major),
* the center of cell ``(i, j)`` sits at ``((i + 0.5) * dx, (j + 0.5) * dy)``
  in km, so the domain spans ``[0, nx * dx] x [0, ny * dy]``,
* states in absolute units count people per cell.

State and ensemble objects are treated as immutable after construction;
every operation returns a new object and never writes into its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

MIN_SIDE = 4

ERROR_GRID_TOO_SMALL = f"grid needs at least {MIN_SIDE} cells per side"
ERROR_BAD_SPACING = "cell spacing must be positive"
ERROR_BLOCK_SHAPE = "field block shape does not match the grid"
ERROR_EMPTY_ENSEMBLE = "ensemble has no members"


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid of cells."""

    nx: int
    ny: int
    dx: float
    dy: float

    def __post_init__(self):
        if self.nx < MIN_SIDE or self.ny < MIN_SIDE:
            raise ValueError(ERROR_GRID_TOO_SMALL)
        if self.dx <= 0.0 or self.dy <= 0.0:
            raise ValueError(ERROR_BAD_SPACING)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Center coordinates in km: arrays of shape (nx,) and (ny,)."""
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return x, y


def make_grid(nx: int, ny: int, dx: float, dy: float) -> Grid:
    """Build a grid, rejecting degenerate dimensions and spacings."""
    return Grid(int(nx), int(ny), float(dx), float(dy))


@dataclass
class ModelState:
    """Susceptible / infected / removed fields on one grid at one time."""

    grid: Grid
    susceptible: np.ndarray
    infected: np.ndarray
    removed: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        for block in (self.susceptible, self.infected, self.removed):
            if block.shape != self.grid.shape:
                raise ValueError(ERROR_BLOCK_SHAPE)

    def blocks(self) -> np.ndarray:
        """Stack the three fields into one (3, nx, ny) array."""
        return np.stack([self.susceptible, self.infected, self.removed])

    def with_blocks(self, blocks: np.ndarray, time: float | None = None) -> "ModelState":
        """New state with the same grid and the given (3, nx, ny) fields."""
        return ModelState(
            self.grid,
            np.asarray(blocks[0], dtype=float),
            np.asarray(blocks[1], dtype=float),
            np.asarray(blocks[2], dtype=float),
            self.time if time is None else time,
        )

    def copy(self) -> "ModelState":
        return self.with_blocks(self.blocks().copy())


@dataclass
class Ensemble:
    """A list of members plus an optional reference member.

    The reference member (used by the morphing filters as the registration
    template) is carried alongside the members and is excluded from means.
    """

    members: list
    reference: object | None = None

    @property
    def size(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def all_states(self) -> list:
        """Members followed by the reference member, when present."""
        if self.reference is None:
            return list(self.members)
        return list(self.members) + [self.reference]


def total_population(state: ModelState) -> float:
    """People in all compartments over the whole grid."""
    return float(np.sum(state.susceptible) + np.sum(state.infected) + np.sum(state.removed))


def ensemble_mean(ens: Ensemble) -> ModelState:
    """Per-cell arithmetic mean of the members (reference excluded)."""
    if ens.size == 0:
        raise ValueError(ERROR_EMPTY_ENSEMBLE)
    stacked = np.stack([m.blocks() for m in ens.members])
    return ens.members[0].with_blocks(stacked.mean(axis=0))
