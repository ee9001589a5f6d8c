"""Matplotlib rendering of field dumps to PNG files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grid import Grid

DPI = 110


def _extent(grid: Grid) -> tuple[float, float, float, float]:
    return (0.0, grid.nx * grid.dx, 0.0, grid.ny * grid.dy)


def _imshow(ax, field: np.ndarray, grid: Grid, vmax: float | None = None):
    # Transpose so the x index runs along the horizontal axis.
    return ax.imshow(
        np.asarray(field).T,
        origin="lower",
        extent=_extent(grid),
        cmap="viridis",
        vmin=0.0,
        vmax=vmax,
        interpolation="nearest",
    )


def save_field_figure(field: np.ndarray, grid: Grid, path: str | Path, title: str = "") -> None:
    """One field as a labeled heat map."""
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    image = _imshow(ax, field, grid)
    ax.set_xlabel("x (km)")
    ax.set_ylabel("y (km)")
    if title:
        ax.set_title(title)
    fig.colorbar(image, ax=ax, label="people per cell")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_cycle_figure(report, grid: Grid, path: str | Path, variant: str = "") -> None:
    """Forecast mean, data, and analysis mean of one cycle side by side."""
    fields = (report.forecast_infected, report.data_infected, report.analysis_infected)
    titles = ("forecast mean", "data", "analysis mean")
    vmax = max(float(np.max(f)) for f in fields) or None
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.9), sharey=True)
    for ax, field, title in zip(axes, fields, titles):
        image = _imshow(ax, field, grid, vmax=vmax)
        ax.set_title(title)
        ax.set_xlabel("x (km)")
    axes[0].set_ylabel("y (km)")
    label = f"cycle {report.cycle}" + (f", {variant}" if variant else "")
    fig.suptitle(f"infected field, {label}")
    fig.colorbar(image, ax=axes, label="people per cell", fraction=0.025)
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_state_figure(state, path: str | Path, title: str = "") -> None:
    """Susceptible, infected, and removed fields of one state."""
    fields = (state.susceptible, state.infected, state.removed)
    titles = ("susceptible", "infected", "removed")
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.9), sharey=True)
    for ax, field, name in zip(axes, fields, titles):
        image = _imshow(ax, field, state.grid)
        ax.set_title(name)
        ax.set_xlabel("x (km)")
        fig.colorbar(image, ax=ax, fraction=0.046)
    axes[0].set_ylabel("y (km)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
