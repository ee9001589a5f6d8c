"""Orthonormal 2-D sine transform and smooth random fields.

The transform is the type-I discrete sine transform with orthonormal
scaling, applied along both axes.  Its basis on ``n`` nodes is

    phi_p(i) = sqrt(2 / (n + 1)) * sin(pi * p * (i + 1) / (n + 1)),

for 1-based mode number ``p = 1..n`` and node index ``i = 0..n-1``.  The
transform matrix is symmetric and orthogonal, so the transform is its own
inverse and preserves the Euclidean norm.  Array index ``(a, b)`` of a
coefficient array corresponds to mode ``(a + 1, b + 1)``.

Smooth random fields are drawn by sampling independent centered normal
coefficients whose standard deviation decays with the radial mode number,
then inverse transforming.  Coefficients are drawn on the grid interior
and embedded in a zero ring, so the implicit zero line of the sine basis
coincides with the actual boundary nodes: generated fields are exactly
zero there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as _fft

from .grid import Grid

ERROR_NEGATIVE_AMPLITUDE = "amplitude must be >= 0"
ERROR_NEGATIVE_DECAY = "decay must be >= 0"
ERROR_NOT_2D = "expected a 2-D array"


def dst2_forward(field: np.ndarray) -> np.ndarray:
    """Coefficients of ``field`` in the orthonormal 2-D sine basis."""
    field = np.asarray(field, dtype=float)
    if field.ndim != 2:
        raise ValueError(ERROR_NOT_2D)
    return _fft.dstn(field, type=1, norm="ortho")


def dst2_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Field with the given sine coefficients (the transform is self-inverse)."""
    return dst2_forward(coeffs)


@dataclass(frozen=True)
class SmoothnessSpec:
    """Spectrum of a smooth random field.

    Mode ``(p, q)`` (1-based) gets standard deviation
    ``amplitude * exp(-decay * sqrt(p**2 + q**2))``.  Larger ``decay``
    means smoother draws; ``amplitude`` sets the overall scale.
    """

    amplitude: float
    decay: float

    def __post_init__(self):
        if self.amplitude < 0.0:
            raise ValueError(ERROR_NEGATIVE_AMPLITUDE)
        if self.decay < 0.0:
            raise ValueError(ERROR_NEGATIVE_DECAY)


def mode_stddev(spec: SmoothnessSpec, n_modes_x: int, n_modes_y: int) -> np.ndarray:
    """Per-mode standard deviations for modes (1..n_modes_x, 1..n_modes_y)."""
    p = np.arange(1, n_modes_x + 1, dtype=float)
    q = np.arange(1, n_modes_y + 1, dtype=float)
    radial = np.sqrt(p[:, None] ** 2 + q[None, :] ** 2)
    return spec.amplitude * np.exp(-spec.decay * radial)


def random_smooth_field(grid: Grid, spec: SmoothnessSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw one smooth random field on the grid, exactly zero at the boundary.

    Coefficients are drawn on the (nx-2) x (ny-2) interior and inverse
    transformed there; the boundary ring is identically zero, which keeps
    warping mappings built from such fields fixed at the domain edge.
    """
    ni, nj = grid.nx - 2, grid.ny - 2
    std = mode_stddev(spec, ni, nj)
    coeffs = rng.normal(0.0, 1.0, size=(ni, nj)) * std
    out = np.zeros(grid.shape)
    out[1:-1, 1:-1] = dst2_inverse(coeffs)
    return out
