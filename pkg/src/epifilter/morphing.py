"""Morphing transform: registration, warping, and position-aware analysis.

A warping mapping T assigns every cell center a displacement in km; a
field is warped by sampling it at the displaced positions,

    (u o (I + T))(x) = u(x + T(x)),

with bilinear interpolation and positions clamped to the domain.  The
morphing transform of a member u against a reference field u_ref is the
pair of a registration mapping T (chosen so the observed block of u is
approximately u_ref o (I + T)) and amplitude residuals

    r_j = u_j o (I + T)^-1 - u_ref_j,

one per block.  Its inverse reconstructs u_j = (u_ref_j + r_j) o (I + T).
Filtering the (T, r) representation instead of the raw fields lets an
ensemble filter move features spatially: position information lives in T,
amplitude information in r, and linear combinations of morphing states
interpolate positions instead of superposing bumps.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage as _ndimage

from .enkf import ObsComponent, analyze_blocks, draw_obs_noise
from .fft_enkf import fft_analyze_blocks
from .grid import Ensemble, Grid, ModelState
from .spectral import SmoothnessSpec, random_smooth_field

log = logging.getLogger(__name__)

AMPLITUDE_FLOOR = 1e-3  # keeps 1 + s strictly positive
DEFAULT_INVERT_TOL = 0.1  # cells
DEFAULT_INVERT_ITERS = 50
MIN_LEVEL_SIDE = 8
GRADIENT_LIMIT = 0.9  # max displacement gradient (cell units) of registrations

ERROR_MAPPING_SHAPE = "displacement shape does not match the grid"
ERROR_NOT_INVERTIBLE = "mapping is not orientation-preserving (Jacobian changes sign)"
ERROR_NO_REFERENCE = "morphing needs an ensemble with a reference member"
ERROR_BAD_LEVELS = "levels must be >= 1"
ERROR_BAD_FILTER = "unknown filter kind"

FILTER_DENSE = "dense"
FILTER_SPECTRAL = "spectral"


@dataclass(frozen=True)
class WarpMapping:
    """Displacement field (km) on a grid; zero at the boundary by construction."""

    grid: Grid
    tx: np.ndarray
    ty: np.ndarray

    def __post_init__(self):
        if self.tx.shape != self.grid.shape or self.ty.shape != self.grid.shape:
            raise ValueError(ERROR_MAPPING_SHAPE)

    def max_displacement(self) -> float:
        """Largest displacement magnitude in km."""
        return float(np.max(np.hypot(self.tx, self.ty)))


@dataclass(frozen=True)
class RegistrationOptions:
    """Knobs of the multilevel registration solver.

    smoothness_weight penalizes displacement magnitude, gradient_weight its
    spatial variation; both act on displacements measured in cells, so the
    same weights work at every pyramid level.  step_tolerance (cells) stops
    a level once accepted updates become smaller than it.
    """

    levels: int = 4
    smoothness_weight: float = 1e-5
    gradient_weight: float = 3e-3
    max_iters: int = 200
    step_tolerance: float = 1e-2

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(ERROR_BAD_LEVELS)


@dataclass(frozen=True)
class MorphState:
    """Morphing representation of one member: mapping plus residual blocks."""

    warp: WarpMapping
    residuals: tuple


@dataclass(frozen=True)
class MorphObsParams:
    """Observation variances in morphing space.

    position_variance (km^2) applies to both displacement components;
    amplitude_variance to the observed residual block.  Set the amplitude
    variance very large to make the analysis act on positions only.
    """

    position_variance: float
    amplitude_variance: float


def random_smooth_mapping(grid: Grid, spec: SmoothnessSpec, rng: np.random.Generator) -> WarpMapping:
    """Random mapping with smooth components (km), zero at the boundary."""
    tx = random_smooth_field(grid, spec, rng)
    ty = random_smooth_field(grid, spec, rng)
    return WarpMapping(grid, tx, ty)


def _sample(field: np.ndarray, pos_i: np.ndarray, pos_j: np.ndarray) -> np.ndarray:
    """Bilinear sample at fractional index positions, clamped to the domain."""
    return _ndimage.map_coordinates(field, [pos_i, pos_j], order=1, mode="nearest")


def _warp_index(field: np.ndarray, disp_i: np.ndarray, disp_j: np.ndarray) -> np.ndarray:
    nx, ny = field.shape
    base_i, base_j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    return _sample(field, base_i + disp_i, base_j + disp_j)


def warp(field: np.ndarray, mapping: WarpMapping) -> np.ndarray:
    """Evaluate field o (I + T) on the grid."""
    grid = mapping.grid
    return _warp_index(np.asarray(field, dtype=float), mapping.tx / grid.dx, mapping.ty / grid.dy)


def _jacobian_determinant(mapping: WarpMapping) -> np.ndarray:
    gxx = np.gradient(mapping.tx, mapping.grid.dx, axis=0)
    gxy = np.gradient(mapping.tx, mapping.grid.dy, axis=1)
    gyx = np.gradient(mapping.ty, mapping.grid.dx, axis=0)
    gyy = np.gradient(mapping.ty, mapping.grid.dy, axis=1)
    return (1.0 + gxx) * (1.0 + gyy) - gxy * gyx


def invert_mapping(
    mapping: WarpMapping,
    tolerance: float = DEFAULT_INVERT_TOL,
    max_iters: int = DEFAULT_INVERT_ITERS,
) -> WarpMapping:
    """Displacement S with (I + T) o (I + S) ~ I, by fixed-point iteration.

    Iterates S <- -T o (I + S) until the composition defect is below
    ``tolerance`` cells (max over nodes and components) or ``max_iters``
    is reached.  Raises if the mapping folds over (non-positive Jacobian).
    """
    if np.min(_jacobian_determinant(mapping)) <= 0.0:
        raise ValueError(ERROR_NOT_INVERTIBLE)
    grid = mapping.grid
    ti, tj = mapping.tx / grid.dx, mapping.ty / grid.dy
    si = np.zeros_like(ti)
    sj = np.zeros_like(tj)
    for _ in range(max_iters):
        ti_at_s = _warp_index(ti, si, sj)
        tj_at_s = _warp_index(tj, si, sj)
        defect = max(np.max(np.abs(si + ti_at_s)), np.max(np.abs(sj + tj_at_s)))
        si, sj = -ti_at_s, -tj_at_s
        if defect < tolerance:
            break
    else:
        log.warning("mapping inversion stopped at defect %.3g cells", defect)
    return WarpMapping(grid, si * grid.dx, sj * grid.dy)


def _restrict(field: np.ndarray) -> np.ndarray:
    """Halve both dimensions by averaging 2x2 blocks (edge groups may be single)."""
    nx, ny = field.shape
    rows = np.add.reduceat(field, np.arange(0, nx, 2), axis=0)
    both = np.add.reduceat(rows, np.arange(0, ny, 2), axis=1)
    wx = np.minimum(np.arange(0, nx, 2) + 2, nx) - np.arange(0, nx, 2)
    wy = np.minimum(np.arange(0, ny, 2) + 2, ny) - np.arange(0, ny, 2)
    return both / (wx[:, None] * wy[None, :])


def _prolong(field: np.ndarray, fine_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear interpolation back to the finer shape (inverse of _restrict geometry)."""
    fi, fj = np.meshgrid(np.arange(fine_shape[0]), np.arange(fine_shape[1]), indexing="ij")
    return _sample(field, (fi - 0.5) / 2.0, (fj - 0.5) / 2.0)


def _grad_adjoint(w: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of np.gradient along one axis (central interior, one-sided edges)."""
    w = np.moveaxis(w, axis, 0)
    out = np.zeros_like(w)
    out[2:] += w[1:-1] / 2.0
    out[:-2] -= w[1:-1] / 2.0
    out[1] += w[0]
    out[0] -= w[0]
    out[-1] += w[-1]
    out[-2] -= w[-1]
    return np.moveaxis(out, 0, axis)


def _gradient_norm(ui: np.ndarray, uj: np.ndarray) -> float:
    """Largest row norm of the displacement Jacobian, in cell units."""
    gii, gij = np.gradient(ui, axis=0), np.gradient(ui, axis=1)
    gji, gjj = np.gradient(uj, axis=0), np.gradient(uj, axis=1)
    return float(np.max(np.maximum(np.abs(gii) + np.abs(gij), np.abs(gji) + np.abs(gjj))))


def _limit_gradient(ui: np.ndarray, uj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Keep the displacement Jacobian row norm (cell units) below one.

    That makes I + T orientation preserving and the inversion fixed point
    a contraction, whatever the data drove the registration to.  Local
    spikes are diffused away first; only if smoothing is not enough is the
    whole field scaled back.
    """
    for _ in range(4):
        if _gradient_norm(ui, uj) <= GRADIENT_LIMIT:
            return ui, uj
        ui = _zero_boundary(_ndimage.gaussian_filter(ui, 0.7))
        uj = _zero_boundary(_ndimage.gaussian_filter(uj, 0.7))
    norm = _gradient_norm(ui, uj)
    if norm > GRADIENT_LIMIT:
        scale = GRADIENT_LIMIT / norm
        log.debug("registration displacement scaled by %.3f to stay invertible", scale)
        ui, uj = ui * scale, uj * scale
    return ui, uj


def _zero_boundary(field: np.ndarray) -> np.ndarray:
    field[0, :] = 0.0
    field[-1, :] = 0.0
    field[:, 0] = 0.0
    field[:, -1] = 0.0
    return field


def _objective(moving, reference, ui, uj, opts):
    residual = moving - _warp_index(reference, ui, uj)
    data = np.mean(residual**2)
    smooth = opts.smoothness_weight * np.mean(ui**2 + uj**2)
    grad = opts.gradient_weight * np.mean(
        np.gradient(ui, axis=0) ** 2
        + np.gradient(ui, axis=1) ** 2
        + np.gradient(uj, axis=0) ** 2
        + np.gradient(uj, axis=1) ** 2
    )
    return data + smooth + grad, residual


def _objective_gradient(residual, reference, ui, uj, opts):
    n_nodes = residual.size
    ref_gi = np.gradient(reference, axis=0)
    ref_gj = np.gradient(reference, axis=1)
    gi = -2.0 * residual * _warp_index(ref_gi, ui, uj)
    gj = -2.0 * residual * _warp_index(ref_gj, ui, uj)
    gi += 2.0 * opts.smoothness_weight * ui
    gj += 2.0 * opts.smoothness_weight * uj
    for axis in (0, 1):
        gi += 2.0 * opts.gradient_weight * _grad_adjoint(np.gradient(ui, axis=axis), axis)
        gj += 2.0 * opts.gradient_weight * _grad_adjoint(np.gradient(uj, axis=axis), axis)
    return gi / n_nodes, gj / n_nodes


def _descend_level(moving, reference, ui, uj, opts):
    """Gradient descent with backtracking on one pyramid level."""
    value, residual = _objective(moving, reference, ui, uj, opts)
    step = 1.0
    for _ in range(opts.max_iters):
        gi, gj = _objective_gradient(residual, reference, ui, uj, opts)
        scale = max(np.max(np.abs(gi)), np.max(np.abs(gj)))
        if scale == 0.0:
            break
        moved = None
        while step > 1e-8:
            trial_i = _zero_boundary(ui - step * gi / scale)
            trial_j = _zero_boundary(uj - step * gj / scale)
            trial_value, trial_residual = _objective(moving, reference, trial_i, trial_j, opts)
            if trial_value < value:
                moved = max(
                    np.max(np.abs(trial_i - ui)), np.max(np.abs(trial_j - uj))
                )
                ui, uj = trial_i, trial_j
                value, residual = trial_value, trial_residual
                step *= 1.5
                break
            step *= 0.5
        if moved is None:
            break
        if moved < opts.step_tolerance:
            break
    return ui, uj


def register(
    moving: np.ndarray,
    reference: np.ndarray,
    grid: Grid,
    opts: RegistrationOptions = RegistrationOptions(),
) -> WarpMapping:
    """Mapping T with moving ~ reference o (I + T), coarse-to-fine.

    Both fields are normalized by their own maximum before matching, so
    only shape and position drive the mapping; amplitude differences are
    left to the residuals.  A zero-max input registers to the identity.
    The result is scaled back, if necessary, so that the mapping stays
    orientation-preserving (and therefore invertible).
    """
    moving = np.asarray(moving, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if np.max(np.abs(moving)) == 0.0 or np.max(np.abs(reference)) == 0.0:
        zeros = np.zeros(grid.shape)
        return WarpMapping(grid, zeros, zeros.copy())
    moving = moving / np.max(np.abs(moving))
    reference = reference / np.max(np.abs(reference))

    pyramid = [(moving, reference)]
    while len(pyramid) < opts.levels and min(pyramid[-1][0].shape) >= 2 * MIN_LEVEL_SIDE:
        m, f = pyramid[-1]
        pyramid.append((_restrict(m), _restrict(f)))

    ui = np.zeros(pyramid[-1][0].shape)
    uj = np.zeros_like(ui)
    for level, (m, f) in enumerate(reversed(pyramid)):
        if level > 0:
            ui = _zero_boundary(2.0 * _prolong(ui, m.shape))
            uj = _zero_boundary(2.0 * _prolong(uj, m.shape))
        ui, uj = _descend_level(m, f, ui, uj, opts)
    ui, uj = _limit_gradient(ui, uj)
    return WarpMapping(grid, ui * grid.dx, uj * grid.dy)


def morph_transform(member: ModelState, reference: ModelState, mapping: WarpMapping) -> MorphState:
    """Morphing representation of a member against the reference."""
    inverse = invert_mapping(mapping)
    residuals = tuple(
        warp(block, inverse) - ref_block
        for block, ref_block in zip(member.blocks(), reference.blocks())
    )
    return MorphState(mapping, residuals)


def morph_inverse(morph: MorphState, reference: ModelState) -> ModelState:
    """Physical state of a morphing representation."""
    blocks = np.stack(
        [warp(ref_block + res, morph.warp) for ref_block, res in zip(reference.blocks(), morph.residuals)]
    )
    return reference.with_blocks(blocks, time=reference.time)


def perturb_state(
    state: ModelState,
    warp_spec: SmoothnessSpec,
    amp_spec: SmoothnessSpec,
    rng: np.random.Generator,
    residual_spec: SmoothnessSpec | None = None,
) -> ModelState:
    """Random position + amplitude perturbation of one state.

    Each block is warped by one random smooth mapping and multiplied
    pointwise by 1 + s (s a smooth random field, factor clamped positive),
    so regions with zero infection stay exactly zero.  With
    ``residual_spec`` set, independent smooth residuals are added to each
    block before warping.
    """
    mapping = random_smooth_mapping(state.grid, warp_spec, rng)
    s_field = random_smooth_field(state.grid, amp_spec, rng)
    factor = np.maximum(1.0 + s_field, AMPLITUDE_FLOOR)
    blocks = []
    for block in state.blocks():
        if residual_spec is not None:
            block = block + random_smooth_field(state.grid, residual_spec, rng)
        blocks.append(warp(block, mapping) * factor)
    return state.with_blocks(np.stack(blocks))


def initial_ensemble(
    state: ModelState,
    n_members: int,
    warp_spec: SmoothnessSpec,
    amp_spec: SmoothnessSpec,
    rng: np.random.Generator,
    residual_spec: SmoothnessSpec | None = None,
) -> Ensemble:
    """N randomly perturbed members plus the unperturbed reference member."""
    members = [
        perturb_state(state, warp_spec, amp_spec, rng, residual_spec=residual_spec)
        for _ in range(n_members)
    ]
    return Ensemble(members, reference=state.copy())


def _mean_morph(morphs: list[MorphState]) -> MorphState:
    grid = morphs[0].warp.grid
    tx = np.mean([m.warp.tx for m in morphs], axis=0)
    ty = np.mean([m.warp.ty for m in morphs], axis=0)
    residuals = tuple(
        np.mean([m.residuals[j] for m in morphs], axis=0) for j in range(len(morphs[0].residuals))
    )
    return MorphState(WarpMapping(grid, tx, ty), residuals)


@dataclass
class MorphingInfo:
    """Cycle diagnostics from one morphing analysis."""

    forecast_mean: ModelState
    data_mapping: WarpMapping
    position_variance_used: float
    amplitude_variance_used: float


def morphing_analysis(
    ens: Ensemble,
    data: np.ndarray,
    filter_kind: str,
    obs: MorphObsParams,
    reg_opts: RegistrationOptions = RegistrationOptions(),
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
    observed_block: int = 1,
) -> Ensemble:
    """Position-aware analysis; see ``morphing_analysis_full`` for details."""
    analysis, _ = morphing_analysis_full(
        ens, data, filter_kind, obs, reg_opts, rng, noise=noise, observed_block=observed_block
    )
    return analysis


def morphing_analysis_full(
    ens: Ensemble,
    data: np.ndarray,
    filter_kind: str,
    obs: MorphObsParams,
    reg_opts: RegistrationOptions = RegistrationOptions(),
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
    observed_block: int = 1,
) -> tuple[Ensemble, MorphingInfo]:
    """Run one filter cycle in morphing space and return diagnostics too.

    Members and the data are registered against the reference member's
    observed block; the extended vectors (tx, ty, r_1 .. r_M) are filtered
    with the chosen core ("dense" or "spectral"), observing (tx, ty, r_obs)
    with the configured position/amplitude variances.  The analysis
    ensemble is mapped back to physical space; the new reference member is
    the mean of the analysis morphing states.  A non-positive
    ``obs.position_variance`` requests auto-tuning from the forecast
    displacement spread.
    """
    if ens.reference is None:
        raise ValueError(ERROR_NO_REFERENCE)
    if filter_kind not in (FILTER_DENSE, FILTER_SPECTRAL):
        raise ValueError(ERROR_BAD_FILTER)
    reference = ens.reference
    grid = reference.grid
    ref_obs = reference.blocks()[observed_block]

    morphs = []
    for member in ens.members:
        mapping = register(member.blocks()[observed_block], ref_obs, grid, reg_opts)
        morphs.append(morph_transform(member, reference, mapping))
    data_mapping = register(data, ref_obs, grid, reg_opts)
    data_residual = warp(data, invert_mapping(data_mapping)) - ref_obs

    n_blocks = len(morphs[0].residuals)
    extended = np.stack(
        [
            np.concatenate(
                [m.warp.tx[None], m.warp.ty[None], np.stack(m.residuals)]
            )
            for m in morphs
        ]
    )

    position_variance = obs.position_variance
    if position_variance <= 0.0:
        # Auto-tune: mean per-cell forecast variance over both components.
        # A degenerate (zero-spread) forecast keeps a tiny positive floor;
        # the gain is zero then, so the actual value does not matter.
        position_variance = max(
            float(
                np.mean(
                    np.var(extended[:, 0], axis=0, ddof=1) + np.var(extended[:, 1], axis=0, ddof=1)
                )
                / 2.0
            ),
            1e-12,
        )
    components = [
        ObsComponent(0, data_mapping.tx, position_variance),
        ObsComponent(1, data_mapping.ty, position_variance),
        ObsComponent(2 + observed_block, data_residual, obs.amplitude_variance),
    ]
    if noise is None:
        noise = draw_obs_noise(components, len(ens.members), rng)
    if filter_kind == FILTER_DENSE:
        updated = analyze_blocks(extended, components, noise=noise)
    else:
        updated = fft_analyze_blocks(extended, components, noise=noise)

    analysis_morphs = [
        MorphState(
            WarpMapping(grid, updated[k, 0], updated[k, 1]),
            tuple(updated[k, 2 + j] for j in range(n_blocks)),
        )
        for k in range(len(ens.members))
    ]
    members = [morph_inverse(m, reference) for m in analysis_morphs]
    for member, forecast in zip(members, ens.members):
        member.time = forecast.time
    new_reference = morph_inverse(_mean_morph(analysis_morphs), reference)
    new_reference.time = reference.time

    forecast_mean = morph_inverse(_mean_morph(morphs), reference)
    forecast_mean.time = reference.time
    info = MorphingInfo(
        forecast_mean=forecast_mean,
        data_mapping=data_mapping,
        position_variance_used=position_variance,
        amplitude_variance_used=obs.amplitude_variance,
    )
    return Ensemble(members, reference=new_reference), info
