"""Ensemble Kalman filter with explicit or ensemble-span covariances.

The analysis update for member k is

    u_k_a = u_k + C H' (H C H' + R)^-1 (d + e_k - H u_k),

where C is the ensemble sample covariance (divisor N - 1), H selects the
observed blocks, R is diagonal with one variance per observed block, and
e_k ~ N(0, R) is the data perturbation.  Only the columns of C against
the observed blocks enter, so every unobserved block is updated through
its cross-covariance with the observed ones.

At experiment scale C is never materialized: the update is evaluated
through anomaly products, with the observation-space solve reduced to an
N x N system (Woodbury identity on R + Ao' Ao / (N - 1)).  An explicit
covariance matrix can be supplied instead, which is how the spectral
filter is cross-checked against this one at test scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Ensemble, ModelState

COVARIANCE_ENTRY_GUARD = 10_000

ERROR_BAD_VARIANCE = "observation variance must be > 0"
ERROR_FEW_MEMBERS = "need at least 2 members"
ERROR_STATE_TOO_LARGE = "state too large to materialize a covariance matrix"
ERROR_NOISE_SHAPE = "noise array shape does not match (n_members, n_components, field shape)"
ERROR_COV_SHAPE = "covariance shape does not match the flattened state"

OBSERVED_BLOCK_INFECTED = 1  # (susceptible, infected, removed) ordering


@dataclass(frozen=True)
class ObsSpec:
    """One observed block: which block, its error variance, and the data."""

    observed_block: int
    r: float
    data: np.ndarray

    def __post_init__(self):
        if self.r <= 0.0:
            raise ValueError(ERROR_BAD_VARIANCE)


@dataclass(frozen=True)
class ObsComponent:
    """Internal observed-component triple used by the analysis cores."""

    block: int
    data: np.ndarray
    variance: float

    def __post_init__(self):
        if self.variance <= 0.0:
            raise ValueError(ERROR_BAD_VARIANCE)


def perturb_data(obs: ObsSpec, rng: np.random.Generator) -> np.ndarray:
    """The data plus one draw of N(0, r) noise, i.i.d. per cell."""
    return obs.data + rng.normal(0.0, np.sqrt(obs.r), size=obs.data.shape)


def draw_obs_noise(
    components: list[ObsComponent],
    n_members: int,
    rng: np.random.Generator,
    ) -> np.ndarray:
    """Data-perturbation draws e_k, member-major then component order.

    Both analysis cores draw through this helper, so running either one
    against the same generator state uses identical realizations.
    """
    shape = components[0].data.shape
    out = np.empty((n_members, len(components)) + shape)
    for k in range(n_members):
        for c, comp in enumerate(components):
            out[k, c] = rng.normal(0.0, np.sqrt(comp.variance), size=shape)
    return out


def _check_noise(noise: np.ndarray, n_members: int, components: list[ObsComponent]) -> np.ndarray:
    noise = np.asarray(noise, dtype=float)
    expected = (n_members, len(components)) + components[0].data.shape
    if noise.shape != expected:
        raise ValueError(ERROR_NOISE_SHAPE)
    return noise


def analyze_blocks(
    members: np.ndarray,
    components: list[ObsComponent],
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
    covariance: np.ndarray | None = None,
) -> np.ndarray:
    """Analysis update of stacked member blocks, shape (N, M, nx, ny).

    Parameters
    ----------
    members:
        Forecast members, one (M, nx, ny) block stack each.
    components:
        Observed blocks with data and variances.
    rng:
        Source for data perturbations when ``noise`` is not given.
    noise:
        Optional pre-drawn perturbations, shape (N, n_components, nx, ny).
        Pass zeros to run without perturbation.
    covariance:
        Optional explicit covariance of the flattened (M * nx * ny,) state,
        used verbatim instead of the ensemble sample covariance.
    """
    members = np.asarray(members, dtype=float)
    n_members, n_blocks = members.shape[:2]
    if n_members < 2:
        raise ValueError(ERROR_FEW_MEMBERS)
    field_shape = members.shape[2:]
    n = int(np.prod(field_shape))
    dim = n_blocks * n

    if noise is None:
        noise = draw_obs_noise(components, n_members, rng)
    else:
        noise = _check_noise(noise, n_members, components)

    # Innovations z_k = d + e_k - H u_k, stacked over components: (C*n, N).
    innov = np.empty((len(components) * n, n_members))
    for c, comp in enumerate(components):
        d = np.ravel(comp.data)
        for k in range(n_members):
            innov[c * n:(c + 1) * n, k] = d + np.ravel(noise[k, c]) - np.ravel(members[k, comp.block])
    r_diag = np.repeat([comp.variance for comp in components], n)

    flat = members.reshape(n_members, dim)
    if covariance is not None:
        covariance = np.asarray(covariance, dtype=float)
        if covariance.shape != (dim, dim):
            raise ValueError(ERROR_COV_SHAPE)
        obs_idx = np.concatenate([comp.block * n + np.arange(n) for comp in components])
        s_mat = covariance[np.ix_(obs_idx, obs_idx)] + np.diag(r_diag)
        solved = np.linalg.solve(s_mat, innov)
        delta = covariance[:, obs_idx] @ solved
    else:
        anomalies = flat - flat.mean(axis=0)
        obs_anoms = np.concatenate(
            [anomalies[:, comp.block * n:(comp.block + 1) * n] for comp in components], axis=1
        )
        # (R + U U')^-1 via Woodbury with U = obs_anoms' / sqrt(N - 1).
        u_mat = obs_anoms.T / np.sqrt(n_members - 1)
        ri_u = u_mat / r_diag[:, None]
        gram = np.eye(n_members) + u_mat.T @ ri_u
        ri_z = innov / r_diag[:, None]
        solved = ri_z - ri_u @ np.linalg.solve(gram, u_mat.T @ ri_z)
        delta = anomalies.T @ (obs_anoms @ solved) / (n_members - 1)

    return (flat + delta.T).reshape(members.shape)


def sample_covariance_flat(flat_members: np.ndarray) -> np.ndarray:
    """Sample covariance of flattened members, shape (N, D), divisor N - 1."""
    flat_members = np.asarray(flat_members, dtype=float)
    n_members, dim = flat_members.shape
    if n_members < 2:
        raise ValueError(ERROR_FEW_MEMBERS)
    if dim > COVARIANCE_ENTRY_GUARD:
        raise ValueError(ERROR_STATE_TOO_LARGE)
    anomalies = flat_members - flat_members.mean(axis=0)
    return anomalies.T @ anomalies / (n_members - 1)


def sample_covariance(ens: Ensemble) -> np.ndarray:
    """Explicit covariance of the flattened (S, I, R) state; test scale only."""
    flat = np.stack([m.blocks().ravel() for m in ens.members])
    return sample_covariance_flat(flat)


def dense_analysis(
    ens: Ensemble,
    obs: ObsSpec,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
    covariance: np.ndarray | None = None,
) -> Ensemble:
    """Analysis ensemble for one observed block; reference passed through."""
    members = np.stack([m.blocks() for m in ens.members])
    components = [ObsComponent(obs.observed_block, obs.data, obs.r)]
    updated = analyze_blocks(members, components, rng=rng, noise=noise, covariance=covariance)
    states = [m.with_blocks(updated[k]) for k, m in enumerate(ens.members)]
    return Ensemble(states, reference=ens.reference)
