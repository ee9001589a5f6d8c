"""Ensemble Kalman filter with diagonal covariances in the sine basis.

Member fields are moved to the orthonormal sine basis, where the sample
covariance of a smooth spatially correlated field is approximately
diagonal.  Keeping only the diagonal turns the analysis into independent
scalar updates per mode:

    c_hat_i      = sum_k |u_hat_ik - mean_hat_i|^2 / (N - 1)
    u_hat_ik_a   = u_hat_ik + c_hat_i / (c_hat_i + r) * (d_hat_i + e_hat_ik - u_hat_ik)

with every product elementwise over modes; no covariance matrix is ever
formed.  Unobserved blocks are updated the same way through per-mode
cross-covariances with the observed block.  With several observed blocks
the covariance of the observed part is treated as block-diagonal: each
observed block is updated from its own channel only, while unobserved
blocks sum the per-channel cross-covariance updates.  The discarded
mutual terms are sample estimates between independently perturbed
channels, pure noise at small ensemble sizes.

The approximation replaces the sample covariance C_N by
F^-1 diag(c_hat) F (F the sine transform); feeding that matrix to the
explicit-covariance path of the plain filter reproduces this filter's
output, which the tests exercise.
"""
from __future__ import annotations

import numpy as np

from .enkf import ERROR_FEW_MEMBERS, ObsComponent, ObsSpec, _check_noise, draw_obs_noise
from .grid import Ensemble
from .spectral import dst2_forward, dst2_inverse


def spectral_variance(member_coeffs: np.ndarray) -> np.ndarray:
    """Per-mode ensemble variance of coefficient arrays, clamped at zero."""
    coeffs = np.asarray(member_coeffs, dtype=float)
    if coeffs.shape[0] < 2:
        raise ValueError(ERROR_FEW_MEMBERS)
    anomalies = coeffs - coeffs.mean(axis=0)
    var = np.sum(anomalies**2, axis=0) / (coeffs.shape[0] - 1)
    return np.maximum(var, 0.0)


def spectral_cross_covariance(coeffs_a: np.ndarray, coeffs_b: np.ndarray) -> np.ndarray:
    """Per-mode ensemble cross-covariance between two coefficient stacks."""
    a = np.asarray(coeffs_a, dtype=float)
    b = np.asarray(coeffs_b, dtype=float)
    if a.shape[0] < 2:
        raise ValueError(ERROR_FEW_MEMBERS)
    return np.sum((a - a.mean(axis=0)) * (b - b.mean(axis=0)), axis=0) / (a.shape[0] - 1)


def fft_analyze_blocks(
    members: np.ndarray,
    components: list[ObsComponent],
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Spectral-diagonal analysis of stacked member blocks (N, M, nx, ny)."""
    members = np.asarray(members, dtype=float)
    n_members, n_blocks = members.shape[:2]
    if n_members < 2:
        raise ValueError(ERROR_FEW_MEMBERS)
    if noise is None:
        noise = draw_obs_noise(components, n_members, rng)
    else:
        noise = _check_noise(noise, n_members, components)

    coeffs = np.empty_like(members)
    for k in range(n_members):
        for j in range(n_blocks):
            coeffs[k, j] = dst2_forward(members[k, j])
    anomalies = coeffs - coeffs.mean(axis=0)

    observed = {comp.block for comp in components}
    update = np.zeros_like(coeffs)
    for c, comp in enumerate(components):
        obs = comp.block
        var = np.maximum(np.sum(anomalies[:, obs] ** 2, axis=0) / (n_members - 1), 0.0)
        denom = var + comp.variance
        d_hat = dst2_forward(comp.data)
        residual = np.stack(
            [d_hat + dst2_forward(noise[k, c]) - coeffs[k, obs] for k in range(n_members)]
        )
        for j in range(n_blocks):
            if j in observed and j != obs:
                continue
            cross = np.sum(anomalies[:, j] * anomalies[:, obs], axis=0) / (n_members - 1)
            gain = cross / denom
            update[:, j] += gain * residual

    out = np.empty_like(members)
    for k in range(n_members):
        for j in range(n_blocks):
            out[k, j] = dst2_inverse(coeffs[k, j] + update[k, j])
    return out


def fft_enkf_analysis(
    ens: Ensemble,
    obs: ObsSpec,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> Ensemble:
    """Spectral analysis ensemble for one observed block."""
    members = np.stack([m.blocks() for m in ens.members])
    components = [ObsComponent(obs.observed_block, obs.data, obs.r)]
    updated = fft_analyze_blocks(members, components, rng=rng, noise=noise)
    states = [m.with_blocks(updated[k]) for k, m in enumerate(ens.members)]
    return Ensemble(states, reference=ens.reference)
