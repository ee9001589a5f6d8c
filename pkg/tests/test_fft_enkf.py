import time

import numpy as np
import pytest

from epifilter.enkf import ObsComponent, ObsSpec, analyze_blocks, draw_obs_noise
from epifilter.fft_enkf import (
    fft_analyze_blocks,
    fft_enkf_analysis,
    spectral_cross_covariance,
    spectral_variance,
)
from epifilter.grid import Ensemble, ModelState, make_grid
from epifilter.spectral import dst2_forward


def spectral_covariance_matrix(members):
    """Dense matrix equal to F' diag-by-mode(c_hat) F over all blocks.

    Feeding this to the explicit-covariance path of the plain filter must
    reproduce the spectral filter exactly, which is the equivalence the
    diagonal approximation is defined by.
    """
    n_members, n_blocks = members.shape[:2]
    shape = members.shape[2:]
    n = int(np.prod(shape))
    coeffs = np.stack(
        [[dst2_forward(members[k, j]) for j in range(n_blocks)] for k in range(n_members)]
    )
    anoms = coeffs - coeffs.mean(axis=0)
    f_mat = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(shape)
        e.flat[i] = 1.0
        f_mat[:, i] = dst2_forward(e).ravel()
    cov = np.zeros((n_blocks * n, n_blocks * n))
    for j in range(n_blocks):
        for jp in range(n_blocks):
            diag = np.sum(anoms[:, j] * anoms[:, jp], axis=0).ravel() / (n_members - 1)
            cov[j * n:(j + 1) * n, jp * n:(jp + 1) * n] = f_mat.T @ (diag[:, None] * f_mat)
    return cov


def mode_field(n, p=1, q=1):
    i = np.arange(n)
    phi_p = np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * p * (i + 1) / (n + 1))
    phi_q = np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * q * (i + 1) / (n + 1))
    return np.outer(phi_p, phi_q)


def test_spectral_variance_matches_numpy():
    rng = np.random.default_rng(30)
    coeffs = rng.normal(size=(6, 5, 5))
    np.testing.assert_allclose(
        spectral_variance(coeffs), np.var(coeffs, axis=0, ddof=1), atol=1e-12
    )


def test_spectral_variance_hand_case():
    coeffs = np.array([[[0.0]], [[2.0]]])
    assert spectral_variance(coeffs)[0, 0] == pytest.approx(2.0)


def test_spectral_cross_covariance_oracle():
    rng = np.random.default_rng(31)
    a = rng.normal(size=(5, 4, 4))
    b = rng.normal(size=(5, 4, 4))
    expected = np.zeros((4, 4))
    for p in range(4):
        for q in range(4):
            av, bv = a[:, p, q], b[:, p, q]
            expected[p, q] = np.sum((av - av.mean()) * (bv - bv.mean())) / 4.0
    np.testing.assert_allclose(spectral_cross_covariance(a, b), expected, atol=1e-12)
    np.testing.assert_allclose(spectral_cross_covariance(a, a), spectral_variance(a), atol=1e-12)


def test_single_mode_hand_case():
    # Two members proportional to one sine mode, coefficients {0, 2};
    # data coefficient 3, r = 2.  Mode variance 2, gain 1/2, analysis
    # coefficients {1.5, 2.5}.
    n = 5
    base = mode_field(n)
    members = np.stack([(0.0 * base)[None], (2.0 * base)[None]])
    comp = ObsComponent(0, 3.0 * base, 2.0)
    noise = np.zeros((2, 1, n, n))
    out = fft_analyze_blocks(members, [comp], noise=noise)
    np.testing.assert_allclose(out[0, 0], 1.5 * base, atol=1e-12)
    np.testing.assert_allclose(out[1, 0], 2.5 * base, atol=1e-12)


def test_matches_dense_filter_with_spectral_covariance():
    rng = np.random.default_rng(32)
    for n_members, shape in [(2, (8, 8)), (3, (8, 8)), (5, (8, 8)), (3, (4, 6))]:
        members = rng.normal(size=(n_members, 3) + shape)
        components = [ObsComponent(1, rng.normal(size=shape), 0.7)]
        noise = draw_obs_noise(components, n_members, rng)
        spectral = fft_analyze_blocks(members, components, noise=noise)
        dense = analyze_blocks(
            members,
            components,
            noise=noise,
            covariance=spectral_covariance_matrix(members),
        )
        np.testing.assert_allclose(spectral, dense, atol=1e-8)


def test_observed_block_moves_toward_data_per_mode():
    rng = np.random.default_rng(33)
    members = rng.normal(size=(4, 2, 6, 6))
    data = rng.normal(size=(6, 6))
    comp = ObsComponent(1, data, 0.5)
    noise = np.zeros((4, 1, 6, 6))
    out = fft_analyze_blocks(members, [comp], noise=noise)
    d_hat = dst2_forward(data)
    for k in range(4):
        before = dst2_forward(members[k, 1])
        after = dst2_forward(out[k, 1])
        step = after - before
        gap = d_hat - before
        assert np.all(step * gap >= -1e-12)
        assert np.all(np.abs(step) <= np.abs(gap) + 1e-12)


def test_multiple_observed_blocks_decouple_and_cross_updates_sum():
    # With two observed blocks (0 and 1) and one unobserved block (2),
    # each observed block must update from its own channel alone, as if
    # the other observed block did not exist, while the unobserved block
    # accumulates the per-channel cross-covariance updates.
    rng = np.random.default_rng(36)
    members = rng.normal(size=(5, 3, 6, 6))
    components = [
        ObsComponent(0, rng.normal(size=(6, 6)), 0.6),
        ObsComponent(1, rng.normal(size=(6, 6)), 0.3),
    ]
    noise = draw_obs_noise(components, 5, rng)
    out = fft_analyze_blocks(members, components, noise=noise)

    for c, comp in enumerate(components):
        alone = fft_analyze_blocks(
            members[:, comp.block:comp.block + 1],
            [ObsComponent(0, comp.data, comp.variance)],
            noise=noise[:, c:c + 1],
        )
        np.testing.assert_allclose(out[:, comp.block], alone[:, 0], atol=1e-12)

    coeffs = np.stack(
        [[dst2_forward(members[k, j]) for j in range(3)] for k in range(5)]
    )
    expected = coeffs[:, 2].copy()
    for c, comp in enumerate(components):
        var = spectral_variance(coeffs[:, comp.block])
        cross = spectral_cross_covariance(coeffs[:, 2], coeffs[:, comp.block])
        d_hat = dst2_forward(comp.data)
        for k in range(5):
            residual = d_hat + dst2_forward(noise[k, c]) - coeffs[k, comp.block]
            expected[k] += cross / (var + comp.variance) * residual
    for k in range(5):
        np.testing.assert_allclose(dst2_forward(out[k, 2]), expected[k], atol=1e-10)


def test_zero_spread_leaves_members_unchanged():
    members = np.tile(np.arange(8.0).reshape(1, 2, 2, 2), (3, 1, 1, 1))
    comp = ObsComponent(0, np.full((2, 2), 4.0), 0.5)
    out = fft_analyze_blocks(members, [comp], noise=np.ones((3, 1, 2, 2)))
    np.testing.assert_allclose(out, members, atol=1e-12)


def test_wrapper_matches_block_core_and_keeps_reference():
    grid = make_grid(5, 5, 1.0, 1.0)
    rng = np.random.default_rng(34)
    members = [
        ModelState(grid, *rng.uniform(0.0, 2.0, (3,) + grid.shape), 3.0) for _ in range(3)
    ]
    reference = members[0].copy()
    obs = ObsSpec(1, 0.4, rng.normal(size=grid.shape))
    noise = np.zeros((3, 1) + grid.shape)
    out = fft_enkf_analysis(Ensemble(members, reference=reference), obs, noise=noise)
    expected = fft_analyze_blocks(
        np.stack([m.blocks() for m in members]),
        [ObsComponent(1, obs.data, 0.4)],
        noise=noise,
    )
    for k, state in enumerate(out.members):
        np.testing.assert_allclose(state.blocks(), expected[k], atol=1e-12)
        assert state.time == 3.0
    assert out.reference is reference


def test_validation_errors():
    comp = ObsComponent(0, np.zeros((3, 3)), 1.0)
    with pytest.raises(ValueError):
        fft_analyze_blocks(np.zeros((1, 1, 3, 3)), [comp], noise=np.zeros((1, 1, 3, 3)))
    with pytest.raises(ValueError):
        fft_analyze_blocks(np.zeros((3, 1, 3, 3)), [comp], noise=np.zeros((3, 2, 3, 3)))
    with pytest.raises(ValueError):
        spectral_variance(np.zeros((1, 2, 2)))


def test_experiment_scale_analysis_is_fast():
    rng = np.random.default_rng(35)
    members = rng.normal(size=(5, 3, 100, 100))
    components = [ObsComponent(1, rng.normal(size=(100, 100)), 0.5)]
    noise = draw_obs_noise(components, 5, rng)
    start = time.perf_counter()
    fft_analyze_blocks(members, components, noise=noise)
    spectral_seconds = time.perf_counter() - start
    start = time.perf_counter()
    analyze_blocks(members, components, noise=noise)
    dense_seconds = time.perf_counter() - start
    assert spectral_seconds < 2.0
    assert dense_seconds < 2.0
