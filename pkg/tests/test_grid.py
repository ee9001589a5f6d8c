import numpy as np
import pytest

from epifilter.grid import Ensemble, Grid, ModelState, ensemble_mean, make_grid, total_population


def small_state(grid, seed=0, time=0.0):
    rng = np.random.default_rng(seed)
    return ModelState(
        grid,
        rng.uniform(0.0, 10.0, grid.shape),
        rng.uniform(0.0, 10.0, grid.shape),
        rng.uniform(0.0, 10.0, grid.shape),
        time=time,
    )


def test_make_grid_basic():
    grid = make_grid(4, 4, 1.0, 1.0)
    assert grid.shape == (4, 4)
    assert grid.cell_area == 1.0


def test_make_grid_cell_centers():
    grid = make_grid(100, 100, 10.0, 10.0)
    x, y = grid.cell_centers()
    assert x[0] == 5.0 and x[-1] == 995.0
    assert y[0] == 5.0 and y[-1] == 995.0
    assert grid.cell_area == 100.0


def test_make_grid_rejects_small_and_degenerate():
    with pytest.raises(ValueError):
        make_grid(3, 8, 1.0, 1.0)
    with pytest.raises(ValueError):
        make_grid(8, 3, 1.0, 1.0)
    with pytest.raises(ValueError):
        make_grid(8, 8, 0.0, 1.0)
    with pytest.raises(ValueError):
        make_grid(8, 8, 1.0, -2.0)


def test_state_shape_checked():
    grid = make_grid(4, 4, 1.0, 1.0)
    with pytest.raises(ValueError):
        ModelState(grid, np.zeros((4, 4)), np.zeros((4, 5)), np.zeros((4, 4)))


def test_total_population_matches_loop():
    grid = make_grid(5, 7, 2.0, 3.0)
    state = small_state(grid, seed=1)
    # independent route: plain python accumulation
    expected = 0.0
    for block in (state.susceptible, state.infected, state.removed):
        for i in range(grid.nx):
            for j in range(grid.ny):
                expected += block[i, j]
    assert total_population(state) == pytest.approx(expected, rel=1e-12)


def test_total_population_zero_state():
    grid = make_grid(4, 4, 1.0, 1.0)
    z = np.zeros(grid.shape)
    assert total_population(ModelState(grid, z, z.copy(), z.copy())) == 0.0


def test_ensemble_mean_matches_loop():
    grid = make_grid(4, 6, 1.0, 1.0)
    members = [small_state(grid, seed=s) for s in range(3)]
    mean = ensemble_mean(Ensemble(members))
    for getter in (lambda s: s.susceptible, lambda s: s.infected, lambda s: s.removed):
        expected = sum(getter(m) for m in members) / 3.0
        np.testing.assert_allclose(getter(mean), expected, rtol=1e-13)


def test_ensemble_mean_excludes_reference():
    grid = make_grid(4, 4, 1.0, 1.0)
    members = [small_state(grid, seed=s) for s in range(2)]
    reference = small_state(grid, seed=99)
    with_ref = ensemble_mean(Ensemble(members, reference=reference))
    without = ensemble_mean(Ensemble(members))
    np.testing.assert_array_equal(with_ref.infected, without.infected)


def test_ensemble_mean_single_member_identity():
    grid = make_grid(4, 4, 1.0, 1.0)
    state = small_state(grid, seed=5)
    mean = ensemble_mean(Ensemble([state]))
    np.testing.assert_array_equal(mean.blocks(), state.blocks())


def test_ensemble_mean_empty_raises():
    with pytest.raises(ValueError):
        ensemble_mean(Ensemble([]))


def test_ensemble_mean_linearity():
    # mean(a*u + b*v) = a*mean(u) + b*mean(v), per block
    grid = make_grid(5, 5, 1.0, 1.0)
    us = [small_state(grid, seed=s) for s in range(4)]
    vs = [small_state(grid, seed=s + 10) for s in range(4)]
    a, b = 0.7, -1.3
    combo = [u.with_blocks(a * u.blocks() + b * v.blocks()) for u, v in zip(us, vs)]
    lhs = ensemble_mean(Ensemble(combo)).blocks()
    rhs = a * ensemble_mean(Ensemble(us)).blocks() + b * ensemble_mean(Ensemble(vs)).blocks()
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
