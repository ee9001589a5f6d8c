import numpy as np
import pytest

from epifilter.config import parse_config
from epifilter.experiment import (
    build_population,
    centroid,
    centroid_error,
    initial_state,
    postprocess,
    rmse,
    run_cycle,
    run_experiment,
    synthesize_data,
    to_fraction,
)
from epifilter.grid import ModelState, make_grid, total_population


def tiny_config(**overrides):
    base = {
        "grid.nx": 24,
        "grid.ny": 24,
        "grid.dx": 10.0,
        "grid.dy": 10.0,
        "model.alpha": 2e-5,
        "model.spread_scale": 10.0,
        "model.cutoff_radius": 30.0,
        "infection.center_x": 12,
        "infection.center_y": 12,
        "ensemble.size": 3,
        "ensemble.spinup_steps": 10,
        "ensemble.cycle_steps": 5,
        "ensemble.cycles": 2,
        "perturbation.warp_amplitude": 120.0,
        "perturbation.amp_amplitude": 2.0,
    }
    base.update(overrides)
    return parse_config("", base)


def test_build_population_constant():
    config = tiny_config()
    pop = build_population(config)
    np.testing.assert_array_equal(pop, np.full((24, 24), 200.0))


def test_build_population_blobs_positive_and_deterministic():
    config = tiny_config(**{"population.kind": "blobs"})
    a = build_population(config)
    b = build_population(config)
    np.testing.assert_array_equal(a, b)
    assert np.all(a >= 200.0)
    assert np.max(a) > 200.0


def test_initial_state_seeds_disc():
    config = tiny_config()
    pop = build_population(config)
    state = initial_state(config, pop)
    assert state.infected[12, 12] == pytest.approx(0.2 * 200.0)
    assert state.infected[0, 0] == 0.0
    assert state.susceptible[12, 12] == pytest.approx(0.8 * 200.0)
    np.testing.assert_array_equal(state.removed, 0.0)
    np.testing.assert_allclose(state.susceptible + state.infected, pop)
    assert state.time == 0.0


def test_to_fraction_round_trip():
    grid = make_grid(6, 6, 1.0, 1.0)
    rng = np.random.default_rng(0)
    pop = rng.uniform(50.0, 150.0, grid.shape)
    blocks = rng.uniform(0.0, 40.0, (3,) + grid.shape)
    state = ModelState(grid, *blocks, 2.0)
    frac = to_fraction(state, pop)
    np.testing.assert_allclose(frac.infected * pop, state.infected, atol=1e-12)
    assert frac.time == 2.0


def test_postprocess_hand_case():
    # One cell with fractions (1.4, -0.2, 0.1): clipping gives (1, 0, 0.1),
    # the infected fraction 0 stays below threshold, renormalizing gives
    # (10/11, 0, 1/11), and population 100 scales the people counts.
    grid = make_grid(4, 4, 1.0, 1.0)
    s = np.full(grid.shape, 0.5)
    i = np.full(grid.shape, 0.3)
    r = np.full(grid.shape, 0.2)
    s[1, 1], i[1, 1], r[1, 1] = 1.4, -0.2, 0.1
    state = ModelState(grid, s, i, r, 0.0)
    pop = np.full(grid.shape, 100.0)
    out = postprocess(state, pop, threshold=0.01)
    assert out.susceptible[1, 1] == pytest.approx(100.0 * 10.0 / 11.0)
    assert out.infected[1, 1] == 0.0
    assert out.removed[1, 1] == pytest.approx(100.0 / 11.0)
    # Untouched cells already sum to 1, so they just rescale.
    assert out.susceptible[0, 0] == pytest.approx(50.0)
    assert out.infected[0, 0] == pytest.approx(30.0)
    assert out.removed[0, 0] == pytest.approx(20.0)


def test_postprocess_restores_population_everywhere():
    grid = make_grid(8, 8, 1.0, 1.0)
    rng = np.random.default_rng(1)
    pop = rng.uniform(10.0, 300.0, grid.shape)
    state = ModelState(grid, *rng.normal(0.4, 0.6, (3,) + grid.shape), 0.0)
    out = postprocess(state, pop, threshold=0.01)
    totals = out.susceptible + out.infected + out.removed
    np.testing.assert_allclose(totals, pop, rtol=1e-12)
    for block in out.blocks():
        assert np.min(block) >= 0.0
    # No surviving infected fraction below the threshold.
    frac = out.infected / pop
    assert np.all((frac == 0.0) | (frac >= 0.005))


def test_postprocess_empty_cell_becomes_susceptible():
    grid = make_grid(4, 4, 1.0, 1.0)
    blocks = np.full((3,) + grid.shape, -1.0)
    state = ModelState(grid, *blocks, 0.0)
    pop = np.full(grid.shape, 70.0)
    out = postprocess(state, pop, threshold=0.01)
    np.testing.assert_allclose(out.susceptible, 70.0)
    np.testing.assert_array_equal(out.infected, 0.0)
    np.testing.assert_array_equal(out.removed, 0.0)


def test_rmse_oracle_and_validation():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[1.0, 0.0], [3.0, 1.0]])
    assert rmse(a, b) == pytest.approx(np.sqrt((0.0 + 4.0 + 0.0 + 9.0) / 4.0))
    assert rmse(a, a) == 0.0
    with pytest.raises(ValueError):
        rmse(a, np.zeros((3, 3)))


def test_centroid_hand_case():
    grid = make_grid(4, 4, 2.0, 2.0)
    field = np.zeros(grid.shape)
    field[1, 2] = 3.0
    cx, cy = centroid(field, grid)
    assert cx == pytest.approx(3.0)  # (1 + 0.5) * 2
    assert cy == pytest.approx(5.0)  # (2 + 0.5) * 2
    field[3, 2] = 3.0
    cx, cy = centroid(field, grid)
    assert cx == pytest.approx(5.0)  # midway between rows 1 and 3
    with pytest.raises(ValueError):
        centroid(np.zeros(grid.shape), grid)


def test_centroid_error_symmetry():
    grid = make_grid(6, 6, 1.0, 1.0)
    rng = np.random.default_rng(2)
    a = rng.uniform(0.0, 1.0, grid.shape)
    b = rng.uniform(0.0, 1.0, grid.shape)
    assert centroid_error(a, b, grid) == pytest.approx(centroid_error(b, a, grid))
    assert centroid_error(a, a, grid) == 0.0


def test_synthesize_data_shape_and_determinism():
    config = tiny_config()
    frames_a = synthesize_data(config)
    frames_b = synthesize_data(config)
    assert len(frames_a) == 2
    for fa, fb in zip(frames_a, frames_b):
        assert fa.shape == (24, 24)
        np.testing.assert_array_equal(fa, fb)
        assert np.sum(fa) > 0.0
    other = synthesize_data(tiny_config(**{"run.master_seed": 2}))
    assert np.max(np.abs(frames_a[0] - other[0])) > 0.0


@pytest.mark.parametrize("variant", ["enkf", "fft_enkf", "morphing_enkf", "morphing_fft_enkf"])
def test_run_experiment_all_variants(variant):
    config = tiny_config(**{"filter.variant": variant})
    reports = run_experiment(config)
    assert [r.cycle for r in reports] == [1, 2]
    pop = build_population(config)
    for report in reports:
        assert report.forecast_rmse >= 0.0
        assert report.analysis_rmse >= 0.0
        assert np.isfinite(report.analysis_rmse)
        assert report.analysis_infected.shape == (24, 24)
        assert np.min(report.analysis_infected) >= 0.0
        assert np.all(report.analysis_infected <= pop + 1e-9)
    times = [r.time for r in reports]
    assert times == [10.0, 15.0]
    if variant in ("enkf", "fft_enkf"):
        assert np.isfinite(reports[0].obs_variance_used)
        # Cycle 1 tunes the variance; later cycles reuse it.
        assert reports[1].obs_variance_used == reports[0].obs_variance_used
    else:
        assert np.isfinite(reports[0].position_variance_used)
        assert reports[1].position_variance_used == reports[0].position_variance_used


def test_run_experiment_deterministic_per_seed():
    config = tiny_config()
    a = run_experiment(config)
    b = run_experiment(config)
    for ra, rb in zip(a, b):
        assert ra.forecast_rmse == rb.forecast_rmse
        assert ra.analysis_rmse == rb.analysis_rmse
        np.testing.assert_array_equal(ra.analysis_infected, rb.analysis_infected)


def test_run_experiment_lane_count_does_not_change_results():
    one = run_experiment(tiny_config(**{"run.lanes": 1}))
    four = run_experiment(tiny_config(**{"run.lanes": 4}))
    for ra, rb in zip(one, four):
        np.testing.assert_array_equal(ra.analysis_infected, rb.analysis_infected)
        np.testing.assert_array_equal(ra.forecast_infected, rb.forecast_infected)


def test_run_experiment_zero_cycles():
    reports = run_experiment(tiny_config(**{"ensemble.cycles": 0}))
    assert reports == []


def test_run_cycle_advances_clock():
    config = tiny_config(**{"filter.auto_tune": False})
    from epifilter import streams
    from epifilter.morphing import initial_ensemble
    from epifilter.sir import advance

    pop = build_population(config)
    base = advance(
        initial_state(config, pop),
        config.spinup_steps,
        config.epi,
        streams.derive(config.master_seed, streams.SPINUP),
    )
    ens = initial_ensemble(
        base,
        config.n_members,
        config.warp_spec,
        config.amp_spec,
        streams.derive(config.master_seed, streams.INIT),
    )
    data = synthesize_data(config, pop)[0]
    next_ens, report = run_cycle(
        ens, data, config, streams.derive(config.master_seed, streams.NOISE), population=pop
    )
    assert report.time == 10.0
    assert next_ens.size == config.n_members
    for member in next_ens.members:
        assert member.time == 15.0
        assert total_population(member) == pytest.approx(float(np.sum(pop)), rel=1e-9)
    assert next_ens.reference is not None
    assert report.wall_clock_seconds > 0.0
