import numpy as np
import pytest

from stopbound.models import (BLOCK, PRICE, BlackScholes, Heston, TimeGrid, block_normals,
                              gbm_step, milstein_variance_step, simulate_batch)
from stopbound.oracles import bs_european_closed


def test_time_grid_uniform_and_geometric():
    g = TimeGrid.uniform(1.0, 50)
    assert g.n == 50 and g.dates[0] == 0.0 and g.dates[-1] == 1.0
    geo = TimeGrid.geometric(1.0, 250)
    w = np.diff(geo.dates)
    assert geo.dates[-1] == pytest.approx(1.0, abs=1e-15)
    assert w[-1] / w[0] == pytest.approx(0.25)
    assert np.all(np.diff(w) < 0)
    assert TimeGrid.uniform(0.5, 200, substeps=4).sim_times.size == 801


@pytest.mark.parametrize("dates,sub", [([0.0, 0.5, 0.5], 1), ([0.0, 1.0], 0), ([1.0], 1)])
def test_time_grid_rejects_bad_input(dates, sub):
    with pytest.raises(ValueError):
        TimeGrid(np.array(dates), sub)


def test_gbm_step_hand_value():
    # (s, r, q, sigma, lambda, dt, w) = (100, 0.05, 0.1, 0.2, 0, 1/3, 0.5)
    dt = 1.0 / 3.0
    out = gbm_step(100.0, 0.05, 0.1, 0.2, dt, np.sqrt(dt) * 0.5)
    assert out == pytest.approx(103.5000276208724, rel=1e-14)


def test_simulated_first_step_matches_closed_form_step():
    model = BlackScholes(100.0, 0.05, 0.1, 0.2)
    grid = TimeGrid.uniform(1.0, 3)
    lam = 0.3
    b = simulate_batch(model, grid, [lam], 4, seed=5)
    w = block_normals(5, 1, 0, 4, 3)[:, 0]
    dt = 1 / 3
    expected = 100 * np.exp((0.05 - 0.1 - 0.2 * lam - 0.02) * dt + 0.2 * np.sqrt(dt) * w)
    np.testing.assert_allclose(b.s[:, 1, 0], expected, rtol=1e-13)
    np.testing.assert_allclose(b.weights[:, 1], np.exp(lam * np.sqrt(dt) * w - 0.5 * lam ** 2 * dt),
                               rtol=1e-13)


def test_zero_volatility_is_deterministic():
    model = BlackScholes(40.0, 0.06, 0.02, 0.0)
    grid = TimeGrid.uniform(1.0, 10)
    b = simulate_batch(model, grid, [0.0], 16, seed=1)
    np.testing.assert_allclose(b.s[:, :, 0], np.tile(40 * np.exp(0.04 * grid.dates), (16, 1)),
                               rtol=1e-13)


def test_no_shift_means_unit_weights():
    b = simulate_batch(BlackScholes([100.0, 100.0], 0.05, 0.1, 0.2), TimeGrid.uniform(3, 9),
                       [0.0, 0.0], 64, seed=2)
    assert np.all(b.weights == 1.0)


def test_lambda_dimension_checked():
    with pytest.raises(ValueError):
        simulate_batch(BlackScholes([100.0, 100.0, 100.0], 0.05, 0.1, 0.2),
                       TimeGrid.uniform(3, 9), [0.1, 0.2], 8, seed=0)


def test_milstein_step_examples():
    assert milstein_variance_step(0.16, 1.0, 0.16, 0.0, 0.5, 0.005, 0.0) == pytest.approx(0.1596875, abs=1e-16)
    assert milstein_variance_step(0.3, 0.0, 0.16, 0.0, 0.0, 0.01, 1.7) == 0.3
    assert milstein_variance_step(0.0, 0.0, 0.16, 0.0, 0.5, 0.01, 0.3) == 0.0


def test_running_max_monotone_and_dominates():
    model = BlackScholes(100.0, 0.02, 0.04, 0.3, path_functional="running_max", z_floor=100.0)
    b = simulate_batch(model, TimeGrid.uniform(0.5, 20, substeps=4), [0.0], 256, seed=3)
    assert np.all(np.diff(b.z, axis=1) >= 0)
    assert np.all(b.z >= b.s[:, :, 0])
    assert np.all(b.z[:, 0] == 100.0)


def test_running_max_initial_floor_with_randomised_s0():
    model = BlackScholes(100.0, 0.02, 0.04, 0.3, path_functional="running_max", z_floor=100.0)
    s0 = np.array([[80.0], [120.0]])
    b = simulate_batch(model, TimeGrid.uniform(0.5, 5), [0.0], 2, seed=3, s0=s0)
    np.testing.assert_array_equal(b.z[:, 0], [100.0, 120.0])


def test_determinism_and_chunk_independence():
    model = Heston(40.0, 0.06, 0.16, 1.0, 0.16, 0.5, -0.5)
    grid = TimeGrid.uniform(1.0, 10, substeps=4)
    a = simulate_batch(model, grid, [0.275], 3 * BLOCK // 2, seed=9, purpose=PRICE)
    b = simulate_batch(model, grid, [0.275], 3 * BLOCK // 2, seed=9, purpose=PRICE)
    assert a.s.tobytes() == b.s.tobytes() and a.weights.tobytes() == b.weights.tobytes()
    tail = simulate_batch(model, grid, [0.275], 100, seed=9, purpose=PRICE, first_path=BLOCK - 50)
    assert tail.s.tobytes() == a.s[BLOCK - 50:BLOCK + 50].tobytes()
    assert tail.y.tobytes() == a.y[BLOCK - 50:BLOCK + 50].tobytes()


def test_heston_variance_nonnegative_and_feller_flag():
    model = Heston(40.0, 0.06, 0.16, 1.0, 0.16, 0.5, -0.5)
    assert model.feller
    b = simulate_batch(model, TimeGrid.uniform(1.0, 50, substeps=4), [0.0], 2000, seed=4)
    assert np.all(b.y >= 0)
    with pytest.warns(UserWarning, match="Feller"):
        Heston(40.0, 0.06, 0.04, 0.5, 0.04, 1.0, 0.0)


@pytest.mark.slow
def test_likelihood_ratio_is_a_martingale():
    model = BlackScholes(40.0, 0.06, 0.0, 0.4)
    b = simulate_batch(model, TimeGrid.uniform(1.0, 50), [0.275], 10 ** 6, seed=12)
    w = b.weights[:, -1]
    assert abs(w.mean() - 1.0) <= 3 * w.std() / np.sqrt(w.size)


@pytest.mark.slow
def test_dividend_adjusted_discounted_asset_is_martingale():
    model = BlackScholes(40.0, 0.06, 0.02, 0.4)
    b = simulate_batch(model, TimeGrid.uniform(1.0, 5), [0.0], 10 ** 6, seed=13)
    x = np.exp(-(0.06 - 0.02)) * b.s[:, -1, 0]
    assert abs(x.mean() - 40.0) <= 3 * x.std() / np.sqrt(x.size)


@pytest.mark.slow
def test_importance_sampling_european_put_consistency():
    model = BlackScholes(40.0, 0.06, 0.0, 0.4)
    grid = TimeGrid.uniform(1.0, 5)
    n = 400_000
    plain = simulate_batch(model, grid, [0.0], n, seed=14)
    shifted = simulate_batch(model, grid, [0.275], n, seed=15)
    h0 = np.exp(-0.06) * np.maximum(40 - plain.s[:, -1, 0], 0)
    h1 = np.exp(-0.06) * np.maximum(40 - shifted.s[:, -1, 0], 0) * shifted.weights[:, -1]
    se = np.hypot(h0.std() / np.sqrt(n), h1.std() / np.sqrt(n))
    assert abs(h0.mean() - h1.mean()) <= 3 * se
    exact = bs_european_closed("put", 40, 40, 0.06, 0.0, 0.4, 1.0)
    assert abs(h1.mean() - exact) <= 3 * h1.std() / np.sqrt(n)


def test_path_csv_dump(tmp_path):
    model = BlackScholes(100.0, 0.02, 0.04, 0.3, path_functional="running_max")
    b = simulate_batch(model, TimeGrid.uniform(0.5, 3), [0.0], 2, seed=0)
    path = tmp_path / "paths.csv"
    b.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "path,date_index,t,s0,y,z,weight"
    assert len(lines) == 1 + 2 * 4
