# tests/test_bsde_solver.py

import dataclasses
import math

import numpy as np
import pandas as pd
import pytest

from components.bsde_solver import (
    DriverSpec, PathSampler, SchemeConfig, SolveResult, convergence_study, driver_eval,
    network_inputs, solve_american_penalty, solve_american_reflect, solve_european, solve_step_value,
    step_target, train_step
)
from components.exceptions import DivergenceError
from components.forward_model import simulate
from components.nn import build_step_networks, forward
from components.paths import GridSpec, ModelParams, covariance_factor
from components.reference_pricers import black_scholes_put


@pytest.fixture
def fixed_bundle(paper_params, small_grid):
    return simulate(covariance_factor(small_grid, paper_params.H), paper_params, small_grid, 2000, seed=31)


@pytest.fixture
def long_fit():
    """Fixed number of full-batch iterations, no early stop."""
    return SchemeConfig(batch_size=2000, check_interval=50, max_iterations=3000, min_iterations=3000,
                        tolerance=0.0, runs=1)


def test_driver_values():
    x = math.log(90.0)
    linear = DriverSpec("european-linear", r=0.05, K=100.0)
    penalty = DriverSpec("american-penalty", r=0.05, K=100.0, penalty=10.0)
    assert driver_eval(linear, 0.0, x, 5.0) == pytest.approx(-0.25)
    assert driver_eval(penalty, 0.0, x, 5.0) == pytest.approx(-0.25 + 10.0 * 5.0)
    assert driver_eval(penalty, 0.0, x, 12.0) == pytest.approx(-0.6)


def test_driver_spec_validation():
    with pytest.raises(ValueError):
        DriverSpec("american-penalty", r=0.05, K=100.0, penalty=-1.0)
    with pytest.raises(ValueError):
        DriverSpec("european-linear", r=0.05, K=100.0, penalty=40.0)
    with pytest.raises(ValueError):
        DriverSpec("bermudan", r=0.05, K=100.0)
    assert DriverSpec("american-penalty", 0.05, 100.0, 40.0).payoff.kind == "american-put"


def test_step_target_by_hand():
    spec = DriverSpec("european-linear", r=0.05, K=100.0)
    h = step_target(0.0, 0.1, 4.6, 2.0, 0.5, -1.0, 0.2, 0.3, spec)
    assert h == pytest.approx(2.0 + 0.05 * 2.0 * 0.1 + 0.5 * 0.2 - 1.0 * 0.3)


def test_zero_penalty_driver_is_linear():
    y = np.linspace(0.0, 30.0, 7)
    x = np.full(7, math.log(95.0))
    zero = DriverSpec("american-penalty", r=0.05, K=100.0, penalty=0.0)
    linear = DriverSpec("european-linear", r=0.05, K=100.0)
    assert np.array_equal(driver_eval(zero, 0.3, x, y), driver_eval(linear, 0.3, x, y))


def test_step_value_by_hand():
    linear = DriverSpec("european-linear", r=0.05, K=100.0)
    assert solve_step_value(linear, 0.0, 4.6, 10.1, 0.2) == pytest.approx(10.0)
    penalty = DriverSpec("american-penalty", r=0.0, K=100.0, penalty=40.0)
    x = math.log(90.0)
    assert solve_step_value(penalty, 0.0, x, 12.0, 0.5) == pytest.approx(12.0)
    assert solve_step_value(penalty, 0.0, x, 4.0, 0.5) == pytest.approx(204.0 / 21.0)


@pytest.mark.parametrize("kind, penalty", [("european-linear", 0.0), ("american-penalty", 0.0),
                                           ("american-penalty", 40.0), ("american-penalty", 10000.0)])
def test_step_value_inverts_step_target(kind, penalty):
    rng = np.random.default_rng(4)
    spec = DriverSpec(kind, r=0.05, K=110.0, penalty=penalty)
    x = math.log(100.0) + rng.normal(scale=0.3, size=400)
    w = rng.uniform(0.0, 60.0, size=400)
    y = solve_step_value(spec, 0.45, x, w, 0.05)
    h = step_target(0.45, 0.05, x, y, 0.0, 0.0, 0.0, 0.0, spec)
    assert np.allclose(h, w, rtol=1e-10, atol=1e-9)


def test_step_value_grows_with_penalty():
    w = np.linspace(0.0, 40.0, 81)
    x = np.full(81, math.log(100.0))
    values = [solve_step_value(DriverSpec("american-penalty", 0.05, 120.0, p), 0.5, x, w, 0.05)
              for p in (0.0, 40.0, 10000.0)]
    assert np.all(values[0] <= values[1]) and np.all(values[1] <= values[2])
    g = 120.0 - 100.0 * math.exp(0.05 * 0.5)
    assert np.all(values[2] >= 0.99 * g)


def test_network_inputs_layout(fixed_bundle, paper_params):
    features = network_inputs(fixed_bundle, 2, paper_params.x0)
    assert features.shape == (2000, 5)
    assert np.array_equal(features[:, 0], fixed_bundle.X[:, 2] - paper_params.x0)
    assert np.array_equal(features[:, 1:3], fixed_bundle.W[:, 1:3])
    assert np.array_equal(features[:, 3:], fixed_bundle.What[:, 1:3])
    assert np.all(network_inputs(fixed_bundle, 0, paper_params.x0) == 0.0)


def test_path_sampler_modes(paper_params, small_grid):
    fresh = PathSampler(paper_params, small_grid, 64, seed=(1, 0))
    assert not np.array_equal(fresh.draw(2, 1).dB, fresh.draw(2, 2).dB)
    assert np.array_equal(fresh.draw(2, 1).dB, fresh.draw(2, 1).dB)
    fixed = PathSampler(paper_params, small_grid, 64, seed=(1, 0), fixed_sample=True)
    assert fixed.draw(2, 1) is fixed.draw(3, 7)


def test_scheme_config_validation():
    with pytest.raises(ValueError, match="check_interval"):
        SchemeConfig(check_interval=100, max_iterations=50)
    with pytest.raises(ValueError, match="learning_rate"):
        SchemeConfig(learning_rate=0.0)
    with pytest.raises(ValueError, match="runs"):
        SchemeConfig(runs=0)


def test_train_step_fits_constant_target(fixed_bundle, paper_params, long_fit):
    c = 2.0
    nets = build_step_networks(0, (5, 0, 0, 0))
    trained = train_step(0, lambda b: np.full(b.J, c), fixed_bundle, nets, long_fit, paper_params.x0)
    assert trained.iterations == 3000
    assert trained.final_loss < 1e-3 * c ** 2
    assert forward(nets.u, np.zeros((1, 1)))[0, 0] == pytest.approx(c, rel=0.01)
    assert list(trained.history.columns) == ["iteration", "loss"]
    assert len(trained.history) == 3000 // 50


def test_train_step_recovers_martingale_integrand(fixed_bundle, paper_params, long_fit):
    a = 0.5
    nets = build_step_networks(0, (5, 0, 0, 1))
    train_step(0, lambda b: a * b.dB[:, 0], fixed_bundle, nets, long_fit, paper_params.x0)
    zero_input = np.zeros((1, 1))
    assert forward(nets.z, zero_input)[0, 0] == pytest.approx(a, rel=0.02)
    assert abs(forward(nets.ztilde, zero_input)[0, 0]) < 0.02 * a
    assert abs(forward(nets.u, zero_input)[0, 0]) < 0.02 * a


def test_train_step_learns_current_log_price(fixed_bundle, paper_params, long_fit):
    i = 2
    nets = build_step_networks(i, (5, 0, 0, 2))
    train_step(i, lambda b: b.X[:, i], fixed_bundle, nets, long_fit, paper_params.x0)
    fitted = forward(nets.u, network_inputs(fixed_bundle, i, paper_params.x0))[:, 0]
    target = fixed_bundle.X[:, i]
    assert np.mean((fitted - target) ** 2) < 2e-2 * target.var()


def test_train_step_stops_on_loss_plateau(fixed_bundle, paper_params):
    config = SchemeConfig(batch_size=2000, check_interval=50, max_iterations=3000, min_iterations=0,
                          tolerance=1.0, runs=1)
    nets = build_step_networks(1, (5, 0, 0, 3))
    trained = train_step(1, lambda b: b.X[:, 2], fixed_bundle, nets, config, paper_params.x0)
    assert trained.iterations == 100
    assert len(trained.history) == 2


def test_train_step_raises_on_non_finite_loss(fixed_bundle, paper_params, long_fit):
    nets = build_step_networks(1, (5, 0, 0, 4))
    with pytest.raises(DivergenceError) as info:
        train_step(1, lambda b: np.full(b.J, np.nan), fixed_bundle, nets, long_fit, paper_params.x0)
    assert info.value.step == 1
    assert info.value.iteration == 1


def test_train_step_rejects_networks_of_another_step(fixed_bundle, paper_params, long_fit):
    with pytest.raises(ValueError):
        train_step(1, lambda b: b.X[:, 2], fixed_bundle, build_step_networks(2, (0,)), long_fit, paper_params.x0)


def test_solve_result_statistics():
    result = SolveResult(scheme="european", K=100.0, prices=np.array([1.0, 2.0, 3.0]),
                         step_losses=np.zeros((3, 2)), step_iterations=np.zeros((3, 2), dtype=int),
                         loss_history=pd.DataFrame())
    assert result.mean == 2.0
    assert result.std == pytest.approx(1.0)
    assert result.rsd == pytest.approx(0.5)
    assert result.standard_error == pytest.approx(1 / math.sqrt(3))
    assert list(result.runs_frame().columns) == ["run", "K", "scheme", "price"]


SOLVE_CONFIG = SchemeConfig(batch_size=1000, check_interval=50, max_iterations=600, min_iterations=200,
                            tolerance=1e-3, runs=1, learning_rate=5e-3, seed=3)


def test_deterministic_forward_reduces_to_discounted_payoff():
    params = ModelParams(xi=0.0)
    grid = GridSpec(1.0, 5)
    result = solve_european(params, grid, SOLVE_CONFIG, DriverSpec("european-linear", params.r, 120.0))
    assert result.mean == pytest.approx(14.1476, rel=0.01)
    assert result.loss_history["loss"].notna().all()


def test_reflected_scheme_exercises_immediately_when_deep_in_the_money():
    params = ModelParams(xi=0.0)
    grid = GridSpec(1.0, 5)
    result = solve_american_reflect(params, grid, SOLVE_CONFIG, 120.0)
    assert result.prices[0] == pytest.approx(20.0, abs=1e-9)
    assert result.scheme == "american-reflect"


def test_constant_volatility_matches_black_scholes():
    params = ModelParams(eta=0.0)
    grid = GridSpec(1.0, 5)
    config = dataclasses.replace(SOLVE_CONFIG, batch_size=4096, learning_rate=1e-2)
    result = solve_european(params, grid, config, DriverSpec("european-linear", params.r, 100.0))
    reference = black_scholes_put(params.s0, 100.0, params.r, math.sqrt(params.xi), grid.T)
    assert result.mean == pytest.approx(reference, rel=0.03)


def _deterministic_penalty_price(params, grid, K, penalty):
    """Backward recursion of the penalized step when xi = 0 (no randomness left)."""
    dt = grid.dt
    y = K - params.s0 * math.exp(params.r * grid.T)
    for t in reversed(grid.t[:-1]):
        g = max(K - params.s0 * math.exp(params.r * t), 0.0)
        linear = y / (1.0 + params.r * dt)
        y = linear if linear >= g else (y + penalty * dt * g) / (1.0 + params.r * dt + penalty * dt)
    return y


def test_penalized_scheme_follows_deterministic_recursion():
    params = ModelParams(xi=0.0)
    grid = GridSpec(1.0, 5)
    european = solve_european(params, grid, SOLVE_CONFIG, DriverSpec("european-linear", params.r, 120.0))
    prices = {}
    for penalty in (40.0, 10000.0):
        result = solve_american_penalty(params, grid, SOLVE_CONFIG,
                                        DriverSpec("american-penalty", params.r, 120.0, penalty))
        expected = _deterministic_penalty_price(params, grid, 120.0, penalty)
        assert result.mean == pytest.approx(expected, rel=0.01)
        prices[penalty] = result.mean
    assert european.mean < prices[40.0] <= prices[10000.0] < 120.0
    assert prices[10000.0] == pytest.approx(20.0, rel=0.01)


def test_penalized_price_stays_near_reflected_price(paper_params, small_grid, quick_scheme):
    european = solve_european(paper_params, small_grid, quick_scheme,
                              DriverSpec("european-linear", paper_params.r, 100.0))
    low = solve_american_penalty(paper_params, small_grid, quick_scheme,
                                 DriverSpec("american-penalty", paper_params.r, 100.0, 40.0))
    high = solve_american_penalty(paper_params, small_grid, quick_scheme,
                                  DriverSpec("american-penalty", paper_params.r, 100.0, 10000.0))
    reflected = solve_american_reflect(paper_params, small_grid, quick_scheme, 100.0)
    assert european.mean < low.mean < 0.5 * 100.0
    assert low.mean <= 1.02 * high.mean
    assert high.mean == pytest.approx(reflected.mean, rel=0.01)


def test_zero_penalty_reproduces_european_prices(paper_params, small_grid, quick_scheme):
    european = solve_european(paper_params, small_grid, quick_scheme,
                              DriverSpec("european-linear", paper_params.r, 100.0))
    penalized = solve_american_penalty(paper_params, small_grid, quick_scheme,
                                       DriverSpec("american-penalty", paper_params.r, 100.0, 0.0))
    assert np.array_equal(european.prices, penalized.prices)
    assert penalized.scheme == "american-penalty-N0"


def test_solve_is_reproducible_and_thread_count_free(paper_params, small_grid, quick_scheme):
    config = dataclasses.replace(quick_scheme, runs=2)
    driver = DriverSpec("european-linear", paper_params.r, 110.0)
    serial = solve_european(paper_params, small_grid, config, driver)
    again = solve_european(paper_params, small_grid, config, driver)
    threaded = solve_european(paper_params, small_grid, dataclasses.replace(config, workers=2), driver)
    assert np.array_equal(serial.prices, again.prices)
    assert np.array_equal(serial.prices, threaded.prices)
    assert serial.prices[0] != serial.prices[1]
    assert serial.step_losses.shape == (2, small_grid.N)
    assert set(serial.loss_history.columns) == {"run", "step", "iteration", "loss"}


def test_retained_networks_cover_every_step(paper_params, small_grid, quick_scheme):
    config = dataclasses.replace(quick_scheme, retain_networks=True)
    result = solve_american_reflect(paper_params, small_grid, config, 100.0)
    nets = result.networks[0]
    assert sorted(nets) == list(range(small_grid.N))
    assert all(nets[i].input_dim == 1 + 2 * i for i in nets)
    assert result.prices[0] >= 0.0


def test_convergence_study_table(paper_params, quick_scheme):
    study = convergence_study(paper_params, quick_scheme, 100.0, [1, 2], mc_samples=1000)
    assert list(study.table["N"]) == [1, 2]
    assert {"mean", "rsd", "mean_step_loss", "mc_reference", "abs_error"} <= set(study.table.columns)
    assert len(study.step_losses) == 1 + 2
    assert np.all(np.isfinite(study.table["mean"]))


def test_convergence_study_rejects_unsorted_steps(paper_params, quick_scheme):
    with pytest.raises(ValueError):
        convergence_study(paper_params, quick_scheme, 100.0, [2, 1])
