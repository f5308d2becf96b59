# tests/test_published_tables.py
#
# Full-size reproductions of the published price tables (20 runs, N=20,
# J=10000). These train hundreds of networks per strike and only run with
# --runslow. Estimates must sit within 3% of the published value, or within
# three standard errors of the run mean where the published RSD makes 3%
# tighter than the run-to-run noise.

import functools
import math

import pytest

from components.bsde_solver import (
    DriverSpec, SchemeConfig, solve_american_penalty, solve_american_reflect, solve_european
)
from components.config_loader import load_experiment_config
from components.constants import PATH_STUDY_SUMMARY_FILE
from components.experiments import run_path_study
from components.paths import GridSpec, ModelParams
from components.reference_pricers import black_scholes_put, crr_american_put, mc_european_put

pytestmark = pytest.mark.slow

PUBLISHED_CONFIG = SchemeConfig(workers=4)
GRID = GridSpec(1.0, 20)
STRIKES = [90.0, 100.0, 110.0, 120.0]

ROUGH = ModelParams()
MARKOVIAN = ModelParams(eta=0.0, rho=0.0)

EUROPEAN = dict(zip(STRIKES, [4.9535, 7.8061, 12.1940, 18.1699]))
ROUGH_PENALTY = {
    40.0: dict(zip(STRIKES, [5.5053, 9.6392, 15.4707, 22.5800])),
    10000.0: dict(zip(STRIKES, [5.5113, 9.6672, 15.4882, 22.6069])),
}
ROUGH_REFLECT = dict(zip(STRIKES, [5.5497, 9.6867, 15.5020, 22.5742]))
MARKOVIAN_PENALTY = {
    40.0: dict(zip(STRIKES, [5.5700, 9.7465, 15.6176, 22.7140])),
    10000.0: dict(zip(STRIKES, [5.5945, 9.7779, 15.6516, 22.7367])),
}
MARKOVIAN_REFLECT = dict(zip(STRIKES, [5.6157, 9.7928, 15.6341, 22.6994]))


@functools.cache
def _solve(scheme: str, K: float, markovian: bool = False, penalty: float = 0.0):
    params = MARKOVIAN if markovian else ROUGH
    if scheme == "european":
        return solve_european(params, GRID, PUBLISHED_CONFIG, DriverSpec("european-linear", params.r, K))
    if scheme == "penalty":
        return solve_american_penalty(params, GRID, PUBLISHED_CONFIG,
                                      DriverSpec("american-penalty", params.r, K, penalty))
    return solve_american_reflect(params, GRID, PUBLISHED_CONFIG, K)


def _assert_published(result, expected):
    slack = max(0.03 * expected, 3.0 * result.standard_error)
    assert abs(result.mean - expected) <= slack, (result.mean, expected, result.standard_error)


@pytest.mark.parametrize("K", STRIKES)
def test_rough_bergomi_european_puts(K):
    _assert_published(_solve("european", K), EUROPEAN[K])


@pytest.mark.parametrize("K", STRIKES)
def test_rough_bergomi_european_puts_match_monte_carlo(K):
    result = _solve("european", K)
    reference, reference_se = mc_european_put(ROUGH, GRID, K, 200000, seed=(2024, int(K)), workers=4)
    assert abs(result.mean - reference) <= 3.0 * math.hypot(result.standard_error, reference_se)


def test_constant_volatility_european_put():
    params = ModelParams(eta=0.0)
    result = solve_european(params, GRID, PUBLISHED_CONFIG, DriverSpec("european-linear", params.r, 100.0))
    assert result.mean == pytest.approx(black_scholes_put(100.0, 100.0, 0.05, 0.3, 1.0), rel=0.015)


@pytest.mark.parametrize("penalty", [40.0, 10000.0])
@pytest.mark.parametrize("K", STRIKES)
def test_rough_penalized_american_puts(K, penalty):
    _assert_published(_solve("penalty", K, penalty=penalty), ROUGH_PENALTY[penalty][K])


@pytest.mark.parametrize("K", STRIKES)
def test_rough_reflected_american_puts(K):
    _assert_published(_solve("reflect", K), ROUGH_REFLECT[K])


@pytest.mark.parametrize("K", STRIKES)
def test_rough_american_schemes_agree(K):
    penalized = _solve("penalty", K, penalty=10000.0)
    reflected = _solve("reflect", K)
    assert abs(penalized.mean - reflected.mean) / reflected.mean < 0.02


@pytest.mark.parametrize("K", STRIKES)
def test_rough_american_orderings(K):
    european = _solve("european", K)
    low = _solve("penalty", K, penalty=40.0)
    high = _solve("penalty", K, penalty=10000.0)
    assert high.mean >= low.mean - 2.0 * math.hypot(high.standard_error, low.standard_error)
    for american in (low, high, _solve("reflect", K)):
        assert american.mean >= european.mean - 2.0 * math.hypot(american.standard_error,
                                                                 european.standard_error)


@pytest.mark.parametrize("penalty", [40.0, 10000.0])
@pytest.mark.parametrize("K", STRIKES)
def test_markovian_penalized_american_puts(K, penalty):
    result = _solve("penalty", K, markovian=True, penalty=penalty)
    _assert_published(result, MARKOVIAN_PENALTY[penalty][K])
    crr = crr_american_put(100.0, K, 0.05, math.sqrt(MARKOVIAN.xi), 1.0)
    assert abs(result.mean - crr) <= max(0.02 * crr, 3.0 * result.standard_error)


@pytest.mark.parametrize("K", STRIKES)
def test_markovian_reflected_american_puts(K):
    result = _solve("reflect", K, markovian=True)
    _assert_published(result, MARKOVIAN_REFLECT[K])
    crr = crr_american_put(100.0, K, 0.05, math.sqrt(MARKOVIAN.xi), 1.0)
    assert abs(result.mean - crr) <= max(0.015 * crr, 3.0 * result.standard_error)


def test_path_study_free_history():
    config = load_experiment_config(overrides={"scheme": "path-study", "output_dir": "unused"})
    summary = run_path_study(config).tables[PATH_STUDY_SUMMARY_FILE]
    free = summary[summary["variant"] == "free"].iloc[0]
    pinned = summary[summary["variant"] == "pinned"].iloc[0]
    assert free["mean"] == pytest.approx(9.9287, rel=0.05)
    assert free["std"] == pytest.approx(0.4240, rel=0.05)
    assert pinned["mean"] == pytest.approx(9.9292, rel=0.05)
