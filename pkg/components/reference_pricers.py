# components/reference_pricers.py

"""
Independent oracles: Monte Carlo European put on the same path machinery,
the Black-Scholes closed form and a Cox-Ross-Rubinstein tree for American
puts.
"""

import math

import numpy as np
from scipy.stats import norm

from .constants import DEFAULT_CRR_STEPS
from .exceptions import ArbitrageError
from .forward_model import PayoffSpec, payoff_terminal, simulate
from .paths import GridSpec, ModelParams, Seed, covariance_factor


def mc_european_put(params: ModelParams, grid: GridSpec, K: float, J: int, seed: Seed,
                    workers: int = 1) -> tuple[float, float]:
    """Mean of e^{-rT} (K - e^{X_T + rT})^+ over J paths, with its standard error."""
    if J < 2:
        raise ValueError(f"J must be at least 2, got {J}")
    bundle = simulate(covariance_factor(grid, params.H), params, grid, J, seed, workers)
    discounted = math.exp(-params.r * grid.T) * payoff_terminal(
        bundle.X[:, grid.N], PayoffSpec("european-put", K), params.r, grid.T)
    if np.ptp(discounted) == 0:
        return float(discounted[0]), 0.0
    return float(discounted.mean()), float(discounted.std(ddof=1) / math.sqrt(J))


def _d1_d2(s0, K, r, sigma, T):
    vol = sigma * math.sqrt(T)
    d1 = (math.log(s0 / K) + (r + 0.5 * sigma ** 2) * T) / vol
    return d1, d1 - vol


def black_scholes_put(s0: float, K: float, r: float, sigma: float, T: float) -> float:
    if sigma < 0 or T <= 0:
        raise ValueError("black_scholes_put needs sigma >= 0 and T > 0")
    if sigma == 0:
        return math.exp(-r * T) * max(K - s0 * math.exp(r * T), 0.0)
    d1, d2 = _d1_d2(s0, K, r, sigma, T)
    return K * math.exp(-r * T) * norm.cdf(-d2) - s0 * norm.cdf(-d1)


def black_scholes_call(s0: float, K: float, r: float, sigma: float, T: float) -> float:
    if sigma < 0 or T <= 0:
        raise ValueError("black_scholes_call needs sigma >= 0 and T > 0")
    if sigma == 0:
        return math.exp(-r * T) * max(s0 * math.exp(r * T) - K, 0.0)
    d1, d2 = _d1_d2(s0, K, r, sigma, T)
    return s0 * norm.cdf(d1) - K * math.exp(-r * T) * norm.cdf(d2)


def crr_american_put(s0: float, K: float, r: float, sigma: float, T: float,
                     steps: int = DEFAULT_CRR_STEPS) -> float:
    """Cox-Ross-Rubinstein lattice with an early-exercise max at every node."""
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    dt = T / steps
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    if u == d:
        raise ArbitrageError(float("nan"))
    p = (math.exp(r * dt) - d) / (u - d)
    if not 0.0 < p < 1.0:
        raise ArbitrageError(p)

    discount = math.exp(-r * dt)
    # node j at level i holds s0 * u^j * d^(i-j)
    ups = np.arange(steps + 1)
    values = np.maximum(K - s0 * u ** ups * d ** (steps - ups), 0.0)
    for i in range(steps - 1, -1, -1):
        ups = np.arange(i + 1)
        values = discount * (p * values[1:i + 2] + (1.0 - p) * values[:i + 1])
        values = np.maximum(values, K - s0 * u ** ups * d ** (i - ups))
    return float(values[0])
