# components/forward_model.py

"""
Euler scheme for the discounted log-price X_t = -rt + log S_t and the put
payoffs written in the same coordinate, G(x) = (K - e^{x+rT})^+ and
g_t(x) = (K - e^{x+rt})^+.
"""

import math
from dataclasses import dataclass

import numpy as np

from .paths import CovarianceFactor, GridSpec, ModelParams, PathBundle, Seed, sample_paths

PAYOFF_KINDS = ("european-put", "american-put")


@dataclass(frozen=True)
class PayoffSpec:
    kind: str
    K: float

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise ValueError(f"payoff kind must be one of {PAYOFF_KINDS}, got {self.kind!r}")
        if not self.K > 0:
            raise ValueError(f"strike must be positive, got {self.K}")


def euler_logprice(paths: PathBundle, params: ModelParams, grid: GridSpec) -> np.ndarray:
    """
    Fills paths.X in place with left-point Euler steps
    X[i+1] = X[i] - V[i]/2 dt + sqrt(V[i]) (rho dW[i] + sqrt(1-rho^2) dB[i]).
    """
    rho_bar = math.sqrt(max(1.0 - params.rho ** 2, 0.0))
    vol = np.sqrt(paths.V[:, :-1])
    shocks = vol * (params.rho * paths.dW + rho_bar * paths.dB) - 0.5 * paths.V[:, :-1] * grid.dt

    X = paths.X
    X[:, 0] = params.x0
    X[:, 1:] = params.x0 + np.cumsum(shocks, axis=1)
    return X


def simulate(factor: CovarianceFactor, params: ModelParams, grid: GridSpec,
             J: int, seed: Seed, workers: int = 1) -> PathBundle:
    """sample_paths followed by euler_logprice."""
    bundle = sample_paths(factor, params, grid, J, seed, workers=workers)
    euler_logprice(bundle, params, grid)
    return bundle


def payoff_running(t, x, spec: PayoffSpec, r: float):
    """g_t(x) = (K - e^{x + r t})^+."""
    return np.maximum(spec.K - np.exp(np.asarray(x, dtype=float) + r * np.asarray(t, dtype=float)), 0.0)


def payoff_terminal(x, spec: PayoffSpec, r: float, T: float):
    """G(x) = (K - e^{x + r T})^+ for both put kinds."""
    return payoff_running(T, x, spec, r)
