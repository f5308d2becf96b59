# components/paths.py

"""
Exact joint Gaussian simulation of the driving Brownian motion W, the
Riemann-Liouville fractional Brownian motion

    What_t = int_0^t sqrt(2H) (t - s)^(H - 1/2) dW_s,

an independent Brownian motion B and the rough Bergomi variance V on a
uniform time grid. The vector (W_{t_1..t_N}, What_{t_1..t_N}) is sampled
through the Cholesky factor of its exact covariance.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.linalg import cholesky, LinAlgError
from scipy.special import gamma, hyp2f1, roots_legendre

from .constants import CHOLESKY_JITTERS, PATH_BLOCK_SIZE, QUADRATURE_NODES
from .exceptions import IllConditionedCovarianceError

logger = logging.getLogger(__name__)

Seed = int | Sequence[int]


@dataclass(frozen=True)
class GridSpec:
    """Uniform partition 0 = t_0 < ... < t_N = T."""
    T: float
    N: int

    def __post_init__(self):
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N < 1:
            raise ValueError(f"GridSpec.N must be a positive integer, got {self.N!r}")
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError(f"GridSpec.T must be positive, got {self.T!r}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.N + 1)

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def mesh(self) -> float:
        return self.dt

    def index_of(self, time: float, atol: float = 1e-10) -> int:
        """Grid index of `time`; raises ValueError when `time` is not a grid point."""
        k = int(round(time / self.dt))
        if k < 0 or k > self.N or abs(k * self.dt - time) > atol:
            raise ValueError(f"t={time} is not a point of the grid (T={self.T}, N={self.N})")
        return k


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    param: float

    def __post_init__(self):
        if self.kind == "riemann-liouville":
            if not 0.0 < self.param <= 0.5:
                raise ValueError(f"Riemann-Liouville kernel needs H in (0, 1/2], got {self.param}")
        elif self.kind == "rough-heston-power":
            if not 0.5 < self.param < 1.0:
                raise ValueError(f"power-law kernel needs alpha in (1/2, 1), got {self.param}")
        else:
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        pos = r > 0
        if self.kind == "riemann-liouville":
            out[pos] = math.sqrt(2.0 * self.param) * r[pos] ** (self.param - 0.5)
        else:
            out[pos] = r[pos] ** (self.param - 1.0) / gamma(self.param)
        return out


@dataclass(frozen=True)
class ModelParams:
    """Rough Bergomi parameters with a flat forward variance curve."""
    H: float = 0.07
    eta: float = 1.9
    rho: float = -0.9
    xi: float = 0.09
    r: float = 0.05
    s0: float = 100.0

    def __post_init__(self):
        problems = []
        if not 0.0 < self.H <= 0.5:
            problems.append(f"H must lie in (0, 1/2], got {self.H}")
        if not self.eta >= 0:
            problems.append(f"eta must be nonnegative, got {self.eta}")
        if not abs(self.rho) <= 1:
            problems.append(f"rho must lie in [-1, 1], got {self.rho}")
        if not self.xi >= 0:
            problems.append(f"xi must be nonnegative, got {self.xi}")
        if not self.s0 > 0:
            problems.append(f"s0 must be positive, got {self.s0}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def x0(self) -> float:
        return math.log(self.s0)


@dataclass(frozen=True, eq=False)
class CovarianceFactor:
    """Lower Cholesky factor of Cov(W_{t_1..t_N}, What_{t_1..t_N}) and the jitter it needed."""
    L: np.ndarray
    jitter: float = 0.0

    @property
    def dimension(self) -> int:
        return self.L.shape[0]


@dataclass(eq=False)
class PathBundle:
    """
    J sampled trajectories on the grid. Arrays indexed [sample, i]:
    W, What, V, X have N+1 columns (grid points), dW and dB have N
    columns (increments over [t_i, t_{i+1}]).
    """
    W: np.ndarray
    What: np.ndarray
    dW: np.ndarray
    dB: np.ndarray
    V: np.ndarray
    X: np.ndarray
    seed: Seed

    @property
    def J(self) -> int:
        return self.W.shape[0]

    @property
    def N(self) -> int:
        return self.dW.shape[1]


@dataclass(frozen=True)
class RoughHestonParams:
    V0: float
    lam: float
    theta: float
    zeta: float
    alpha: float

    def __post_init__(self):
        if not 0.5 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (1/2, 1), got {self.alpha}")
        if self.V0 < 0 or self.theta < 0:
            raise ValueError("V0 and theta must be nonnegative")


def _check_hurst(H: float):
    if not 0.0 < H <= 0.5:
        raise ValueError(f"Hurst index must lie in (0, 1/2], got {H}")


def rl_covariance_closed_form(s, t, H: float) -> np.ndarray:
    """Cov(What_s, What_t) through the Gauss hypergeometric function."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    lo, hi = np.minimum(s, t), np.maximum(s, t)
    a = H + 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 2 * H / a * lo ** a * hi ** (H - 0.5) * hyp2f1(1.0, 0.5 - H, 1.5 + H, lo / hi)
    return np.where(lo > 0, val, 0.0)


def _rl_fbm_covariance(times: np.ndarray, H: float) -> np.ndarray:
    # Off-diagonal entries: substituting v = (s-u)^(H+1/2) removes the endpoint
    # singularity, leaving (2H/a) int_0^{s^a} (t - s + v^(1/a))^(H-1/2) dv.
    a = H + 0.5
    nodes, weights = roots_legendre(QUADRATURE_NODES)
    cov = np.diag(times ** (2 * H))
    iu, ju = np.triu_indices(len(times), k=1)
    s, t = times[iu], times[ju]
    upper = s ** a
    v = 0.5 * upper[:, None] * (nodes[None, :] + 1.0)
    integrand = ((t - s)[:, None] + v ** (1.0 / a)) ** (H - 0.5)
    integral = 0.5 * upper * (integrand @ weights)
    cov[iu, ju] = 2 * H / a * integral
    cov[ju, iu] = cov[iu, ju]
    return cov


def build_covariance(grid: GridSpec, H: float) -> np.ndarray:
    """
    Covariance of (W_{t_1},...,W_{t_N}, What_{t_1},...,What_{t_N}) as a 2N x 2N matrix.
    """
    _check_hurst(H)
    if not isinstance(grid, GridSpec):
        raise ValueError("build_covariance needs a uniform GridSpec")
    times = grid.t[1:]
    a = H + 0.5

    cov_ww = np.minimum.outer(times, times)
    s_mat, t_mat = np.meshgrid(times, times, indexing="ij")
    overlap = np.minimum(s_mat, t_mat)
    cov_wh = math.sqrt(2 * H) / a * (t_mat ** a - (t_mat - overlap) ** a)
    cov_hh = _rl_fbm_covariance(times, H)

    return np.block([[cov_ww, cov_wh], [cov_wh.T, cov_hh]])


def factorize(cov: np.ndarray) -> CovarianceFactor:
    """Cholesky factor with an escalating diagonal jitter ladder."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
        raise ValueError("covariance must be symmetric")

    eye = np.eye(cov.shape[0])
    for jitter in CHOLESKY_JITTERS:
        try:
            L = cholesky(cov + jitter * eye, lower=True)
        except LinAlgError:
            continue
        if not np.all(np.isfinite(L)):
            continue
        if jitter > 0:
            logger.warning("Cholesky needed diagonal jitter %g", jitter)
        L.flags.writeable = False
        return CovarianceFactor(L=L, jitter=jitter)
    raise IllConditionedCovarianceError(CHOLESKY_JITTERS[-1])


@lru_cache(maxsize=32)
def covariance_factor(grid: GridSpec, H: float) -> CovarianceFactor:
    """Factor for (grid, H), built once and shared; the factor is read-only."""
    factor = factorize(build_covariance(grid, H))
    logger.debug("Built covariance factor N=%d H=%g jitter=%g", grid.N, H, factor.jitter)
    return factor


def bergomi_variance(What: np.ndarray, grid: GridSpec, params: ModelParams) -> np.ndarray:
    """V_t = xi * exp(eta * What_t - eta^2/2 * t^(2H)), the Wick exponential of eta*What."""
    What = np.asarray(What, dtype=float)
    if np.any(What[..., 0] != 0.0):
        raise ValueError("What must start at 0")
    t = grid.t
    return params.xi * np.exp(params.eta * What - 0.5 * params.eta ** 2 * t ** (2 * params.H))


def _block_sizes(J: int) -> list[tuple[int, int]]:
    n_blocks = math.ceil(J / PATH_BLOCK_SIZE)
    return [(b, min(PATH_BLOCK_SIZE, J - b * PATH_BLOCK_SIZE)) for b in range(n_blocks)]


def sample_paths(factor: CovarianceFactor, params: ModelParams, grid: GridSpec,
                 J: int, seed: Seed, workers: int = 1) -> PathBundle:
    """
    Draws J trajectories of (W, What, B, V). X is left for the Euler scheme:
    X[:, 0] = x0 and the remaining columns are NaN until
    forward_model.euler_logprice fills them.

    Each block of PATH_BLOCK_SIZE samples has its own stream
    SeedSequence(seed, spawn_key=(block,)), so the output does not depend on
    `workers`. Normals come from numpy's ziggurat `standard_normal`.
    """
    if J < 1:
        raise ValueError(f"J must be at least 1, got {J}")
    n = grid.N
    if factor.dimension != 2 * n:
        raise ValueError(f"factor has dimension {factor.dimension}, grid needs {2 * n}")
    entropy = seed if isinstance(seed, int) else list(seed)
    sqrt_dt = math.sqrt(grid.dt)

    def draw(block):
        index, size = block
        rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(index,)))
        z = rng.standard_normal((size, 2 * n))
        db = rng.standard_normal((size, n)) * sqrt_dt
        return z @ factor.L.T, db

    blocks = _block_sizes(J)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(draw, blocks))
    else:
        parts = [draw(b) for b in blocks]

    gauss = np.vstack([p[0] for p in parts])
    dB = np.vstack([p[1] for p in parts])

    W = np.zeros((J, n + 1))
    W[:, 1:] = gauss[:, :n]
    What = np.zeros((J, n + 1))
    What[:, 1:] = gauss[:, n:]
    X = np.full((J, n + 1), np.nan)
    X[:, 0] = params.x0

    return PathBundle(
        W=W, What=What, dW=np.diff(W, axis=1), dB=dB,
        V=bergomi_variance(What, grid, params), X=X, seed=seed,
    )


def rough_heston_variance(grid: GridSpec, params: RoughHestonParams, dW: np.ndarray) -> np.ndarray:
    """
    Explicit Volterra-Euler scheme

        V[i+1] = V0 + sum_{j<=i} K(t_{i+1} - t_j) [lam (theta - V+[j]) dt + zeta sqrt(V+[j]) dW[j]]

    with the power-law kernel K(r) = r^(alpha-1)/Gamma(alpha) and V+ = max(V, 0).
    Accepts increments of shape (N,) or (J, N); returns the truncated path(s).
    """
    dW = np.asarray(dW, dtype=float)
    single = dW.ndim == 1
    dW = np.atleast_2d(dW)
    if dW.shape[1] != grid.N:
        raise ValueError(f"dW has {dW.shape[1]} steps, grid has {grid.N}")

    kernel = KernelSpec("rough-heston-power", params.alpha)
    t, dt = grid.t, grid.dt
    V = np.empty((dW.shape[0], grid.N + 1))
    V[:, 0] = params.V0
    for i in range(grid.N):
        weights = kernel(t[i + 1] - t[: i + 1])
        v_pos = np.maximum(V[:, : i + 1], 0.0)
        increments = params.lam * (params.theta - v_pos) * dt + params.zeta * np.sqrt(v_pos) * dW[:, : i + 1]
        V[:, i + 1] = params.V0 + increments @ weights

    V = np.maximum(V, 0.0)
    return V[0] if single else V


def rough_heston_mean_curve(grid: GridSpec, params: RoughHestonParams, refine: int = 10) -> np.ndarray:
    """E[V_t] on `grid` from the mean Volterra equation solved on a `refine`-times finer grid."""
    fine = GridSpec(grid.T, grid.N * refine)
    mean_path = rough_heston_variance(fine, replace(params, zeta=0.0), np.zeros(fine.N))
    return mean_path[::refine]


def dump_paths_csv(bundle: PathBundle, grid: GridSpec, path) -> pd.DataFrame:
    """Writes the bundle in long format: sample, i, t, W, What, V, X."""
    J, n1 = bundle.W.shape
    df = pd.DataFrame({
        "sample": np.repeat(np.arange(J), n1),
        "i": np.tile(np.arange(n1), J),
        "t": np.tile(grid.t, J),
        "W": bundle.W.ravel(),
        "What": bundle.What.ravel(),
        "V": bundle.V.ravel(),
        "X": bundle.X.ravel(),
    })
    df.to_csv(path, index=False, float_format="%.10g")
    return df
