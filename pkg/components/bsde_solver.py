# components/bsde_solver.py

"""
Backward deep-learning scheme for the FBSDE attached to the pricing BSPDE.

For i = N-1, ..., 0 a triple of networks (w_i, Z_i, Ztilde_i) with inputs
(X_{t_i}, W_{t_1..t_i}, What_{t_1..t_i}) is trained so that

    w_i + Z_i dB_i + Ztilde_i dW_i

matches the frozen estimate Uhat_{i+1} in mean square. The step value U_i
solves U_i - F(t_i, X_{t_i}, U_i) dt = w_i in closed form, so that
H_i = U_i - F dt + Z_i dB_i + Ztilde_i dW_i is the fitted regression.
Uhat_N is the exact payoff. The price is U_0 at x0.

Two drivers are supported: the linear discounting driver F = -r y
(European put) and the penalized driver F = -r y + penalty (g - y)^+
(American put). The reflected scheme uses the linear driver and floors
every Uhat_i at the running payoff.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .constants import (
    DEFAULT_BATCH_SIZE, DEFAULT_CHECK_INTERVAL, DEFAULT_MAX_ITERATIONS,
    DEFAULT_MIN_ITERATIONS, DEFAULT_TOLERANCE, DEFAULT_RUNS,
    DEFAULT_LEARNING_RATE, DEFAULT_SEED
)
from .exceptions import DivergenceError
from .forward_model import PayoffSpec, payoff_running, payoff_terminal, simulate
from .nn import StepNetworks, adam_step, backward, build_step_networks, forward
from .paths import GridSpec, ModelParams, PathBundle, covariance_factor
from .reference_pricers import mc_european_put
from .utils import relative_std, sample_std, standard_error

logger = logging.getLogger(__name__)

DRIVER_KINDS = ("european-linear", "american-penalty")


@dataclass(frozen=True)
class DriverSpec:
    kind: str
    r: float
    K: float
    penalty: float = 0.0

    def __post_init__(self):
        if self.kind not in DRIVER_KINDS:
            raise ValueError(f"driver kind must be one of {DRIVER_KINDS}, got {self.kind!r}")
        if self.penalty < 0:
            raise ValueError(f"penalty must be nonnegative, got {self.penalty}")
        if self.kind == "european-linear" and self.penalty != 0:
            raise ValueError("the linear driver takes no penalty")

    @property
    def payoff(self) -> PayoffSpec:
        kind = "american-put" if self.kind == "american-penalty" else "european-put"
        return PayoffSpec(kind, self.K)


@dataclass(frozen=True)
class SchemeConfig:
    batch_size: int = DEFAULT_BATCH_SIZE
    check_interval: int = DEFAULT_CHECK_INTERVAL
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    min_iterations: int = DEFAULT_MIN_ITERATIONS
    tolerance: float = DEFAULT_TOLERANCE
    runs: int = DEFAULT_RUNS
    learning_rate: float = DEFAULT_LEARNING_RATE
    seed: int = DEFAULT_SEED
    fixed_sample: bool = False
    hidden_layers: int = 1
    workers: int = 1
    init_output_bias: bool = True
    retain_networks: bool = False

    def __post_init__(self):
        problems = []
        for name in ("batch_size", "check_interval", "max_iterations", "runs", "hidden_layers", "workers"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.min_iterations < 0:
            problems.append("min_iterations must be nonnegative")
        if self.tolerance < 0:
            problems.append("tolerance must be nonnegative")
        if not self.learning_rate > 0:
            problems.append("learning_rate must be positive")
        if self.seed < 0:
            problems.append("seed must be nonnegative")
        if self.check_interval > self.max_iterations:
            problems.append("check_interval must not exceed max_iterations")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class StepTraining:
    nets: StepNetworks
    history: pd.DataFrame
    final_loss: float
    iterations: int


@dataclass
class SolveResult:
    scheme: str
    K: float
    prices: np.ndarray
    step_losses: np.ndarray
    step_iterations: np.ndarray
    loss_history: pd.DataFrame
    networks: list[dict[int, StepNetworks]] | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.prices))

    @property
    def std(self) -> float:
        return sample_std(self.prices)

    @property
    def rsd(self) -> float:
        return relative_std(self.prices)

    @property
    def standard_error(self) -> float:
        return standard_error(self.prices)

    def runs_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "run": np.arange(len(self.prices)),
            "K": self.K,
            "scheme": self.scheme,
            "price": self.prices,
        })


def driver_eval(spec: DriverSpec, t, x, y, z=None, ztilde=None):
    """F(t, x, y, z, ztilde); neither driver depends on z or ztilde."""
    value = -spec.r * np.asarray(y, dtype=float)
    if spec.kind == "american-penalty":
        gap = payoff_running(t, x, spec.payoff, spec.r) - y
        value = value + spec.penalty * np.maximum(gap, 0.0)
    return value


def step_target(t_i, dt, x, y, z, ztilde, dB, dW, spec: DriverSpec):
    """H = y - F dt + z dB + ztilde dW."""
    return y - driver_eval(spec, t_i, x, y, z, ztilde) * dt + z * dB + ztilde * dW


def solve_step_value(spec: DriverSpec, t, x, w, dt):
    """
    The y with y - F(t, x, y) dt = w.

    Linear driver: y = w / (1 + r dt). Penalized driver: the same value where
    it is at least g_t(x), else (w + penalty dt g) / (1 + r dt + penalty dt).
    """
    w = np.asarray(w, dtype=float)
    linear = w / (1.0 + spec.r * dt)
    if spec.kind != "american-penalty":
        return linear
    g = payoff_running(t, x, spec.payoff, spec.r)
    penalized = (w + spec.penalty * dt * g) / (1.0 + spec.r * dt + spec.penalty * dt)
    return np.where(linear >= g, linear, penalized)


def network_inputs(paths: PathBundle, i: int, x0: float) -> np.ndarray:
    """(X_{t_i} - x0, W_{t_1..t_i}, What_{t_1..t_i}); width 1 + 2i."""
    return np.column_stack([paths.X[:, i] - x0, paths.W[:, 1:i + 1], paths.What[:, 1:i + 1]])


class PathSampler:
    """
    Source of training batches. Fresh paths per (step, iteration) by default;
    in fixed-sample mode one bundle is drawn once and reused everywhere.
    """

    def __init__(self, params: ModelParams, grid: GridSpec, batch_size: int,
                 seed: Sequence[int], fixed_sample: bool = False, workers: int = 1):
        self.params = params
        self.grid = grid
        self.batch_size = batch_size
        self.seed = tuple(seed)
        self.workers = workers
        self.factor = covariance_factor(grid, params.H)
        self._fixed = None
        if fixed_sample:
            self._fixed = simulate(self.factor, params, grid, batch_size, (*self.seed, 2, 0, 0), workers)

    @classmethod
    def from_bundle(cls, bundle: PathBundle) -> "PathSampler":
        sampler = cls.__new__(cls)
        sampler._fixed = bundle
        return sampler

    def draw(self, step: int, iteration: int) -> PathBundle:
        if self._fixed is not None:
            return self._fixed
        return simulate(self.factor, self.params, self.grid, self.batch_size,
                        (*self.seed, 1, step, iteration), self.workers)


def train_step(i: int, target_evaluator: Callable[[PathBundle], np.ndarray],
               paths: PathBundle | PathSampler, nets: StepNetworks, config: SchemeConfig,
               x0: float) -> StepTraining:
    """
    Minimizes mean |Uhat_{i+1} - H_i|^2 over the parameters of `nets` with Adam.
    `nets.u` regresses w_i = H_i - Z_i dB_i - Ztilde_i dW_i and the step value
    is `solve_step_value` of it, so the loss is linear in every output for
    both drivers.

    Stops when the mean loss of a check interval improves by less than
    `config.tolerance` (relative) on the previous interval, once
    `config.min_iterations` have run, or at `config.max_iterations`.
    """
    if nets.input_dim != 1 + 2 * i:
        raise ValueError(f"step {i} networks need input width {1 + 2 * i}, got {nets.input_dim}")
    sampler = paths if isinstance(paths, PathSampler) else PathSampler.from_bundle(paths)

    history = []
    window = []
    previous = None
    iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        bundle = sampler.draw(i, iteration)
        features = network_inputs(bundle, i, x0)
        target = np.asarray(target_evaluator(bundle), dtype=float).reshape(-1)
        dB, dW = bundle.dB[:, i], bundle.dW[:, i]

        w = forward(nets.u, features)[:, 0]
        if iteration == 1 and config.init_output_bias:
            nets.u.biases[-1] += np.mean(target) - np.mean(w)
            w = forward(nets.u, features)[:, 0]
        z = forward(nets.z, features)[:, 0]
        ztilde = forward(nets.ztilde, features)[:, 0]

        residual = w + z * dB + ztilde * dW - target
        loss = float(np.mean(residual ** 2))
        if not np.isfinite(loss):
            raise DivergenceError(i, iteration)

        grad = 2.0 * residual
        for name, direction in (("u", 1.0), ("z", dB), ("ztilde", dW)):
            net = getattr(nets, name)
            grads = backward(net, features, (grad * direction)[:, None])
            adam_step(net, grads, nets.optimizers[name])

        window.append(loss)
        if iteration % config.check_interval == 0:
            current = float(np.mean(window))
            window = []
            history.append((iteration, current))
            logger.debug("step %d iteration %d loss %.6g", i, iteration, current)
            if previous is not None and iteration >= config.min_iterations:
                if current == 0.0 or (previous > 0 and (previous - current) / previous < config.tolerance):
                    break
            previous = current
    else:
        logger.debug("step %d hit max_iterations=%d", i, config.max_iterations)

    if window and not history:
        history.append((iteration, float(np.mean(window))))
    history_df = pd.DataFrame(history, columns=["iteration", "loss"])
    return StepTraining(nets=nets, history=history_df, final_loss=float(history_df["loss"].iloc[-1]),
                        iterations=iteration)


def _terminal_evaluator(payoff: PayoffSpec, r: float, grid: GridSpec):
    def evaluate(bundle: PathBundle) -> np.ndarray:
        return payoff_terminal(bundle.X[:, grid.N], payoff, r, grid.T)
    return evaluate


def step_values(nets: StepNetworks, bundle: PathBundle, driver: DriverSpec, grid: GridSpec, x0: float) -> np.ndarray:
    """U_i on every path of `bundle`, where i is the step of `nets`."""
    i = nets.step
    w = forward(nets.u, network_inputs(bundle, i, x0))[:, 0]
    return solve_step_value(driver, grid.t[i], bundle.X[:, i], w, grid.dt)


def _network_evaluator(nets: StepNetworks, driver: DriverSpec, grid: GridSpec, x0: float,
                       reflect: bool, payoff: PayoffSpec):
    i = nets.step

    def evaluate(bundle: PathBundle) -> np.ndarray:
        values = step_values(nets, bundle, driver, grid, x0)
        if reflect:
            values = np.maximum(values, payoff_running(grid.t[i], bundle.X[:, i], payoff, driver.r))
        return values
    return evaluate


@dataclass
class _RunOutcome:
    price: float
    losses: np.ndarray
    iterations: np.ndarray
    history: pd.DataFrame
    networks: dict[int, StepNetworks] | None


def _solve_run(params: ModelParams, grid: GridSpec, config: SchemeConfig, driver: DriverSpec,
               payoff: PayoffSpec, reflect: bool, run: int) -> _RunOutcome:
    started = time.perf_counter()
    sampler = PathSampler(params, grid, config.batch_size, (config.seed, run), config.fixed_sample)
    evaluator = _terminal_evaluator(payoff, params.r, grid)
    losses = np.zeros(grid.N)
    iterations = np.zeros(grid.N, dtype=int)
    histories = []
    networks = {}

    for i in range(grid.N - 1, -1, -1):
        nets = build_step_networks(i, (config.seed, run, 0, i), config.hidden_layers, config.learning_rate)
        try:
            trained = train_step(i, evaluator, sampler, nets, config, params.x0)
        except DivergenceError as exc:
            raise DivergenceError(exc.step, exc.iteration, run) from exc
        losses[i] = trained.final_loss
        iterations[i] = trained.iterations
        histories.append(trained.history.assign(run=run, step=i))
        networks[i] = nets
        evaluator = _network_evaluator(nets, driver, grid, params.x0, reflect, payoff)

    w0 = forward(networks[0].u, np.zeros((1, 1)))[0, 0]
    price = float(solve_step_value(driver, 0.0, params.x0, w0, grid.dt))
    if reflect:
        price = max(price, float(payoff_running(0.0, params.x0, payoff, params.r)))
    if not np.isfinite(price):
        raise DivergenceError(0, int(iterations[0]), run)

    logger.info("run %d K=%g price %.6g (%.1fs, mean final loss %.3g)",
                run, payoff.K, price, time.perf_counter() - started, losses.mean())
    return _RunOutcome(price, losses, iterations, pd.concat(histories, ignore_index=True),
                       networks if config.retain_networks else None)


def _solve(params: ModelParams, grid: GridSpec, config: SchemeConfig, driver: DriverSpec,
           payoff: PayoffSpec, reflect: bool, scheme: str) -> SolveResult:
    logger.info("Solving %s K=%g with %d runs, N=%d, J=%d", scheme, payoff.K, config.runs, grid.N, config.batch_size)

    def one(run):
        return _solve_run(params, grid, config, driver, payoff, reflect, run)

    if config.workers > 1 and config.runs > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(one, range(config.runs)))
    else:
        outcomes = [one(run) for run in range(config.runs)]

    history = pd.concat([o.history for o in outcomes], ignore_index=True)
    history = history[["run", "step", "iteration", "loss"]]
    result = SolveResult(
        scheme=scheme,
        K=payoff.K,
        prices=np.array([o.price for o in outcomes]),
        step_losses=np.vstack([o.losses for o in outcomes]),
        step_iterations=np.vstack([o.iterations for o in outcomes]),
        loss_history=history,
        networks=[o.networks for o in outcomes] if config.retain_networks else None,
    )
    logger.info("%s K=%g mean %.6g RSD %.4g", scheme, payoff.K, result.mean, result.rsd)
    return result


def solve_european(params: ModelParams, grid: GridSpec, config: SchemeConfig, spec: DriverSpec) -> SolveResult:
    if spec.kind != "european-linear":
        raise ValueError("solve_european needs the european-linear driver")
    return _solve(params, grid, config, spec, spec.payoff, reflect=False, scheme="european")


def solve_american_penalty(params: ModelParams, grid: GridSpec, config: SchemeConfig, spec: DriverSpec) -> SolveResult:
    if spec.kind != "american-penalty":
        raise ValueError("solve_american_penalty needs the american-penalty driver")
    return _solve(params, grid, config, spec, spec.payoff, reflect=False,
                  scheme=f"american-penalty-N{spec.penalty:g}")


def solve_american_reflect(params: ModelParams, grid: GridSpec, config: SchemeConfig, K: float) -> SolveResult:
    driver = DriverSpec("european-linear", params.r, K)
    return _solve(params, grid, config, driver, PayoffSpec("american-put", K), reflect=True,
                  scheme="american-reflect")


@dataclass
class ConvergenceStudy:
    table: pd.DataFrame
    step_losses: pd.DataFrame = field(repr=False)


def convergence_study(params: ModelParams, config: SchemeConfig, K: float, n_list: Sequence[int],
                      T: float = 1.0, mc_samples: int | None = None) -> ConvergenceStudy:
    """
    Prices the European put for every N in `n_list` and reports the price
    trajectory with the per-step final losses. With `mc_samples`, each row
    also carries a Monte Carlo reference on the same grid.
    """
    n_list = list(n_list)
    if n_list != sorted(n_list):
        raise ValueError("n_list must be ascending")

    rows, loss_frames = [], []
    for n in n_list:
        grid = GridSpec(T, n)
        result = solve_european(params, grid, config, DriverSpec("european-linear", params.r, K))
        row = {
            "N": n, "mean": result.mean, "rsd": result.rsd, "runs": len(result.prices),
            "mean_step_loss": float(result.step_losses.mean()),
            "max_step_loss": float(result.step_losses.max()),
        }
        if mc_samples:
            ref, se = mc_european_put(params, grid, K, mc_samples, seed=(config.seed, n))
            row.update(mc_reference=ref, mc_standard_error=se, abs_error=abs(result.mean - ref))
        rows.append(row)

        runs_idx, steps_idx = np.indices(result.step_losses.shape)
        loss_frames.append(pd.DataFrame({
            "N": n, "run": runs_idx.ravel(), "step": steps_idx.ravel(), "loss": result.step_losses.ravel(),
        }))
    return ConvergenceStudy(table=pd.DataFrame(rows), step_losses=pd.concat(loss_frames, ignore_index=True))
