# components/experiments.py

"""
Experiment runners behind the CLI. Every runner takes a validated
ExperimentConfig and returns an ExperimentReport of named tables; writing
them to disk is serialized in `write_reports`.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .bsde_solver import (
    DriverSpec, SchemeConfig, SolveResult, convergence_study, solve_american_penalty,
    solve_american_reflect, solve_european, solve_step_value, step_target, step_values
)
from .config_loader import ExperimentConfig
from .constants import (
    SUMMARY_FILE, RUNS_FILE, LOSS_FILE, CONVERGENCE_FILE, PATH_STUDY_FILE,
    PATH_STUDY_SUMMARY_FILE, VALIDATION_FILE, PDF_FILE, PATH_STUDY_SHOWN,
    PATH_STUDY_GRID_MESSAGE, CHECKPOINT_FILE, ORDERING_FILE
)
from .forward_model import simulate
from .nn import StepNetworks, gradient_check, init_network, load_checkpoint, save_checkpoint
from .paths import (
    GridSpec, ModelParams, build_covariance, covariance_factor, rl_covariance_closed_form,
    sample_paths
)
from .pdf_report import generate_pdf_report
from .reference_pricers import black_scholes_put, crr_american_put, mc_european_put
from .utils import sample_std, standard_error, summarize_runs, write_csv

logger = logging.getLogger(__name__)

PRICING_SCHEMES = ("european", "american-penalty", "american-reflect")
REFERENCE_SCHEMES = ("mc-reference", "crr")


@dataclass
class ExperimentReport:
    name: str
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    networks: list[StepNetworks] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return not self.failures


def _stamp(df: pd.DataFrame, config: ExperimentConfig) -> pd.DataFrame:
    return df.assign(seed=config.seed, config_hash=config.hash)


def _solve_scheme(scheme: str, params: ModelParams, grid: GridSpec, scheme_config: SchemeConfig,
                  K: float, penalty: float | None = None) -> SolveResult:
    if scheme == "european":
        return solve_european(params, grid, scheme_config, DriverSpec("european-linear", params.r, K))
    if scheme == "american-penalty":
        return solve_american_penalty(params, grid, scheme_config,
                                      DriverSpec("american-penalty", params.r, K, penalty))
    if scheme == "american-reflect":
        return solve_american_reflect(params, grid, scheme_config, K)
    raise ValueError(f"{scheme!r} is not a pricing scheme")


def check_strike_ordering(summary: pd.DataFrame) -> list[str]:
    """Put prices must be finite and strictly increasing in K for every scheme."""
    failures = []
    for scheme, rows in summary.groupby("scheme", sort=False):
        rows = rows.sort_values("K")
        if not np.all(np.isfinite(rows["mean"])):
            failures.append(f"{scheme}: non-finite price")
        elif len(rows) > 1 and not np.all(np.diff(rows["mean"].to_numpy()) > 0):
            failures.append(f"{scheme}: prices are not increasing in K")
    return failures


ORDERING_COLUMNS = ["check", "K", "value", "threshold", "passed"]


def _noise_slack(first: pd.Series, second: pd.Series) -> float:
    """Two combined standard errors of the run means; zero for single runs."""
    return 2.0 * math.hypot(standard_error(first), standard_error(second))


def check_penalty_ordering(runs_df: pd.DataFrame, penalty_of: dict[str, float]) -> pd.DataFrame:
    """
    Per strike, the penalty price may not fall as the penalty grows by more
    than two combined standard errors. `penalty_of` maps scheme names in
    `runs_df` to their penalty.
    """
    schemes = sorted(penalty_of, key=penalty_of.get)
    rows = []
    for K, at_strike in runs_df.groupby("K", sort=False):
        for low, high in zip(schemes, schemes[1:]):
            low_prices = at_strike.loc[at_strike["scheme"] == low, "price"]
            high_prices = at_strike.loc[at_strike["scheme"] == high, "price"]
            gap = high_prices.mean() - low_prices.mean()
            slack = _noise_slack(low_prices, high_prices)
            rows.append({"check": f"{high} >= {low}", "K": K, "value": gap,
                         "threshold": -slack, "passed": bool(gap >= -slack)})
    return pd.DataFrame(rows, columns=ORDERING_COLUMNS)


def check_american_dominance(runs_df: pd.DataFrame, european_df: pd.DataFrame) -> pd.DataFrame:
    """American prices per (scheme, K) against the European put, within two combined standard errors."""
    rows = []
    for (scheme, K), prices in runs_df.groupby(["scheme", "K"], sort=False)["price"]:
        european = european_df.loc[european_df["K"] == K, "price"]
        gap = prices.mean() - european.mean()
        slack = _noise_slack(prices, european)
        rows.append({"check": f"{scheme} >= european", "K": K, "value": gap,
                     "threshold": -slack, "passed": bool(gap >= -slack)})
    return pd.DataFrame(rows, columns=ORDERING_COLUMNS)


def run_price(config: ExperimentConfig) -> ExperimentReport:
    """
    Deep-scheme prices for every strike (and every penalty for the penalty
    scheme). With `check_invariants`, American schemes are also priced
    against a European solve with the same seeds, and the ordering checks
    land in their own table.
    """
    if config.scheme not in PRICING_SCHEMES:
        raise ValueError(f"price needs one of {PRICING_SCHEMES}, got {config.scheme!r}")
    params, grid, scheme_config = config.model_params(), config.grid(), config.scheme_config()
    penalties = config.penalties if config.scheme == "american-penalty" else [None]

    runs_frames, loss_frames = [], []
    penalty_of = {}
    for penalty in penalties:
        for K in config.strikes:
            result = _solve_scheme(config.scheme, params, grid, scheme_config, K, penalty)
            runs_frames.append(result.runs_frame())
            loss_frames.append(result.loss_history.assign(K=K, scheme=result.scheme))
            if penalty is not None:
                penalty_of[result.scheme] = penalty

    runs_df = pd.concat(runs_frames, ignore_index=True)
    summary = summarize_runs(runs_df)
    report = ExperimentReport(name="price")
    report.tables[RUNS_FILE] = _stamp(runs_df, config)
    report.tables[SUMMARY_FILE] = _stamp(summary, config)
    if config.save_losses:
        losses = pd.concat(loss_frames, ignore_index=True)
        report.tables[LOSS_FILE] = _stamp(losses[["scheme", "K", "run", "step", "iteration", "loss"]], config)
    if not config.check_invariants:
        return report

    report.failures.extend(check_strike_ordering(summary))
    checks = []
    if len(penalty_of) > 1:
        checks.append(check_penalty_ordering(runs_df, penalty_of))
    if config.scheme != "european":
        logger.info("Pricing the European put for the dominance check")
        european = pd.concat([_solve_scheme("european", params, grid, scheme_config, K).runs_frame()
                              for K in config.strikes], ignore_index=True)
        checks.append(check_american_dominance(runs_df, european))
    if checks:
        ordering = pd.concat(checks, ignore_index=True)
        report.tables[ORDERING_FILE] = _stamp(ordering, config)
        report.failures.extend(f"{row.check} at K={row.K:g}: {row.value:.6g} below {row.threshold:.6g}"
                               for row in ordering.itertuples() if not row.passed)
    return report


def run_reference(config: ExperimentConfig) -> ExperimentReport:
    """Monte Carlo European references (R runs of mc_samples paths) or CRR American puts."""
    params, grid = config.model_params(), config.grid()
    report = ExperimentReport(name="reference")

    if config.scheme == "crr":
        if params.eta != 0:
            logger.warning("CRR uses the constant volatility sqrt(xi); eta=%g is ignored", params.eta)
        sigma = math.sqrt(params.xi)
        rows = [{"scheme": "crr", "K": K,
                 "mean": crr_american_put(params.s0, K, params.r, sigma, grid.T, config.crr_steps),
                 "rsd": 0.0, "runs": 1} for K in config.strikes]
        summary = pd.DataFrame(rows)
        report.tables[SUMMARY_FILE] = _stamp(summary, config)
    elif config.scheme == "mc-reference":
        records = []
        for K in config.strikes:
            for run in range(config.runs):
                price, se = mc_european_put(params, grid, K, config.mc_samples, (config.seed, run, 3),
                                            workers=config.workers)
                records.append({"run": run, "K": K, "scheme": "mc-reference", "price": price,
                                "standard_error": se})
            logger.info("mc-reference K=%g done", K)
        runs_df = pd.DataFrame(records)
        summary = summarize_runs(runs_df)
        report.tables[RUNS_FILE] = _stamp(runs_df, config)
        report.tables[SUMMARY_FILE] = _stamp(summary, config)
    else:
        raise ValueError(f"reference needs one of {REFERENCE_SCHEMES}, got {config.scheme!r}")

    if config.check_invariants:
        report.failures.extend(check_strike_ordering(summary))
    return report


def run_convergence(config: ExperimentConfig) -> ExperimentReport:
    params, scheme_config = config.model_params(), config.scheme_config()
    tables, losses = [], []
    for K in config.strikes:
        study = convergence_study(params, scheme_config, K, config.convergence_steps, config.T,
                                  mc_samples=config.mc_samples)
        tables.append(study.table.assign(K=K))
        losses.append(study.step_losses.assign(K=K))
    report = ExperimentReport(name="convergence")
    report.tables[CONVERGENCE_FILE] = _stamp(pd.concat(tables, ignore_index=True), config)
    if config.save_losses:
        report.tables[LOSS_FILE] = _stamp(pd.concat(losses, ignore_index=True), config)
    failures = [f"N={row.N} K={row.K}: non-finite price"
                for row in report.tables[CONVERGENCE_FILE].itertuples() if not np.isfinite(row.mean)]
    report.failures.extend(failures)
    return report


def evaluate_path_dependence(params: ModelParams, grid: GridSpec, nets: StepNetworks,
                             n_trajectories: int, seed, x: float | None = None,
                             driver: DriverSpec | None = None) -> pd.DataFrame:
    """
    Evaluates u(t_i, x) = U_i on simulated (W, What) histories, where i is
    the step of `nets`. The pinned variant replaces What_{t_i} on every
    trajectory by the value that makes V_{t_i} equal to the sample mean of
    V_{t_i}; the earlier history is left untouched. `driver` defaults to the
    linear one the path study trains with.
    """
    i = nets.step
    x = params.x0 if x is None else x
    # the strike does not enter the linear driver
    driver = driver or DriverSpec("european-linear", params.r, params.s0)
    bundle = sample_paths(covariance_factor(grid, params.H), params, grid, n_trajectories, seed)
    bundle.X[:, i] = x
    u_free = step_values(nets, bundle, driver, grid, params.x0)

    v_end = bundle.V[:, i]
    v_pinned = float(v_end.mean())
    if params.eta > 0 and params.xi > 0:
        t_i = grid.t[i]
        bundle.What[:, i] = (math.log(v_pinned / params.xi) + 0.5 * params.eta ** 2 * t_i ** (2 * params.H)) / params.eta
        u_pinned = step_values(nets, bundle, driver, grid, params.x0)
    else:
        u_pinned = u_free.copy()

    return pd.DataFrame({
        "trajectory": np.arange(n_trajectories),
        "V_end": v_end,
        "V_pinned": v_pinned,
        "u_free": u_free,
        "u_pinned": u_pinned,
    })


def run_path_study(config: ExperimentConfig, nets: StepNetworks | None = None) -> ExperimentReport:
    """
    Studies how u(0.5, ln s0) depends on the variance history. The step
    network comes from `nets`, else from `config.checkpoint`, else from one
    freshly trained European run at `path_study_strike` (kept in the report
    so it can be saved as a checkpoint).
    """
    params, grid = config.model_params(), config.grid()
    try:
        i = grid.index_of(config.path_study_time)
    except ValueError:
        raise ValueError(PATH_STUDY_GRID_MESSAGE)

    trained = []
    if nets is None and config.checkpoint:
        loaded = load_checkpoint(config.checkpoint)
        if i not in loaded:
            raise ValueError(f"checkpoint {config.checkpoint} has no networks for step {i}")
        nets = loaded[i]
    elif nets is None:
        scheme_config = config.scheme_config(runs=1, retain_networks=True)
        result = solve_european(params, grid, scheme_config,
                                DriverSpec("european-linear", params.r, config.path_study_strike))
        trained = [result.networks[0][k] for k in sorted(result.networks[0])]
        nets = result.networks[0][i]

    table = evaluate_path_dependence(params, grid, nets, config.path_study_trajectories,
                                     (config.seed, 0, 4))
    shown = np.random.default_rng(config.seed).choice(
        len(table), size=min(PATH_STUDY_SHOWN, len(table)), replace=False)
    table["shown"] = table["trajectory"].isin(shown)

    summary = pd.DataFrame([
        {"variant": "free", "mean": table["u_free"].mean(), "std": sample_std(table["u_free"]),
         "V_end_mean": table["V_end"].mean()},
        {"variant": "pinned", "mean": table["u_pinned"].mean(), "std": sample_std(table["u_pinned"]),
         "V_end_mean": table["V_pinned"].iloc[0]},
    ])
    logger.info("path study: free mean %.6g std %.4g, pinned mean %.6g std %.4g",
                summary["mean"][0], summary["std"][0], summary["mean"][1], summary["std"][1])

    report = ExperimentReport(name="path-study", networks=trained)
    report.tables[PATH_STUDY_FILE] = _stamp(table, config)
    report.tables[PATH_STUDY_SUMMARY_FILE] = _stamp(summary, config)
    if not np.all(np.isfinite(table[["u_free", "u_pinned"]].to_numpy())):
        report.failures.append("path study produced non-finite values")
    return report


def _check(name: str, value: float, threshold: float, passed: bool) -> dict:
    return {"check": name, "value": float(value), "threshold": threshold, "passed": bool(passed)}


def run_validation(config: ExperimentConfig, samples: int = 100000, gradient_trials: int = 20) -> ExperimentReport:
    """Invariant suite on the configured model and grid."""
    params, grid = config.model_params(), config.grid()
    started = time.perf_counter()
    checks = []

    cov = build_covariance(grid, params.H)
    n = grid.N
    t = grid.t[1:]
    a = params.H + 0.5
    var_err = np.max(np.abs(np.diag(cov)[n:] - t ** (2 * params.H)))
    checks.append(_check("fbm_variance_identity", var_err, 1e-8, var_err < 1e-8))
    cross_err = np.max(np.abs(np.diag(cov[:n, n:]) - math.sqrt(2 * params.H) / a * t ** a))
    checks.append(_check("cross_covariance_identity", cross_err, 1e-8, cross_err < 1e-8))

    iu, ju = np.triu_indices(n, k=1)
    closed = rl_covariance_closed_form(t[iu], t[ju], params.H)
    quad_err = np.max(np.abs(cov[n:, n:][iu, ju] - closed) / np.abs(closed)) if len(iu) else 0.0
    checks.append(_check("fbm_quadrature_vs_closed_form", quad_err, 1e-6, quad_err < 1e-6))

    factor = covariance_factor(grid, params.H)
    recon_err = np.max(np.abs(factor.L @ factor.L.T - cov))
    checks.append(_check("cholesky_reconstruction", recon_err, 1e-10, recon_err < 1e-10))

    rng = np.random.default_rng(config.seed)
    worst = 0.0
    for trial in range(gradient_trials):
        dims = [int(rng.integers(1, 5)), int(rng.integers(1, 6)), 1]
        net = init_network(dims, (config.seed, trial))
        for b in net.biases:
            b += rng.normal(size=b.shape)
        inputs = rng.normal(size=(7, dims[0]))
        worst = max(worst, gradient_check(net, inputs, rng.normal(size=(7, 1))))
    checks.append(_check("backprop_vs_finite_differences", worst, 1e-5, worst < 1e-5))

    K_mid = config.strikes[len(config.strikes) // 2]
    t_mid = grid.t[n // 2]
    x = params.x0 + rng.normal(scale=0.3, size=500)
    w = rng.uniform(0.0, 2.0 * K_mid, size=500)
    drivers = [DriverSpec("european-linear", params.r, K_mid)]
    drivers += [DriverSpec("american-penalty", params.r, K_mid, p) for p in config.penalties]
    inversion = 0.0
    for driver in drivers:
        y = solve_step_value(driver, t_mid, x, w, grid.dt)
        h = step_target(t_mid, grid.dt, x, y, 0.0, 0.0, 0.0, 0.0, driver)
        inversion = max(inversion, float(np.max(np.abs(h - w) / (1.0 + np.abs(w)))))
    checks.append(_check("step_value_inversion", inversion, 1e-9, inversion < 1e-9))

    bundle = simulate(factor, params, grid, samples, (config.seed, 0, 5), config.workers)
    if params.xi > 0:
        # worst z-score of mean(V_t) - xi over the grid
        se_v = bundle.V[:, 1:].std(axis=0, ddof=1) / math.sqrt(samples)
        se_v = np.where(se_v > 0, se_v, np.inf)
        wick = np.max(np.abs(bundle.V[:, 1:].mean(axis=0) - params.xi) / se_v)
        checks.append(_check("wick_unit_mean", wick, 4.0, wick < 4.0))
    terminal = np.exp(bundle.X[:, -1])
    se = terminal.std(ddof=1) / math.sqrt(samples)
    z_score = abs(terminal.mean() - params.s0) / se if se > 0 else 0.0
    checks.append(_check("discounted_price_martingale", z_score, 4.0, z_score < 4.0))

    sigma = math.sqrt(params.xi)
    if sigma > 0:
        dominance = min(crr_american_put(params.s0, K, params.r, sigma, grid.T, config.crr_steps)
                        - black_scholes_put(params.s0, K, params.r, sigma, grid.T) for K in config.strikes)
        checks.append(_check("american_dominates_european", dominance, 0.0, dominance >= -1e-12))
        K = config.strikes[len(config.strikes) // 2]
        gap = abs(crr_american_put(params.s0, K, params.r, sigma, grid.T, 2000)
                  - crr_american_put(params.s0, K, params.r, sigma, grid.T, 4000))
        checks.append(_check("crr_refinement", gap, 5e-3, gap < 5e-3))

    table = pd.DataFrame(checks)
    logger.info("validation: %d/%d checks passed in %.1fs",
                int(table["passed"].sum()), len(table), time.perf_counter() - started)
    report = ExperimentReport(name="validate")
    report.tables[VALIDATION_FILE] = _stamp(table, config)
    report.failures.extend(f"{row.check}: {row.value:.6g} vs {row.threshold:g}"
                           for row in table.itertuples() if not row.passed)
    return report


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Dispatches on `config.scheme`."""
    if config.scheme in PRICING_SCHEMES:
        return run_price(config)
    if config.scheme in REFERENCE_SCHEMES:
        return run_reference(config)
    if config.scheme == "convergence":
        return run_convergence(config)
    if config.scheme == "path-study":
        return run_path_study(config)
    raise ValueError(f"unknown scheme {config.scheme!r}")


def write_reports(report: ExperimentReport, config: ExperimentConfig) -> list[Path]:
    written = [write_csv(df, config.output_dir, name) for name, df in report.tables.items()]
    if report.networks:
        checkpoint_path = Path(config.output_dir) / CHECKPOINT_FILE
        save_checkpoint(report.networks, checkpoint_path)
        logger.info("Wrote %s", checkpoint_path)
        written.append(checkpoint_path)
    if config.pdf_report:
        summary = report.tables.get(SUMMARY_FILE)
        if summary is None:
            summary = next(iter(report.tables.values()))
        pdf_path = Path(config.output_dir) / PDF_FILE
        pdf_path.write_bytes(generate_pdf_report(summary, config, title=f"Rough volatility pricer: {report.name}"))
        logger.info("Wrote %s", pdf_path)
        written.append(pdf_path)
    return written
