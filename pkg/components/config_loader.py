# components/config_loader.py

import dataclasses
import logging
import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # Python 3.10: API-identical backport
    import tomli as tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .constants import (
    DEFAULT_HURST, DEFAULT_ETA, DEFAULT_RHO, DEFAULT_XI, DEFAULT_RATE, DEFAULT_SPOT,
    DEFAULT_MATURITY, DEFAULT_STEPS, DEFAULT_STRIKES, DEFAULT_PENALTIES,
    DEFAULT_BATCH_SIZE, DEFAULT_CHECK_INTERVAL, DEFAULT_MAX_ITERATIONS,
    DEFAULT_MIN_ITERATIONS, DEFAULT_TOLERANCE, DEFAULT_RUNS, DEFAULT_LEARNING_RATE,
    DEFAULT_SEED, DEFAULT_CRR_STEPS, DEFAULT_MC_SAMPLES, PATH_STUDY_TIME,
    PATH_STUDY_TRAJECTORIES, OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR
)
from .bsde_solver import SchemeConfig
from .exceptions import ConfigError
from .paths import GridSpec, ModelParams
from .utils import config_hash

logger = logging.getLogger(__name__)

SCHEMES = (
    "european", "american-penalty", "american-reflect",
    "mc-reference", "crr", "convergence", "path-study",
)


@dataclass
class ExperimentConfig:
    """
    Flat experiment description. The TOML config file uses these field names
    as keys, e.g.

        scheme = "european"
        strikes = [90, 100, 110, 120]
        runs = 20
    """
    scheme: str = "european"
    # model
    H: float = DEFAULT_HURST
    eta: float = DEFAULT_ETA
    rho: float = DEFAULT_RHO
    xi: float = DEFAULT_XI
    r: float = DEFAULT_RATE
    s0: float = DEFAULT_SPOT
    # grid
    T: float = DEFAULT_MATURITY
    N: int = DEFAULT_STEPS
    # contracts
    strikes: list[float] = field(default_factory=lambda: list(DEFAULT_STRIKES))
    penalties: list[float] = field(default_factory=lambda: list(DEFAULT_PENALTIES))
    # training
    runs: int = DEFAULT_RUNS
    seed: int = DEFAULT_SEED
    batch_size: int = DEFAULT_BATCH_SIZE
    check_interval: int = DEFAULT_CHECK_INTERVAL
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    min_iterations: int = DEFAULT_MIN_ITERATIONS
    tolerance: float = DEFAULT_TOLERANCE
    learning_rate: float = DEFAULT_LEARNING_RATE
    hidden_layers: int = 1
    fixed_sample: bool = False
    init_output_bias: bool = True
    workers: int = 1
    # references and studies
    mc_samples: int = DEFAULT_MC_SAMPLES
    crr_steps: int = DEFAULT_CRR_STEPS
    convergence_steps: list[int] = field(default_factory=lambda: [5, 10, 20])
    path_study_time: float = PATH_STUDY_TIME
    path_study_trajectories: int = PATH_STUDY_TRAJECTORIES
    path_study_strike: float = 100.0
    checkpoint: str | None = None
    # output
    output_dir: str | None = None
    save_losses: bool = True
    check_invariants: bool = True
    pdf_report: bool = False

    def model_params(self) -> ModelParams:
        return ModelParams(H=self.H, eta=self.eta, rho=self.rho, xi=self.xi, r=self.r, s0=self.s0)

    def grid(self) -> GridSpec:
        return GridSpec(self.T, self.N)

    def scheme_config(self, **changes) -> SchemeConfig:
        base = SchemeConfig(
            batch_size=self.batch_size, check_interval=self.check_interval,
            max_iterations=self.max_iterations, min_iterations=self.min_iterations,
            tolerance=self.tolerance, runs=self.runs, learning_rate=self.learning_rate,
            seed=self.seed, fixed_sample=self.fixed_sample, hidden_layers=self.hidden_layers,
            workers=self.workers, init_output_bias=self.init_output_bias,
        )
        return dataclasses.replace(base, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hash(self) -> str:
        # the output location does not change any number in the reports
        content = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        return config_hash(content)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_override(assignment: str) -> tuple[str, object]:
    """Parses `key=value`; the value is read as a TOML scalar/array, else kept as text."""
    if "=" not in assignment:
        raise ConfigError([f"override {assignment!r} must look like key=value"])
    key, raw = (part.strip() for part in assignment.split("=", 1))
    try:
        value = tomllib.loads(f"value = {raw}")["value"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def _coerce(name: str, value, problems: list[str]):
    kind = _FIELD_TYPES[name]
    if kind is bool:
        if not isinstance(value, bool):
            problems.append(f"{name}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            problems.append(f"{name}: expected an integer, got {value!r}")
            return value
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{name}: expected a number, got {value!r}")
            return value
        return float(value)
    if name in ("strikes", "penalties", "convergence_steps"):
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            problems.append(f"{name}: expected a list of numbers, got {value!r}")
            return value
        return [int(v) for v in value] if name == "convergence_steps" else [float(v) for v in value]
    if name in ("scheme", "output_dir", "checkpoint"):
        if value is not None and not isinstance(value, str):
            problems.append(f"{name}: expected text, got {value!r}")
        return value
    return value


def _validate(config: ExperimentConfig, problems: list[str]):
    if config.scheme not in SCHEMES:
        problems.append(f"scheme: must be one of {', '.join(SCHEMES)}, got {config.scheme!r}")
    if not config.strikes:
        problems.append("strikes: must not be empty")
    elif any(k <= 0 for k in config.strikes):
        problems.append("strikes: every strike must be positive")
    if any(p < 0 for p in config.penalties):
        problems.append("penalties: every penalty must be nonnegative")
    if config.scheme == "american-penalty" and not config.penalties:
        problems.append("penalties: american-penalty needs at least one penalty")
    if config.N < 1:
        problems.append("N: must be at least 1")
    if config.runs < 1:
        problems.append("runs: must be at least 1")
    if config.mc_samples < 2:
        problems.append("mc_samples: must be at least 2")
    if config.crr_steps < 1:
        problems.append("crr_steps: must be at least 1")
    if config.path_study_trajectories < 1:
        problems.append("path_study_trajectories: must be at least 1")
    if config.checkpoint and not Path(config.checkpoint).is_file():
        problems.append(f"checkpoint: file {config.checkpoint} does not exist")
    if not config.convergence_steps or config.convergence_steps != sorted(config.convergence_steps):
        problems.append("convergence_steps: must be a nonempty ascending list")
    elif config.convergence_steps[0] < 1:
        problems.append("convergence_steps: every N must be at least 1")
    for builder, label in ((config.model_params, "model"), (config.grid, "grid"), (config.scheme_config, "training")):
        try:
            builder()
        except ValueError as exc:
            problems.append(f"{label}: {exc}")


def load_experiment_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """
    Reads a flat TOML config (optional), applies `overrides`, resolves the
    output directory (config/override, then $ROUGHBSDE_OUTPUT_DIR, then
    'results') and validates every field.
    """
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as handle:
                raw = tomllib.load(handle)
        except FileNotFoundError:
            raise ConfigError([f"config file {path} does not exist"])
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"config file {path} is not valid TOML: {exc}"])
    raw.update(overrides or {})

    problems = []
    unknown = sorted(set(raw) - set(_FIELD_TYPES))
    for key in unknown:
        problems.append(f"{key}: unknown field")
    values = {key: _coerce(key, value, problems) for key, value in raw.items() if key in _FIELD_TYPES}
    if problems:
        raise ConfigError(problems)

    config = ExperimentConfig(**values)
    if config.output_dir is None:
        config.output_dir = os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)

    _validate(config, problems)
    if problems:
        raise ConfigError(problems)
    logger.debug("Loaded config %s (hash %s)", path, config.hash)
    return config


def output_path(config: ExperimentConfig) -> Path:
    return Path(config.output_dir)
