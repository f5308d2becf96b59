# components/exceptions.py

from .constants import (
    CONFIG_ERROR_MESSAGE, DIVERGENCE_MESSAGE,
    ILL_CONDITIONED_MESSAGE, ARBITRAGE_MESSAGE
)


class RoughPricerError(Exception):
    """Base class for every error raised by the pricer."""


class ConfigError(RoughPricerError):
    """Invalid experiment configuration; carries one message per bad field."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__(CONFIG_ERROR_MESSAGE + "\n" + "\n".join(f"  - {p}" for p in self.problems))


class IllConditionedCovarianceError(RoughPricerError):
    def __init__(self, max_jitter: float):
        self.max_jitter = max_jitter
        super().__init__(f"{ILL_CONDITIONED_MESSAGE} (max jitter {max_jitter:g})")


class DivergenceError(RoughPricerError):
    """Non-finite training loss at a given backward step."""

    def __init__(self, step: int, iteration: int, run: int | None = None):
        self.step = step
        self.iteration = iteration
        self.run = run
        where = f"step {step}, iteration {iteration}"
        if run is not None:
            where = f"run {run}, " + where
        super().__init__(f"{DIVERGENCE_MESSAGE} ({where})")


class ArbitrageError(RoughPricerError):
    def __init__(self, probability: float):
        self.probability = probability
        super().__init__(f"{ARBITRAGE_MESSAGE} (p={probability:.6g})")
