# components/utils.py

import hashlib
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .constants import FLOAT_FORMAT

logger = logging.getLogger(__name__)


def sample_std(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1)) if values.size > 1 else 0.0


def relative_std(values) -> float:
    """RSD = standard deviation / average value across independent runs."""
    values = np.asarray(values, dtype=float)
    mean = values.mean()
    if mean == 0:
        return float("nan")
    return sample_std(values) / abs(mean)


def standard_error(values) -> float:
    values = np.asarray(values, dtype=float)
    return sample_std(values) / np.sqrt(values.size)


def config_hash(config_dict: dict) -> str:
    """First 12 hex digits of the SHA-256 of the canonical JSON form."""
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def write_csv(df: pd.DataFrame, directory, file_name: str) -> Path:
    """Writes a report table with a header row and 6 significant digits."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / file_name
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("Wrote %s (%d rows)", path, len(df))
    return path


def summarize_runs(runs_df: pd.DataFrame) -> pd.DataFrame:
    """Collapses per-run prices into (scheme, K, mean, rsd, runs)."""
    if runs_df.empty:
        return pd.DataFrame(columns=["scheme", "K", "mean", "rsd", "runs"])
    grouped = runs_df.groupby(["scheme", "K"], sort=False)["price"]
    summary = grouped.agg(mean="mean", rsd=relative_std, runs="count").reset_index()
    return summary
