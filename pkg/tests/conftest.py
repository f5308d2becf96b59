# tests/conftest.py

import pytest

from components.bsde_solver import SchemeConfig
from components.config_loader import load_experiment_config
from components.paths import GridSpec, ModelParams


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="also run the long reproductions of the published price tables")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def paper_params():
    return ModelParams()


@pytest.fixture
def small_grid():
    return GridSpec(1.0, 4)


@pytest.fixture
def quick_scheme():
    """Cheap training settings for smoke tests of the full backward pass."""
    return SchemeConfig(batch_size=512, check_interval=10, max_iterations=60, min_iterations=20,
                        tolerance=1e-3, runs=1, learning_rate=1e-2, seed=7)


@pytest.fixture
def tiny_config(tmp_path):
    """An ExperimentConfig small enough for end-to-end runs, writing into tmp_path."""
    return load_experiment_config(overrides={
        "N": 4, "runs": 1, "batch_size": 256, "check_interval": 10, "max_iterations": 40,
        "min_iterations": 20, "learning_rate": 1e-2, "fixed_sample": True, "seed": 11,
        "mc_samples": 2000, "crr_steps": 200, "path_study_trajectories": 200,
        "output_dir": str(tmp_path / "out"),
    })
