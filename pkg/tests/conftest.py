import numpy as np
import pytest

from distsgd.losses import LossModel
from distsgd.sim import ExperimentConfig
from distsgd.strategies import AlgorithmSpec

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    return ExperimentConfig(
        n_nodes=4, dim=3, rounds=50, trials=3, topology="circle",
        algorithm=AlgorithmSpec("tvw"), loss=LossModel("squared", 0.01), master_seed=7,
    )
