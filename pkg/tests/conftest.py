import numpy as np
import pytest

from priorfuse.config import FusionConfig
from priorfuse.data import synthetic_pairs
from priorfuse.train import train_toy

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_data():
    return synthetic_pairs(16, 64, seed=42)


@pytest.fixture(scope="session")
def heldout_data():
    return synthetic_pairs(8, 64, seed=1042)


@pytest.fixture(scope="session")
def toy_run(toy_data):
    """The default-config 50-step run used by the training and behavior checks."""
    return train_toy(toy_data, FusionConfig(seed=42))


@pytest.fixture
def acceptance():
    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        status = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES.append(f"[{status}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else ""))
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
