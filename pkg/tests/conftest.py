import numpy as np
import pytest

from sandwich_unet.data import PhantomSpec, generate_dataset
from sandwich_unet.model import UNetConfig, build


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    return UNetConfig(base_width=2, arelu_count=5)


@pytest.fixture
def tiny_model(tiny_config):
    return build(tiny_config, seed=3)


@pytest.fixture(scope="session")
def phantoms64():
    return generate_dataset(6, PhantomSpec(size=64), seed=11)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split()[1].rstrip("ab:")), s)):
            terminalreporter.write_line(line)
