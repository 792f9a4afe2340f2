import numpy as np
import pytest

from hdmann.controller.network import Architecture
from hdmann.dataset import generate_glyphs

# small network used wherever a full-size controller would only slow tests down
TINY_LAYERS = (("conv", 4, 5), ("pool",), ("conv", 4, 3), ("pool",))


@pytest.fixture(scope="session")
def small_ds():
    return generate_glyphs(60, 10, seed=3)


@pytest.fixture
def tiny_arch():
    return Architecture(TINY_LAYERS, d=32, input_size=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
