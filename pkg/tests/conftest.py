import sys

import numpy as np
import pytest
from hypothesis import settings

from blockade_sim import NoiseChannel, SystemParams

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def device():
    """Operating point of the reference device (GHz)."""
    return SystemParams(detuning_eps=140.0, tunnel_t=3.0, delta_ez=0.02)


@pytest.fixture
def dephasing():
    return NoiseChannel.dephasing(0.2)


@pytest.fixture
def relaxation():
    return NoiseChannel.relaxation(150.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(module, "RESULTS", [])
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
