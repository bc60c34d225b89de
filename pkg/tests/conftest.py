import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from quasiergodic.systems import build_system  # noqa: E402

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Lorenz-scale or long-horizon experiments")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def oscillator():
    return build_system("harmonic_oscillator")


@pytest.fixture
def pendulum():
    return build_system("pendulum")


@pytest.fixture
def torus():
    return build_system("torus_flow", alpha=GOLDEN)


@pytest.fixture
def circles():
    return build_system("circle_family")


@pytest.fixture
def contraction():
    return build_system("linear_contraction")


@pytest.fixture
def coupled():
    return build_system("coupled_oscillators")


@pytest.fixture
def lorenz():
    return build_system("lorenz")
