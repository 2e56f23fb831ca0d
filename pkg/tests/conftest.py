import math

import numpy as np
import pytest

from monitored_lmg.monitored_quantum import ModelSpec
from monitored_lmg.spin_algebra import coherent_state

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def model8():
    return ModelSpec(8, 0.5, 0.1)


@pytest.fixture
def x_state(model8):
    return coherent_state(model8.ops, math.pi / 2, 0.0)


def density(psi):
    return np.outer(psi, psi.conj())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
