from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from binpick.kinematics import default_chain, planar_chain  # noqa: E402


@pytest.fixture(scope="session")
def chain():
    return default_chain()


@pytest.fixture(scope="session")
def planar():
    return planar_chain((1.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
