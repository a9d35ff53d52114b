import numpy as np
import pytest

from lipmocap.kinematics import default_skeleton
from lipmocap.motion import generate_motion
from lipmocap.sensorsim import SceneConfig, synthesize_sequence


@pytest.fixture(scope="session")
def skel():
    return default_skeleton()


@pytest.fixture(scope="session")
def short_seq():
    """A 12-frame walk with the default scene."""
    return synthesize_sequence(generate_motion("walk", 12, seed=3), SceneConfig(seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def check(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
