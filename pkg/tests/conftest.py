import sys, os
sys.path.insert(0, os.path.dirname(__file__))

import numpy as np
import pytest

from hazeflow.imaging import make_rng
from hazeflow.mcbm import synth_scene


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def scene(rng):
    return synth_scene(32, 32, rng)


def random_image(rng, h=16, w=16, high=1.0):
    return rng.uniform(0.0, high, size=(h, w, 3)).astype(np.float32)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
