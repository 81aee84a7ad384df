import math

import numpy as np
import pytest

from rotrefine.projection import TrajectorySpec, make_scene, simulate_trajectory


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def clean_run():
    """Ten points, 60 frames, no pixel noise."""
    spec = TrajectorySpec(frame_count=60, commanded_step=math.radians(1.0), pixel_sigma=0.0, seed=3)
    return simulate_trajectory(spec, make_scene(10, 800.0, seed=3))


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the terminal summary, then assert."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
