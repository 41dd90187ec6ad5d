"""Shared scenes and small simulated runs.

Module tests use a coarse scanner so a whole run takes seconds; the
acceptance suite builds its own full-resolution scenarios.
"""

import numpy as np
import pytest

from lidarspace.config import PipelineConfig
from lidarspace.lidar_sim import ScannerSpec, ellipse_trajectory, parse_scene, simulate
from lidarspace.pipeline import Pipeline

ROOM = "box center=0.13,-0.08,1.61 size=12,9,3 hollow=1\n"
COARSE = ScannerSpec(ring_count=16, horizontal_resolution=1.0)


@pytest.fixture(scope="session")
def room_scene():
    return parse_scene(ROOM)


@pytest.fixture(scope="session")
def coarse_scanner():
    return COARSE


@pytest.fixture(scope="session")
def room_sims(room_scene):
    traj = ellipse_trajectory((0.13, -0.08), (3.0, 2.0), 1.4, period=10.0, duration=1.9)
    return simulate(room_scene, COARSE, traj, 20, seed=3)


@pytest.fixture(scope="session")
def room_run(room_sims):
    p = Pipeline(PipelineConfig(), keep_frame_data=True)
    results = [p.process(s.frame) for s in room_sims]
    return p, results


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
