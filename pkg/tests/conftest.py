import numpy as np
import pytest

from masi.cluster import ClusterConfig
from masi.dataset import make_dataset
from masi.synth import ScenarioSpec, generate_scenario
from masi.trajectories import Track, TrajectorySet


def make_set(tracks: dict, starts: dict | None = None, rate=15.0, objects=None) -> TrajectorySet:
    """Trajectory set from ``{id: (T, 2) positions}``; tracks start at frame 0 unless given."""
    starts = starts or {}
    agents = {}
    for aid, pos in tracks.items():
        pos = np.asarray(pos, dtype=float)
        s = starts.get(aid, 0)
        agents[aid] = Track(np.arange(s, s + len(pos)), pos)
    return TrajectorySet(rate, agents, objects or {})


def line(start, velocity, n, rate=15.0):
    """``n`` positions of constant-velocity motion."""
    t = np.arange(n)[:, None] / rate
    return np.asarray(start, dtype=float) + t * np.asarray(velocity, dtype=float)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scenario(ScenarioSpec(n_agents=6, duration=400, seed=3, arena=(0, 0, 5, 5), noise_std=0.01))


@pytest.fixture(scope="session")
def small_config():
    return ClusterConfig(radius=1.5, t_history=4, t_future=5, stride=6)


@pytest.fixture(scope="session")
def qtc4_set(small_scene, small_config):
    return make_dataset(small_scene, "qtc4", small_config)


@pytest.fixture(scope="session")
def qtc6_set(small_scene, small_config):
    return make_dataset(small_scene, "qtc6", small_config)


@pytest.fixture(scope="session")
def ts_set(small_scene, small_config):
    return make_dataset(small_scene, "ts", small_config)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
