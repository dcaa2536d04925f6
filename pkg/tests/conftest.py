import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from districtsim.engine import SimulationConfig, run
from districtsim.io import load_config, load_scene, load_weather
from districtsim.scenes import data_path

settings.register_profile("ci", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def box_quads(a=1.0, b=1.0, c=1.0):
    """Outward-facing faces of an axis-aligned box, each as a CCW quad."""
    return [
        [(0, 0, 0), (0, b, 0), (a, b, 0), (a, 0, 0)],  # bottom, -z
        [(0, 0, c), (a, 0, c), (a, b, c), (0, b, c)],  # top, +z
        [(0, 0, 0), (a, 0, 0), (a, 0, c), (0, 0, c)],  # y = 0, -y
        [(a, b, 0), (0, b, 0), (0, b, c), (a, b, c)],  # y = b, +y
        [(0, b, 0), (0, 0, 0), (0, 0, c), (0, b, c)],  # x = 0, -x
        [(a, 0, 0), (a, b, 0), (a, b, c), (a, 0, c)],  # x = a, +x
    ]


def quad_tris(q):
    q = np.asarray(q, dtype=float)
    return [q[[0, 1, 2]], q[[0, 2, 3]]]


@pytest.fixture(scope="session")
def demo_scene():
    return load_scene(data_path("demonstrator.yaml"))


@pytest.fixture(scope="session")
def demo_config():
    return load_config(data_path("demonstrator_config.yaml"))


@pytest.fixture(scope="session")
def demo_weather(demo_config):
    return load_weather(data_path("demonstrator_weather.csv"), demo_config.dt, demo_config.horizon)


@pytest.fixture(scope="session")
def demo_run(demo_scene, demo_weather, demo_config):
    return run(demo_scene, demo_weather, demo_config)


@pytest.fixture(scope="session")
def demo_short_config():
    return SimulationConfig(dt=900.0, horizon=6 * 3600.0)
