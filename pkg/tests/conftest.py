import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rrr_contact.dynamics import DynamicsParams, RobotModel  # noqa: E402
from rrr_contact.kinematics import Geometry  # noqa: E402

SIGMA = np.ones(3)


def random_pose(rng, radius=0.12, phi_max=0.3):
    r = radius * np.sqrt(rng.uniform())
    a = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([r * np.cos(a), r * np.sin(a), rng.uniform(-phi_max, phi_max)])


@pytest.fixture
def geom():
    return Geometry.symmetric()


@pytest.fixture
def params(geom):
    return DynamicsParams.default(geom)


@pytest.fixture
def gravity_params(geom):
    return DynamicsParams.default(geom, gravity=(0.0, -9.81))


@pytest.fixture
def model(geom, params):
    return RobotModel(geom, params, SIGMA)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
