import numpy as np
import pytest

from morphwing.params import AeroParams, GaitParams, MorphologyParams
from morphwing.dynamics import BodyState, RobotState
from morphwing.rotation import quat_from_euler


@pytest.fixture(scope="session")
def morph():
    return MorphologyParams().validate()


@pytest.fixture(scope="session")
def aero_params():
    return AeroParams().validate()


@pytest.fixture(scope="session")
def gait_params():
    return GaitParams().validate()


def random_state(rng, speed=3.0):
    """A generic finite robot state with bounded attitude and joint values."""
    roll, pitch, yaw = rng.uniform(-0.6, 0.6, 3)
    body = BodyState(
        position=rng.uniform(-2, 2, 3),
        orientation=quat_from_euler(roll, pitch, yaw),
        linear_velocity=rng.uniform(-speed, speed, 3),
        angular_velocity=rng.uniform(-3, 3, 3),
    )
    return RobotState(
        body=body,
        q_active=np.array([rng.uniform(-0.5, 0.5), rng.uniform(0.0, 0.8),
                           rng.uniform(-0.5, 0.5), rng.uniform(0.0, 0.8)]),
        qd_active=rng.uniform(-8, 8, 4),
        q_passive=rng.uniform(-0.2, 0.6, 2),
        qd_passive=rng.uniform(-8, 8, 2),
    )
