import numpy as np
import pytest

from morphwing.errors import GimbalLockError
from morphwing.rotation import (euler_from_quat, quat_from_axis_angle,
                                quat_from_euler, quat_multiply, quat_normalize,
                                quat_to_matrix)


def test_identity_quaternion_gives_zero_angles():
    assert euler_from_quat(np.array([1.0, 0, 0, 0])) == (0.0, 0.0, 0.0)


def test_pure_roll_90deg():
    q = quat_from_axis_angle([1, 0, 0], np.pi / 2)
    roll, pitch, yaw = euler_from_quat(q)
    assert roll == pytest.approx(np.pi / 2, abs=1e-12)
    assert pitch == pytest.approx(0.0, abs=1e-12)
    assert yaw == pytest.approx(0.0, abs=1e-12)


def test_random_round_trip_matches_rotation_matrix():
    rng = np.random.default_rng(7)
    for _ in range(200):
        q = quat_normalize(rng.normal(size=4))
        roll, pitch, yaw = euler_from_quat(q)
        q2 = quat_from_euler(roll, pitch, yaw)
        assert np.max(np.abs(quat_to_matrix(q2) - quat_to_matrix(q))) < 1e-9


def test_gimbal_guard_raises_instead_of_nan():
    q = quat_from_axis_angle([0, 1, 0], np.pi / 2)
    with pytest.raises(GimbalLockError):
        euler_from_quat(q)


def test_quat_multiply_composes_rotations():
    rng = np.random.default_rng(3)
    a = quat_normalize(rng.normal(size=4))
    b = quat_normalize(rng.normal(size=4))
    Rab = quat_to_matrix(quat_multiply(a, b))
    assert np.allclose(Rab, quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)
