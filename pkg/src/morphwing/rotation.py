"""Quaternion and Euler-angle utilities.

Conventions used throughout the package:

* world frame: north-east-down (NED), gravity along +z
* body frame: x forward, y right (starboard), z down
* quaternions: scalar-first ``(w, x, y, z)``, body-to-world rotation
* Euler angles: intrinsic ZYX (yaw about z, pitch about y, roll about x),
  so positive roll drops the right wing and positive pitch raises the nose.
"""

import numpy as np

from .errors import GimbalLockError

GIMBAL_GUARD = 1e-6  # rad from |pitch| = pi/2 at which extraction refuses


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.sqrt(np.dot(q, q))
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_multiply(a, b):
    """Hamilton product a*b, scalar-first components."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    """Rotation matrix (body -> world) of a unit quaternion."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis))


def quat_derivative(q, omega_body):
    """Kinematic quaternion rate for body-frame angular velocity."""
    ow = np.array([0.0, omega_body[0], omega_body[1], omega_body[2]])
    return 0.5 * quat_multiply(q, ow)


def quat_from_euler(roll, pitch, yaw):
    """Quaternion of the ZYX Euler triple (applied yaw, then pitch, then roll)."""
    qz = quat_from_axis_angle([0, 0, 1], yaw)
    qy = quat_from_axis_angle([0, 1, 0], pitch)
    qx = quat_from_axis_angle([1, 0, 0], roll)
    return quat_multiply(quat_multiply(qz, qy), qx)


def euler_from_quat(q):
    """ZYX Euler angles (roll, pitch, yaw) of a unit quaternion.

    Raises
    ------
    GimbalLockError
        If |pitch| is within GIMBAL_GUARD of 90 degrees, where roll and
        yaw are no longer separable.  Never returns NaN silently.
    """
    R = quat_to_matrix(q)
    s = -R[2, 0]  # sin(pitch)
    if abs(s) >= np.sin(np.pi / 2 - GIMBAL_GUARD):
        raise GimbalLockError(
            f"pitch within {GIMBAL_GUARD:g} rad of +/-90 deg: Euler ZYX extraction singular"
        )
    pitch = np.arcsin(np.clip(s, -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return roll, pitch, yaw


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
