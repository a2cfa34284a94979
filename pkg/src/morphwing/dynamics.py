"""Multibody flight dynamics of the morphing-wing robot.

The articulated model is a 6-DOF rigid body with, per wing, an active
shoulder plunge joint, a passive root feathering joint (torsional
spring-damper) and an active elbow fold joint.  Active joints are
position-driven by the gait generator: the joint action ``u`` commands
their accelerations and the remaining accelerations follow from a
partitioned solve of the exact Lagrangian equations of motion.

All public operations are pure functions of their inputs; states are
plain dataclasses around flat numpy vectors.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import IntegrationBlowupError, ModelConfigError
from .params import AeroParams, MorphologyParams
from .rotation import euler_from_quat, quat_normalize

N_ACTIVE = 4   # [shoulder_L, elbow_L, shoulder_R, elbow_R]
N_PASSIVE = 2  # [feather_L, feather_R]
STATE_SIZE = K.NX


@dataclass
class BodyState:
    """Rigid-body pose and twist.

    position and linear_velocity are world-frame (NED); angular_velocity
    is body-frame; orientation is a unit quaternion (w, x, y, z) taking
    body vectors to world vectors.
    """

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.orientation = quat_normalize(self.orientation)
        self.linear_velocity = np.asarray(self.linear_velocity, dtype=float)
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float)


@dataclass
class RobotState:
    """Full robot state: body pose/twist plus joint coordinates and rates."""

    body: BodyState = field(default_factory=BodyState)
    q_active: np.ndarray = field(default_factory=lambda: np.zeros(N_ACTIVE))
    qd_active: np.ndarray = field(default_factory=lambda: np.zeros(N_ACTIVE))
    q_passive: np.ndarray = field(default_factory=lambda: np.zeros(N_PASSIVE))
    qd_passive: np.ndarray = field(default_factory=lambda: np.zeros(N_PASSIVE))

    def __post_init__(self):
        self.q_active = np.asarray(self.q_active, dtype=float)
        self.qd_active = np.asarray(self.qd_active, dtype=float)
        self.q_passive = np.asarray(self.q_passive, dtype=float)
        self.qd_passive = np.asarray(self.qd_passive, dtype=float)
        if self.q_active.shape != (N_ACTIVE,) or self.qd_active.shape != (N_ACTIVE,):
            raise ValueError(f"active joint vectors must have {N_ACTIVE} entries")
        if self.q_passive.shape != (N_PASSIVE,) or self.qd_passive.shape != (N_PASSIVE,):
            raise ValueError(f"passive joint vectors must have {N_PASSIVE} entries")

    def to_vector(self):
        return np.concatenate([
            self.body.position, self.body.orientation,
            self.body.linear_velocity, self.body.angular_velocity,
            self.q_active, self.qd_active, self.q_passive, self.qd_passive,
        ])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (STATE_SIZE,):
            raise ValueError(f"state vector must have {STATE_SIZE} entries")
        body = BodyState(x[0:3], x[3:7], x[7:10], x[10:13])
        return cls(body, x[13:17], x[17:21], x[21:23], x[23:25])

    def validate(self, params: MorphologyParams | None = None):
        x = self.to_vector()
        if not np.all(np.isfinite(x)):
            raise ValueError("robot state contains non-finite entries")
        if params is not None:
            lo, hi = params.elbow_range
            for e in (self.q_active[1], self.q_active[3]):
                if not lo <= e <= hi:
                    raise ValueError(
                        f"elbow angle {e:.4f} rad outside mechanical range [{lo}, {hi}]")
        return self


def pack_params(morph: MorphologyParams, aero: AeroParams | None = None):
    """Flatten morphology (+ optional aero) parameters for the kernels."""
    morph.validate()
    P = np.zeros(K.NPAR)
    P[K.P_MBODY] = morph.body_mass
    P[K.P_IBODY:K.P_IBODY + 9] = morph.inertia_tensor().ravel()
    P[K.P_XSH], P[K.P_YSH], P[K.P_ZSH] = morph.shoulder_offset
    P[K.P_L1], P[K.P_M1], P[K.P_C1] = (morph.proximal_length, morph.proximal_mass,
                                       morph.proximal_chord)
    P[K.P_L2], P[K.P_M2], P[K.P_C2] = (morph.distal_length, morph.distal_mass,
                                       morph.distal_chord)
    P[K.P_G] = morph.gravity
    P[K.P_KFE], P[K.P_CFE] = morph.feather_stiffness, morph.feather_damping
    P[K.P_FEREST] = morph.feather_rest
    P[K.P_KP], P[K.P_KD] = morph.track_kp, morph.track_kd
    if aero is not None:
        aero.validate()
        P[K.P_RHO], P[K.P_CLA], P[K.P_CD0] = aero.rho, aero.cl_alpha, aero.cd0
        P[K.P_STALL], P[K.P_VMIN] = aero.stall_clamp, aero.v_min
        P[K.P_LL] = 1.0 if aero.lifting_line else 0.0
        P[K.P_AM] = 1.0 if aero.added_mass else 0.0
    else:
        P[K.P_VMIN] = 1e-6
    return P


def _external_arrays(y2):
    """Per-point force arrays from an AeroOutput-like object (or none)."""
    if y2 is None:
        return (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
    pts = np.ascontiguousarray(y2.points, dtype=float)
    F = np.ascontiguousarray(y2.forces, dtype=float)
    body = np.ascontiguousarray(y2.body_index, dtype=np.int64)
    if pts.shape != F.shape or pts.shape[0] != body.shape[0]:
        raise ValueError("aero output arrays have inconsistent shapes")
    return pts, F, body


def mass_matrix(state: RobotState, params: MorphologyParams):
    """Generalized 12x12 mass matrix at the given state."""
    P = pack_params(params)
    M, _ = K.mass_matrix_and_bias(state.to_vector(), P, *(_external_arrays(None)))
    return M


def full_dynamics(state: RobotState, u, y2, params: MorphologyParams):
    """State derivative of the robot under joint actions and aero forces.

    Parameters
    ----------
    state : RobotState
    u : (4,) commanded active-joint accelerations [sh_L, el_L, sh_R, el_R]
    y2 : aero output with per-element world forces, application points and
        owning body indices, or None for vacuum flight
    params : MorphologyParams

    Returns
    -------
    RobotState holding the time derivative of every field (the orientation
    slot carries the quaternion rate).
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (N_ACTIVE,):
        raise ValueError(f"joint action vector must have {N_ACTIVE} entries")
    if not np.all(np.isfinite(u)):
        raise ValueError("joint action vector contains non-finite entries")
    P = pack_params(params)
    x = state.to_vector()
    pts, F, body = _external_arrays(y2)

    M, _ = K.mass_matrix_and_bias(x, P, pts, F, body)
    MUU = M[np.ix_(K.GEN_UNKNOWN, K.GEN_UNKNOWN)]
    cond = np.linalg.cond(MUU)
    if not np.isfinite(cond) or cond > params.condition_limit:
        raise ModelConfigError(
            f"mass matrix condition number {cond:.3g} exceeds {params.condition_limit:.3g}")

    dx, du, tau = K.forward_dynamics(x, P, u, pts, F, body)
    if not np.all(np.isfinite(dx)):
        raise ModelConfigError("dynamics produced non-finite derivative")
    deriv = RobotState.__new__(RobotState)
    deriv.body = BodyState.__new__(BodyState)
    deriv.body.position = dx[0:3]
    deriv.body.orientation = dx[3:7]
    deriv.body.linear_velocity = dx[7:10]
    deriv.body.angular_velocity = dx[10:13]
    deriv.q_active = dx[13:17]
    deriv.qd_active = dx[17:21]
    deriv.q_passive = dx[21:23]
    deriv.qd_passive = dx[23:25]
    return deriv


def actuation_torques(state: RobotState, u, y2, params: MorphologyParams):
    """Active-joint torques that realize the commanded accelerations."""
    u = np.asarray(u, dtype=float)
    P = pack_params(params)
    pts, F, body = _external_arrays(y2)
    _, _, tau = K.forward_dynamics(state.to_vector(), P, u, pts, F, body)
    return tau


def euler_angles(body: BodyState):
    """(roll, pitch, yaw) of the body orientation, ZYX convention.

    Raises GimbalLockError within the configured guard of |pitch| = 90 deg.
    """
    return euler_from_quat(body.orientation)


def total_energy(state: RobotState, params: MorphologyParams):
    """Kinetic + gravitational + feather-spring energy of the system."""
    x = state.to_vector()
    x[3:7] = quat_normalize(x[3:7])
    return K.total_energy(x, pack_params(params))


def angular_momentum(state: RobotState, params: MorphologyParams):
    """Total angular momentum about the world origin."""
    return K.angular_momentum(state.to_vector(), pack_params(params))


def aero_power(state: RobotState, y2, params: MorphologyParams):
    """Mechanical power injected by the aero forces, sum(F . v_point)."""
    if y2 is None:
        return 0.0
    pts, F, body = _external_arrays(y2)
    vel = K.point_velocities(state.to_vector(), pack_params(params), pts, body)
    return float(np.sum(F * vel))


def mirror_state(state: RobotState) -> RobotState:
    """Reflection of a state about the sagittal (x-z) plane.

    Left/right wing coordinates swap; lateral translation components and
    the pseudo-vector parts of rotation/angular velocity negate.
    """
    b = state.body
    q = b.orientation
    mb = BodyState(
        position=b.position * np.array([1.0, -1.0, 1.0]),
        orientation=np.array([q[0], -q[1], q[2], -q[3]]),
        linear_velocity=b.linear_velocity * np.array([1.0, -1.0, 1.0]),
        angular_velocity=b.angular_velocity * np.array([-1.0, 1.0, -1.0]),
    )
    qa = state.q_active
    qda = state.qd_active
    return RobotState(
        body=mb,
        q_active=np.array([qa[2], qa[3], qa[0], qa[1]]),
        qd_active=np.array([qda[2], qda[3], qda[0], qda[1]]),
        q_passive=state.q_passive[::-1].copy(),
        qd_passive=state.qd_passive[::-1].copy(),
    )


def rk4_step(f, y, t, dt, quat_slice=None):
    """One classic fourth-order Runge-Kutta step.

    Parameters
    ----------
    f : callable(y, t) -> dy/dt
    y : flat state vector (or scalar)
    t, dt : time and step size, dt > 0
    quat_slice : optional slice holding a quaternion to renormalize after
        the update (used when integrating robot states)

    Raises
    ------
    IntegrationBlowupError
        If any stage derivative is non-finite; the error carries t and
        the offending stage number (1-4).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(f(y, t), dtype=float)
    if not np.all(np.isfinite(k1)):
        raise IntegrationBlowupError(t, 1)
    k2 = np.asarray(f(y + 0.5 * dt * k1, t + 0.5 * dt), dtype=float)
    if not np.all(np.isfinite(k2)):
        raise IntegrationBlowupError(t, 2)
    k3 = np.asarray(f(y + 0.5 * dt * k2, t + 0.5 * dt), dtype=float)
    if not np.all(np.isfinite(k3)):
        raise IntegrationBlowupError(t, 3)
    k4 = np.asarray(f(y + dt * k3, t + dt), dtype=float)
    if not np.all(np.isfinite(k4)):
        raise IntegrationBlowupError(t, 4)
    out = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if quat_slice is not None:
        out[quat_slice] = quat_normalize(out[quat_slice])
    return out
