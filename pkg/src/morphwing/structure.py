"""Computational-structure dynamics and the flapping-gait generator.

The wing linkage is modelled as a bank of damped second-order elements,
one per regulator link (three per wing), driven by normalized regulator
displacements.  The resulting linear system Ydot = A Y + B Omega is the
plant the collocation controller transcribes.  Structure displacements
modulate the nominal periodic gait: link 1 shifts the shoulder bias,
link 2 scales the shoulder amplitude and link 3 shifts the elbow phase of
its wing.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels as K
from .errors import ModelConfigError
from .params import GaitParams, StructureParams


@dataclass
class StructureState:
    """Stacked element displacements and rates: [y1, yd1, ..., yn, ydn]."""

    Y: np.ndarray

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim != 1 or self.Y.shape[0] % 2:
            raise ValueError("structure state must interleave n displacements and rates")
        if not np.all(np.isfinite(self.Y)):
            raise ValueError("structure state contains non-finite entries")

    @classmethod
    def zero(cls, n_elements):
        return cls(np.zeros(2 * n_elements))

    @property
    def n_elements(self):
        return self.Y.shape[0] // 2

    def displacements(self):
        return self.Y[0::2]

    def rates(self):
        return self.Y[1::2]


@dataclass
class RegulatorCommand:
    """Normalized regulator displacements, one per link (6 total).

    Values are meant to live in [-1, 1]; ``saturated()`` clips and counts
    violations so the caller can log saturation events.
    """

    omega: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if self.omega.ndim != 1:
            raise ValueError("regulator command must be a flat vector")

    @classmethod
    def zero(cls, m=6):
        return cls(np.zeros(m))

    @property
    def m(self):
        return self.omega.shape[0]

    def saturated(self):
        clipped = np.clip(self.omega, -1.0, 1.0)
        events = int(np.sum(np.abs(self.omega) > 1.0 + 1e-12))
        return RegulatorCommand(clipped), events

    def stroke(self, stroke_limit):
        """Physical link-length change in metres."""
        return self.omega * stroke_limit


class StructureModel:
    """Linear structure dynamics Ydot = A Y + B Omega.

    A must be strictly Hurwitz; construction rejects anything else so the
    structure cannot diverge under bounded regulator inputs.
    """

    def __init__(self, A, B):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] % 2:
            raise ModelConfigError("structure A matrix must be square with even size 2n")
        if B.shape[0] != A.shape[0]:
            raise ModelConfigError(
                f"structure B matrix must have {A.shape[0]} rows, got {B.shape[0]}")
        eigs = np.linalg.eigvals(A)
        if np.any(eigs.real >= 0):
            raise ModelConfigError(
                f"structure A matrix must be strictly Hurwitz (max Re eig = {eigs.real.max():.3g})")
        self.A = A
        self.B = B

    @property
    def n_elements(self):
        return self.A.shape[0] // 2

    @property
    def n_regulators(self):
        return self.B.shape[1]

    @classmethod
    def from_params(cls, params: StructureParams):
        params.validate()
        n = params.n_elements
        wn = params.natural_frequency
        zeta = params.damping_ratio
        A = np.zeros((2 * n, 2 * n))
        B = np.zeros((2 * n, n))
        for j in range(n):
            A[2 * j, 2 * j + 1] = 1.0
            A[2 * j + 1, 2 * j] = -wn * wn
            A[2 * j + 1, 2 * j + 1] = -2.0 * zeta * wn
            B[2 * j + 1, j] = wn * wn
        return cls(A, B)


def structure_dynamics(state: StructureState, command: RegulatorCommand,
                       model: StructureModel) -> StructureState:
    """Exact linear response Ydot = A Y + B Omega."""
    if state.Y.shape[0] != model.A.shape[0]:
        raise ValueError(
            f"state has {state.Y.shape[0]} entries, structure expects {model.A.shape[0]}")
    if command.omega.shape[0] != model.n_regulators:
        raise ValueError(
            f"command has {command.omega.shape[0]} entries, structure expects {model.n_regulators}")
    return StructureState(model.A @ state.Y + model.B @ command.omega)


@dataclass
class DiscretizedStructure:
    """Sampled structure propagator on a fixed step.

    Exact for piecewise-linear regulator inputs (first-order hold):
    ``Y+ = Ad Y + B0 Omega_i + B1 Omega_{i+1}``.
    """

    dt: float
    Ad: np.ndarray
    B0: np.ndarray
    B1: np.ndarray

    def step(self, Y, om_i, om_next=None):
        if om_next is None:
            om_next = om_i
        return self.Ad @ Y + self.B0 @ np.asarray(om_i) + self.B1 @ np.asarray(om_next)


def discretize_structure(model: StructureModel, dt: float) -> DiscretizedStructure:
    """First-order-hold discretization of the structure dynamics.

    Built from a single matrix exponential of the augmented system so the
    sampled trajectory matches continuous integration of the linear
    dynamics under piecewise-linear inputs to machine precision.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = model.A.shape[0]
    m = model.n_regulators
    # augmented generator: columns track int(exp(A s) B) and its ramp moment
    Z = np.zeros((n + 2 * m, n + 2 * m))
    Z[:n, :n] = model.A
    Z[:n, n:n + m] = model.B
    Z[n:n + m, n + m:] = np.eye(m)
    ez = scipy.linalg.expm(Z * dt)
    Ad = ez[:n, :n]
    S0 = ez[:n, n:n + m]        # int_0^dt e^{A(dt-s)} B ds
    S1 = ez[:n, n + m:]         # int_0^dt e^{A(dt-s)} B s ds
    B1 = S1 / dt
    B0 = S0 - B1
    return DiscretizedStructure(dt=dt, Ad=Ad, B0=B0, B1=B1)


def swap_left_right(vec):
    """Swap the left-wing and right-wing halves of a links-ordered vector."""
    v = np.asarray(vec, dtype=float)
    h = v.shape[0] // 2
    return np.concatenate([v[h:], v[:h]])


def gait_targets(t, gait: GaitParams, Y):
    """Joint targets of the modulated gait at time t.

    Parameters
    ----------
    t : time, s
    gait : GaitParams
    Y : structure state vector (2n,) or StructureState

    Returns
    -------
    (2, 4) array: rows (position rad, velocity rad/s), columns
    [shoulder_L, elbow_L, shoulder_R, elbow_R].
    """
    Yv = Y.Y if isinstance(Y, StructureState) else np.asarray(Y, dtype=float)
    out = K.gait_eval(float(t), gait.to_array(), Yv, np.zeros_like(Yv))
    return out[:2].copy()


def gait_kinematics(t, gait: GaitParams, Y, command: RegulatorCommand,
                    model: StructureModel):
    """Joint targets with accelerations, using the structure dynamics for
    the element accelerations.

    Returns a (3, 4) array: rows pos/vel/acc, columns
    [shoulder_L, elbow_L, shoulder_R, elbow_R].
    """
    Yv = Y.Y if isinstance(Y, StructureState) else np.asarray(Y, dtype=float)
    Ydot = model.A @ Yv + model.B @ command.omega
    return K.gait_eval(float(t), gait.to_array(), Yv, Ydot)
