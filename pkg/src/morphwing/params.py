"""Parameter sets for the robot model, gait, structure, aero, cost and solver.

Every block is a plain dataclass with physical units documented per field,
a ``validate()`` that raises :class:`ModelConfigError` on bad values, and
dict round-trips used by the config loader.  Defaults describe a 40 g,
30 cm span robot; they are a configurable stand-in, not measured data.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelConfigError


def _as_floats(x, n, name):
    a = np.asarray(x, dtype=float)
    if a.shape != (n,):
        raise ModelConfigError(f"{name} must have {n} entries, got shape {a.shape}")
    return a


@dataclass
class MorphologyParams:
    """Mass, geometry and joint properties of the multibody model.

    The articulated model is: 6-DOF rigid body; per wing an active shoulder
    plunge joint, a passive feathering joint (torsional spring-damper about
    the spanwise axis at the root) and an active elbow fold joint between
    the proximal and distal wing plates.
    """

    body_mass: float = 0.028                 # kg
    body_inertia: tuple = (3.2e-6, 3.5e-5, 3.5e-5)  # kg m^2, principal, body axes
    shoulder_offset: tuple = (0.010, 0.015, 0.0)    # m, body frame, right shoulder (left mirrored)
    proximal_length: float = 0.075           # m
    proximal_mass: float = 0.003             # kg
    proximal_chord: float = 0.08             # m, used for plate inertia
    distal_length: float = 0.075             # m
    distal_mass: float = 0.003               # kg
    distal_chord: float = 0.08               # m
    chord_root: float = 0.08                 # m, aero chord at wing root
    chord_tip: float = 0.08                  # m, aero chord at wing tip (linear taper)
    gravity: float = 9.81                    # m/s^2
    feather_stiffness: float = 0.2           # N m / rad
    feather_damping: float = 1.0e-3          # N m s / rad
    feather_rest: float = 0.30               # rad, passive pitch at zero spring torque
    elbow_range: tuple = (-0.4, 2.0)         # rad, mechanical stops
    track_kp: float = 4.0e4                  # 1/s^2, active-joint trajectory servo
    track_kd: float = 4.0e2                  # 1/s
    condition_limit: float = 1e12            # mass-matrix condition guard

    def validate(self):
        if self.body_mass <= 0 or self.proximal_mass <= 0 or self.distal_mass <= 0:
            raise ModelConfigError("all masses must be positive")
        I = np.asarray(self.body_inertia, dtype=float)
        if I.shape == (3,):
            I = np.diag(I)
        if I.shape != (3, 3):
            raise ModelConfigError("body_inertia must be 3 principal values or a 3x3 tensor")
        if not np.allclose(I, I.T, atol=1e-12):
            raise ModelConfigError("body inertia tensor must be symmetric")
        if np.any(np.linalg.eigvalsh(I) <= 0):
            raise ModelConfigError("body inertia tensor must be positive definite")
        for name in ("proximal_length", "distal_length", "proximal_chord",
                     "distal_chord", "chord_root", "chord_tip"):
            if getattr(self, name) <= 0:
                raise ModelConfigError(f"{name} must be positive")
        if self.elbow_range[0] >= self.elbow_range[1]:
            raise ModelConfigError("elbow_range must be (min, max) with min < max")
        if self.feather_stiffness < 0 or self.feather_damping < 0:
            raise ModelConfigError("feather spring coefficients must be non-negative")
        return self

    def inertia_tensor(self):
        I = np.asarray(self.body_inertia, dtype=float)
        return np.diag(I) if I.shape == (3,) else I

    def wing_span(self):
        return self.proximal_length + self.distal_length

    def chord_at(self, s):
        """Aero chord at spanwise station ``s`` metres from the shoulder."""
        f = np.clip(np.asarray(s, dtype=float) / self.wing_span(), 0.0, 1.0)
        return self.chord_root + (self.chord_tip - self.chord_root) * f


@dataclass
class AeroParams:
    """Unsteady blade-element aerodynamics settings."""

    elements_per_wing: int = 8
    rho: float = 1.225                # kg/m^3
    cl_alpha: float = 2.0 * np.pi    # 1/rad
    cd0: float = 0.02                 # profile drag coefficient
    stall_clamp: float = np.pi / 4.0  # rad, |alpha| clamp of the quasi-steady model
    v_min: float = 1e-6               # m/s, below this an element is degenerate
    lifting_line: bool = True
    added_mass: bool = True

    def validate(self):
        if self.elements_per_wing < 1:
            raise ModelConfigError("elements_per_wing must be >= 1")
        if self.rho <= 0:
            raise ModelConfigError("air density must be positive")
        if not 0 < self.stall_clamp <= np.pi / 2:
            raise ModelConfigError("stall_clamp must lie in (0, pi/2]")
        return self


@dataclass
class GaitParams:
    """Nominal periodic flapping gait and its regulator coupling gains.

    The shoulder follows ``bias + amp*sin(2 pi f t)``; the elbow follows
    ``bias + amp_e*sin(2 pi f t + phase)`` plus extra flexion centred on the
    upstroke controlled by ``asymmetry`` (wing folds while moving up).
    Structure-state offsets shift per-wing bias (link 1), scale amplitude
    (link 2) and shift elbow phase (link 3).
    """

    frequency: float = 10.0           # Hz
    shoulder_amplitude: float = 0.60  # rad
    shoulder_bias: float = 0.15       # rad
    elbow_amplitude: float = 0.50     # rad
    elbow_phase: float = np.pi / 2    # rad, lead so folding peaks mid-upstroke
    elbow_bias: float = 0.25          # rad
    asymmetry: float = 0.30           # extra upstroke flexion, fraction of elbow amp
    bias_gain: float = 0.25           # rad of shoulder bias per unit link-1 state
    amplitude_gain: float = 0.30      # fractional amplitude per unit link-2 state
    phase_gain: float = 0.50          # rad of elbow phase per unit link-3 state

    def validate(self):
        if self.frequency <= 0:
            raise ModelConfigError("flapping frequency must be positive")
        if self.shoulder_amplitude < 0 or self.elbow_amplitude < 0:
            raise ModelConfigError("gait amplitudes must be non-negative")
        if not -np.pi < self.elbow_phase <= np.pi:
            raise ModelConfigError("elbow_phase must lie in (-pi, pi]")
        return self

    def to_array(self):
        return np.array([
            self.frequency, self.shoulder_amplitude, self.shoulder_bias,
            self.elbow_amplitude, self.elbow_phase, self.elbow_bias,
            self.asymmetry, self.bias_gain, self.amplitude_gain, self.phase_gain,
        ])


@dataclass
class StructureParams:
    """Linear computational-structure model: n second-order elements.

    Element j responds to regulator j with unit DC gain:
    ``yddot = wn^2 (omega_j - y) - 2 zeta wn ydot``.
    """

    n_elements: int = 6
    natural_frequency: float = 40.0   # rad/s
    damping_ratio: float = 0.7
    stroke_limit: float = 0.004       # m of physical link travel at |omega| = 1

    def validate(self):
        if self.n_elements < 1:
            raise ModelConfigError("structure needs at least one element")
        if self.natural_frequency <= 0 or self.damping_ratio <= 0:
            raise ModelConfigError("structure must be strictly damped and stiff")
        if self.stroke_limit <= 0:
            raise ModelConfigError("stroke_limit must be positive")
        return self


@dataclass
class CostParams:
    """Diagonal attitude-tracking cost over [roll, pitch, wx, wy, wz]."""

    weights: tuple = (50.0, 50.0, 1.0, 1.0, 1.0)

    def validate(self):
        w = _as_floats(self.weights, 5, "cost weights")
        if np.any(w < 0) or not np.any(w > 0):
            raise ModelConfigError("cost weights must be >= 0 with at least one positive")
        return self

    def matrix(self):
        return np.diag(_as_floats(self.weights, 5, "cost weights"))


@dataclass
class SolverOptions:
    """Tolerances and caps for the dense SQP solver."""

    tol_kkt: float = 1e-6
    tol_feas: float = 1e-6
    max_iter: int = 50
    line_search_max: int = 25
    hessian_floor: float = 1e-8
    trace_path: str = ""       # optional JSON-lines iteration trace

    def validate(self):
        if self.tol_kkt <= 0 or self.tol_feas <= 0:
            raise ModelConfigError("solver tolerances must be positive")
        if self.max_iter < 1:
            raise ModelConfigError("max_iter must be >= 1")
        return self


@dataclass
class SimConfig:
    """Closed-loop experiment configuration.

    The integrator runs at ``dt`` while the collocation controller updates
    every ``controller_period`` (which must be an integer multiple of ``dt``)
    over a horizon of ``horizon_steps`` controller periods.
    """

    duration: float = 5.0
    dt: float = 1e-4
    controller_period: float = 0.005
    horizon_steps: int = 5
    prediction_dt: float = 0.005
    log_decimation: int = 10          # state log every this many fine steps
    seed: int = 0
    vorticity_times: tuple = ()       # s, snapshot instants (empty = auto)
    vorticity_grid: tuple = (48, 36)  # cells (ny_horizontal, nz_vertical)
    vorticity_extent: float = 1.4     # half-width of the frontal grid in spans
    init_mode: str = "trim"           # trim | manual
    init_velocity: tuple = (4.0, 0.0, 0.0)  # m/s world, manual mode
    init_pitch: float = -0.1745       # rad, manual mode
    morphology: MorphologyParams = field(default_factory=MorphologyParams)
    aero: AeroParams = field(default_factory=AeroParams)
    gait: GaitParams = field(default_factory=GaitParams)
    structure: StructureParams = field(default_factory=StructureParams)
    cost: CostParams = field(default_factory=CostParams)
    solver: SolverOptions = field(default_factory=SolverOptions)

    def validate(self):
        if self.duration <= 0 or self.dt <= 0:
            raise ModelConfigError("duration and dt must be positive")
        ratio = self.controller_period / self.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ModelConfigError(
                "sim.controller_period must be an integer multiple of sim.dt "
                f"(controller_period={self.controller_period}, dt={self.dt})"
            )
        if self.horizon_steps < 1:
            raise ModelConfigError("horizon_steps must be >= 1")
        if self.horizon_steps + 1 < 2:
            raise ModelConfigError("horizon must span at least 2 knots")
        if self.init_mode not in ("trim", "manual"):
            raise ModelConfigError("init_mode must be 'trim' or 'manual'")
        if self.log_decimation < 1:
            raise ModelConfigError("log_decimation must be >= 1")
        for sub in (self.morphology, self.aero, self.gait, self.structure,
                    self.cost, self.solver):
            sub.validate()
        return self

    def steps_per_update(self):
        return int(round(self.controller_period / self.dt))

    def horizon_knots(self):
        return self.horizon_steps + 1

    def horizon_tf(self):
        return self.horizon_steps * self.controller_period


# dict <-> dataclass plumbing used by the config loader ----------------------

_SECTIONS = {
    "sim": SimConfig,
    "morphology": MorphologyParams,
    "aero": AeroParams,
    "gait": GaitParams,
    "structure": StructureParams,
    "cost": CostParams,
    "solver": SolverOptions,
}


def dataclass_from_mapping(cls, data, path=""):
    """Build ``cls`` from a mapping, rejecting unknown keys with their path."""
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ModelConfigError(f"unknown config key '{path}{key}'")
        fld = next(f for f in dataclasses.fields(cls) if f.name == key)
        if dataclasses.is_dataclass(fld.type) or (
            isinstance(fld.default_factory, type) and dataclasses.is_dataclass(fld.default_factory)
        ):
            value = dataclass_from_mapping(fld.default_factory, value, path=f"{path}{key}.")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def dataclass_to_mapping(obj):
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = dataclass_to_mapping(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        elif isinstance(v, np.generic):
            out[f.name] = v.item()
        else:
            out[f.name] = v
    return out
