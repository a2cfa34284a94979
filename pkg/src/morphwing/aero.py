"""Unsteady blade-element aerodynamics.

The wing is discretized into spanwise blade elements.  Each element sees a
quasi-steady inflow from its own motion, corrected for finite-wing
downwash by a discrete horseshoe-vortex lifting-line solve, then filtered
through a two-pole indicial lag model (the classic two-exponential fit of
the step-response function) realized as two first-order states per
element.  The result is the linear time-varying state-space block of the
flight-dynamics cascade: lag states xi evolve as xi_dot = A(t) xi + B(t) w
and the circulatory loads read y2 = C(t) xi + D(t) w.

Diagnostics include frontal-plane swirl maps built from the instantaneous
bound vortices and the recent wingtip wake.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .dynamics import RobotState, pack_params
from .errors import SingularInfluenceError
from .params import AeroParams, MorphologyParams

# two-pole indicial response constants (Jones' exponential fit):
# phi(s) = 1 - A1 exp(-B1 s) - A2 exp(-B2 s), s in semichords of travel
WAGNER_A1 = K.WA1
WAGNER_B1 = K.WB1
WAGNER_A2 = K.WA2
WAGNER_B2 = K.WB2


def wagner_phi(s):
    """Two-pole approximation of the indicial lift response at travel s."""
    s = np.asarray(s, dtype=float)
    return 1.0 - WAGNER_A1 * np.exp(-WAGNER_B1 * s) - WAGNER_A2 * np.exp(-WAGNER_B2 * s)


@dataclass
class BladeElement:
    """One spanwise strip of a wing.

    ``station`` is measured from the shoulder along the whole wing;
    ``station_local`` from the root of the owning segment (proximal or
    distal plate).
    """

    side: int            # 0 = left, 1 = right
    segment: int         # 0 = proximal, 1 = distal
    station: float       # m from shoulder
    station_local: float = 0.0
    width: float = 0.0
    chord: float = 0.0
    area: float = 0.0


def build_elements(morph: MorphologyParams, aero: AeroParams):
    """Blade elements for both wings.

    Elements are uniform within each wing segment, with counts split
    proportionally to segment length so the elbow is always an element
    boundary.  Stations increase strictly along the span and element
    areas sum to the planform area of the linear-taper wing exactly.
    """
    n = aero.elements_per_wing
    L1, L2 = morph.proximal_length, morph.distal_length
    span = L1 + L2
    n1 = min(max(1, int(round(n * L1 / span))), n - 1) if n > 1 else 1
    n2 = n - n1
    elements = []
    for side in (0, 1):
        edges = np.concatenate([np.linspace(0.0, L1, n1 + 1),
                                np.linspace(L1, span, n2 + 1)[1:]])
        for i in range(n):
            s0, s1 = edges[i], edges[i + 1]
            mid = 0.5 * (s0 + s1)
            seg = 0 if mid < L1 else 1
            chord = float(morph.chord_at(mid))
            width = s1 - s0
            elements.append(BladeElement(
                side=side, segment=seg, station=mid,
                station_local=mid - (0.0 if seg == 0 else L1),
                width=width, chord=chord, area=chord * width))
    return elements


def elements_to_array(elements):
    E = np.empty((len(elements), 6))
    for i, e in enumerate(elements):
        E[i] = (e.side, e.segment, e.station_local, e.width, e.chord, e.area)
    return E


def check_element_invariants(elements, morph: MorphologyParams):
    """Stations strictly increasing per wing; areas sum to planform."""
    span = morph.wing_span()
    planform = 0.5 * (morph.chord_root + morph.chord_tip) * span
    for side in (0, 1):
        stations = [e.station for e in elements if e.side == side]
        if any(b <= a for a, b in zip(stations, stations[1:])):
            raise ValueError("element stations must increase strictly along the span")
        total = sum(e.area for e in elements if e.side == side)
        if abs(total - planform) > 1e-9:
            raise ValueError(
                f"element areas sum to {total:.12f}, planform is {planform:.12f}")
    return True


@dataclass
class AeroState:
    """Indicial lag states: two circulation-deficiency states per element."""

    lag: np.ndarray

    @classmethod
    def zero(cls, n_elements):
        return cls(np.zeros(2 * n_elements))

    @property
    def n_elements(self):
        return self.lag.shape[0] // 2

    def __post_init__(self):
        self.lag = np.asarray(self.lag, dtype=float)
        if self.lag.ndim != 1 or self.lag.shape[0] % 2:
            raise ValueError("lag state vector must have 2 entries per element")


@dataclass
class ElementKinematics:
    """Per-element geometry and motion (the posture/velocity output fed to
    the aero block).

    All vectors world-frame: quarter-chord positions/velocities,
    three-quarter-chord velocities (quasi-steady inflow point), section
    triads (chordwise, dorsal normal, spanwise/bound direction), the
    normal velocity-product acceleration for added mass, owning body
    indices, plus the body reference point/rotation for wrench reduction.
    """

    r_c4: np.ndarray
    v_c4: np.ndarray
    v_34: np.ndarray
    chat: np.ndarray
    nhat: np.ndarray
    that: np.ndarray
    a_n: np.ndarray
    body: np.ndarray
    sides: np.ndarray
    ref_point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R_body: np.ndarray = field(default_factory=lambda: np.eye(3))

    def speeds(self):
        """In-section relative speed per element."""
        fc = -np.einsum("ij,ij->i", self.v_34, self.chat)
        fn = -np.einsum("ij,ij->i", self.v_34, self.nhat)
        return np.hypot(fc, fn)


def element_kinematics(state: RobotState, elements, morph: MorphologyParams,
                       aero: AeroParams):
    """Evaluate the wing-section output map at a robot state."""
    P = pack_params(morph, aero)
    E = elements_to_array(elements)
    x = state.to_vector()
    Rb, w_w, kinL, comL, kinR, comR = K._both_wings(x, P)
    r_c4, v_c4, v_34, chat, nhat, that, a_n, body = K._element_kinematics(
        x, P, E, Rb, w_w, kinL, kinR)
    sides = np.array([e.side for e in elements], dtype=np.int64)
    return ElementKinematics(r_c4, v_c4, v_34, chat, nhat, that, a_n, body,
                             sides, x[0:3].copy(), np.asarray(Rb))


@dataclass
class AeroOutput:
    """Aerodynamic force output of the wing set.

    Per-element world forces with quarter-chord application points and
    owning body indices, per-element circulatory lift and drag magnitudes,
    effective circulations, and the total wrench about the body centre of
    mass expressed in the body frame.
    """

    forces: np.ndarray
    points: np.ndarray
    body_index: np.ndarray
    lift: np.ndarray
    drag: np.ndarray
    circulation: np.ndarray
    w_induced: np.ndarray
    total_force: np.ndarray
    total_moment: np.ndarray
    stall_events: int = 0
    degenerate_elements: int = 0


def aero_step(xi: AeroState, y1: ElementKinematics, elements,
              aero: AeroParams, t: float = 0.0):
    """Lag-state derivative and force output at one instant.

    Returns (xi_dot, AeroOutput).  Elements whose relative speed is below
    the degeneracy threshold contribute nothing and zero their lag-state
    dynamics (flagged in ``degenerate_elements``).
    """
    E = elements_to_array(elements)
    if xi.lag.shape[0] != 2 * E.shape[0]:
        raise ValueError(
            f"lag state has {xi.lag.shape[0]} entries, expected {2 * E.shape[0]}")
    P = pack_params(MorphologyParams(), aero)
    (forces, xidot, gamma_eff, gamma_qs, wind, F_tot, M_tot, p_aero,
     n_stall, n_degen) = K.aero_core(
        xi.lag, E, y1.sides, y1.r_c4, y1.v_c4, y1.v_34, y1.chat, y1.nhat,
        y1.that, y1.a_n, y1.ref_point, P)
    V = y1.speeds()
    lift = aero.rho * V * gamma_eff * E[:, 3]
    drag = (0.5 * aero.rho * V ** 2 * E[:, 4] * aero.cd0 * E[:, 3]
            + aero.rho * gamma_eff * wind * E[:, 3])
    Rb = y1.R_body
    out = AeroOutput(
        forces=forces, points=y1.r_c4.copy(), body_index=y1.body.copy(),
        lift=lift, drag=drag, circulation=gamma_eff, w_induced=wind,
        total_force=Rb.T @ F_tot, total_moment=Rb.T @ M_tot,
        stall_events=int(n_stall), degenerate_elements=int(n_degen))
    return AeroState(xidot), out


@dataclass
class AeroSystemMatrices:
    """Time-varying state-space realization of the indicial aero block.

    xi_dot = A xi + B w and per-element circulatory lift = C xi + D w,
    where w is the lifting-line-corrected quasi-steady downwash per
    element.  A is block-diagonal with one 2x2 block per element whose
    poles sit at -B1*(2V/c) and -B2*(2V/c).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    degenerate: np.ndarray


def assemble_aero_system(state: RobotState, elements, t,
                         morph: MorphologyParams, aero: AeroParams):
    """State-space matrices of the aero block at the current posture."""
    y1 = element_kinematics(state, elements, morph, aero)
    ne = len(elements)
    V = y1.speeds()
    A = np.zeros((2 * ne, 2 * ne))
    B = np.zeros((2 * ne, ne))
    C = np.zeros((ne, 2 * ne))
    D = np.zeros((ne, ne))
    degen = V < aero.v_min
    for e, el in enumerate(elements):
        if degen[e]:
            continue
        nu = 2.0 * V[e] / el.chord
        A[2 * e, 2 * e] = -WAGNER_B1 * nu
        A[2 * e + 1, 2 * e + 1] = -WAGNER_B2 * nu
        B[2 * e, e] = WAGNER_B1 * nu
        B[2 * e + 1, e] = WAGNER_B2 * nu
        gain = 0.5 * el.chord * aero.cl_alpha * aero.rho * V[e] * el.width
        C[e, 2 * e] = gain * WAGNER_A1
        C[e, 2 * e + 1] = gain * WAGNER_A2
        D[e, e] = gain * (1.0 - WAGNER_A1 - WAGNER_A2)
    return AeroSystemMatrices(A, B, C, D, degen)


@dataclass
class LiftingLineResult:
    circulation: np.ndarray
    w_induced: np.ndarray
    lift: np.ndarray


def lifting_line_correction(y1: ElementKinematics, circulations, elements,
                            aero: AeroParams):
    """Finite-wing downwash correction of quasi-steady circulations.

    Solves the discrete horseshoe-vortex system per wing side.  A single
    element has no neighbours and passes through unchanged.

    Raises
    ------
    SingularInfluenceError
        If two control points (nearly) coincide or the influence system
        cannot be solved; the error names the colliding pair.
    """
    gamma_qs = np.asarray(circulations, dtype=float)
    ne = len(elements)
    if gamma_qs.shape != (ne,):
        raise ValueError("need one circulation per element")
    E = elements_to_array(elements)
    V = y1.speeds()

    gamma = gamma_qs.copy()
    wind = np.zeros(ne)
    for side in (0, 1):
        idx = np.where(y1.sides == side)[0]
        if idx.size == 0:
            continue
        ctrl = np.ascontiguousarray(y1.r_c4[idx])
        if idx.size > 1:
            dmat = np.linalg.norm(ctrl[:, None, :] - ctrl[None, :, :], axis=2)
            np.fill_diagonal(dmat, np.inf)
            j, k = np.unravel_index(np.argmin(dmat), dmat.shape)
            if dmat[j, k] < 1e-9:
                raise SingularInfluenceError((int(idx[j]), int(idx[k])))
        dstr = K._stream_of(y1.v_34, idx.astype(np.int64), aero.v_min)
        g, w, ok = K.lifting_line_solve(
            ctrl, np.ascontiguousarray(y1.nhat[idx]),
            np.ascontiguousarray(y1.that[idx]),
            np.ascontiguousarray(E[idx, 3]), np.ascontiguousarray(E[idx, 4]),
            dstr, np.ascontiguousarray(gamma_qs[idx]),
            np.ascontiguousarray(V[idx]), aero.cl_alpha, aero.v_min)
        if not ok:
            dmat = np.linalg.norm(ctrl[:, None, :] - ctrl[None, :, :], axis=2)
            np.fill_diagonal(dmat, np.inf)
            j, k = np.unravel_index(np.argmin(dmat), dmat.shape)
            raise SingularInfluenceError((int(idx[j]), int(idx[k])))
        gamma[idx] = g
        wind[idx] = w
    lift = aero.rho * V * gamma * E[:, 3]
    return LiftingLineResult(gamma, wind, lift)


# --- vorticity diagnostics ---------------------------------------------------


def filament_induced_speed(points, seg_a, seg_b, gamma, core):
    """|induced velocity| of a set of vortex segments at query points.

    Exact finite-segment law outside the core radius; inside, the swirl
    ramps linearly to zero (solid-body core) so values stay bounded.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    seg_a = np.atleast_2d(np.asarray(seg_a, dtype=float))
    seg_b = np.atleast_2d(np.asarray(seg_b, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    vel = np.zeros_like(points)
    for a, b, g in zip(seg_a, seg_b, gamma):
        if g == 0.0:
            continue
        r1 = points - a
        r2 = points - b
        dl = b - a
        dlen = np.linalg.norm(dl)
        if dlen < 1e-14:
            continue
        cr = np.cross(r1, r2)
        cr2 = np.einsum("ij,ij->i", cr, cr)
        n1 = np.linalg.norm(r1, axis=1)
        n2 = np.linalg.norm(r2, axis=1)
        valid = (n1 > 1e-14) & (n2 > 1e-14) & (cr2 > 1e-30)
        h = np.zeros_like(n1)
        h[valid] = np.sqrt(cr2[valid]) / dlen
        dot = np.einsum("j,ij->i", dl, r1 / np.maximum(n1, 1e-300)[:, None]
                        - r2 / np.maximum(n2, 1e-300)[:, None])
        fac = np.zeros_like(n1)
        fac[valid] = g * dot[valid] / (4.0 * np.pi * cr2[valid])
        # Rankine core: scale by (h/core)^2 inside the core radius
        inside = valid & (h < core)
        fac[inside] *= (h[inside] / core) ** 2
        vel += fac[:, None] * cr
    return np.linalg.norm(vel, axis=1)


@dataclass
class WakeSample:
    """Snapshot of the bound-vortex system for wake reconstruction."""

    t: float
    bound_a: np.ndarray      # (ne, 3) inner end of each bound segment
    bound_b: np.ndarray      # (ne, 3) outer end
    gamma: np.ndarray        # (ne,) effective circulations
    tip_left: np.ndarray     # (3,) left wingtip position
    tip_right: np.ndarray    # (3,)
    gamma_tip_left: float = 0.0
    gamma_tip_right: float = 0.0


def make_wake_sample(state: RobotState, elements, gamma_eff,
                     morph: MorphologyParams, aero: AeroParams, t: float):
    """Build a WakeSample from the current posture and circulations."""
    y1 = element_kinematics(state, elements, morph, aero)
    gamma_eff = np.asarray(gamma_eff, dtype=float)
    half = np.array([e.width for e in elements])[:, None] * 0.5
    bound_a = y1.r_c4 - half * y1.that
    bound_b = y1.r_c4 + half * y1.that
    sides = y1.sides
    tipL = int(np.where(sides == 0)[0][-1])
    tipR = int(np.where(sides == 1)[0][-1])
    tip_left = y1.r_c4[tipL] - 0.5 * elements[tipL].width * y1.that[tipL]
    tip_right = y1.r_c4[tipR] + 0.5 * elements[tipR].width * y1.that[tipR]
    return WakeSample(t=t, bound_a=bound_a, bound_b=bound_b,
                      gamma=gamma_eff.copy(), tip_left=tip_left,
                      tip_right=tip_right,
                      gamma_tip_left=float(gamma_eff[tipL]),
                      gamma_tip_right=float(gamma_eff[tipR]))


@dataclass
class VorticityGrid:
    """Frontal-plane swirl-magnitude raster.

    Body-frame grid (y lateral, z vertical), row-major values with rows
    scanning z and columns scanning y.  Values are |induced velocity| of
    the bound + tip-wake vortex system, never negative.
    """

    t: float
    y: np.ndarray        # (nx,) lateral coordinates, m
    z: np.ndarray        # (ny,) vertical coordinates, m
    values: np.ndarray   # (ny, nx)

    @property
    def dy(self):
        return float(self.y[1] - self.y[0]) if self.y.size > 1 else 0.0

    @property
    def dz(self):
        return float(self.z[1] - self.z[0]) if self.z.size > 1 else 0.0


def vorticity_phase_map(samples, grid_y, grid_z, flap_period,
                        core=None):
    """Frontal-plane swirl map from a window of wake samples.

    ``samples`` must span at least one flapping period; the newest sample
    provides the bound vortices and body pose, older samples trace the
    trailing tip filaments (strength frozen at shedding).  The grid is
    body-frame lateral/vertical coordinates anchored at the newest
    sample's bound-vortex centroid.
    """
    if len(samples) < 2:
        raise ValueError("need at least two wake samples")
    if samples[-1].t - samples[0].t < flap_period - 1e-9:
        raise ValueError("sample window must cover at least one flapping period")
    cur = samples[-1]
    grid_y = np.asarray(grid_y, dtype=float)
    grid_z = np.asarray(grid_z, dtype=float)

    seg_a = [cur.bound_a]
    seg_b = [cur.bound_b]
    gam = [cur.gamma]
    for old, new in zip(samples[:-1], samples[1:]):
        seg_a.append(old.tip_left[None, :])
        seg_b.append(new.tip_left[None, :])
        gam.append(np.array([old.gamma_tip_left]))
        seg_a.append(old.tip_right[None, :])
        seg_b.append(new.tip_right[None, :])
        gam.append(np.array([old.gamma_tip_right]))
    seg_a = np.vstack(seg_a)
    seg_b = np.vstack(seg_b)
    gam = np.concatenate(gam)

    if core is None:
        widths = np.linalg.norm(cur.bound_b - cur.bound_a, axis=1)
        core = 0.5 * float(np.min(widths[widths > 0])) if np.any(widths > 0) else 1e-3

    centre = 0.5 * (np.min(cur.bound_a, axis=0) + np.max(cur.bound_b, axis=0))
    YY, ZZ = np.meshgrid(grid_y, grid_z)
    pts = np.stack([np.full(YY.size, centre[0]),
                    centre[1] + YY.ravel(), centre[2] + ZZ.ravel()], axis=1)
    vals = filament_induced_speed(pts, seg_a, seg_b, gam, core)
    return VorticityGrid(t=cur.t, y=grid_y, z=grid_z,
                         values=vals.reshape(ZZ.shape))


def tip_region_means(grid: VorticityGrid, semispan):
    """Mean swirl in the left/right wingtip bands of a frontal map."""
    yl = (grid.y <= -0.45 * semispan) & (grid.y >= -1.25 * semispan)
    yr = (grid.y >= 0.45 * semispan) & (grid.y <= 1.25 * semispan)
    left = float(grid.values[:, yl].mean()) if np.any(yl) else 0.0
    right = float(grid.values[:, yr].mean()) if np.any(yr) else 0.0
    return left, right
