"""Direct-collocation transcription of the gait-regulation problem.

States are interpolated with the cubic whose endpoint values and slopes
match the knots (slopes supplied by the dynamics), controls with linear
interpolation, and the dynamics are enforced as defect constraints at
interval midpoints.  The decision vector stacks all knot states, all knot
controls and, in gait-design mode, the free final time as its last entry.

The module is model-agnostic: the dynamics callback and the attitude-cost
callback are injected, so the same machinery serves the receding-horizon
controller (structure dynamics, pinned initial state, fixed horizon) and
the open-loop periodic gait-design problem (free final time, periodicity
boundary conditions).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelConfigError
from .solver import NlpProblem


@dataclass
class TimeGrid:
    """Strictly increasing knot times starting at zero."""

    knots: np.ndarray
    free_tf: bool = False

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        if self.knots.ndim != 1 or self.knots.shape[0] < 2:
            raise ModelConfigError("time grid needs at least 2 knots")
        if abs(self.knots[0]) > 1e-15:
            raise ModelConfigError("time grid must start at t = 0")
        if np.any(np.diff(self.knots) <= 0):
            raise ModelConfigError("knot times must increase strictly")

    @classmethod
    def uniform(cls, n_knots, tf, free_tf=False):
        return cls(np.linspace(0.0, tf, n_knots), free_tf)

    @property
    def n(self):
        return self.knots.shape[0]

    @property
    def tf(self):
        return float(self.knots[-1])


@dataclass
class DecisionLayout:
    """Index map of the stacked decision vector.

    Layout: [Y_1, ..., Y_n, Omega_1, ..., Omega_n, (tf)] with Y_j of size
    dim_y and Omega_j of size n_controls; tf present only when free.
    """

    n_knots: int
    dim_y: int
    n_controls: int
    free_tf: bool = False

    @property
    def size(self):
        return (self.n_knots * (self.dim_y + self.n_controls)
                + (1 if self.free_tf else 0))

    def y_slice(self, j):
        if not 0 <= j < self.n_knots:
            raise IndexError(f"knot index {j} out of range")
        return slice(j * self.dim_y, (j + 1) * self.dim_y)

    def om_slice(self, j):
        if not 0 <= j < self.n_knots:
            raise IndexError(f"knot index {j} out of range")
        base = self.n_knots * self.dim_y
        return slice(base + j * self.n_controls, base + (j + 1) * self.n_controls)

    @property
    def tf_index(self):
        if not self.free_tf:
            raise ValueError("tf is not a decision variable in this layout")
        return self.size - 1

    def pack(self, Yk, Omk, tf=None):
        Yk = np.asarray(Yk, dtype=float)
        Omk = np.asarray(Omk, dtype=float)
        if Yk.shape != (self.n_knots, self.dim_y):
            raise ValueError(f"Y knots must have shape {(self.n_knots, self.dim_y)}")
        if Omk.shape != (self.n_knots, self.n_controls):
            raise ValueError(
                f"control knots must have shape {(self.n_knots, self.n_controls)}")
        parts = [Yk.ravel(), Omk.ravel()]
        if self.free_tf:
            if tf is None:
                raise ValueError("free-tf layout requires a tf value")
            parts.append(np.array([float(tf)]))
        return np.concatenate(parts)

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ValueError(f"decision vector must have {self.size} entries")
        ny = self.n_knots * self.dim_y
        Yk = x[:ny].reshape(self.n_knots, self.dim_y)
        Omk = x[ny:ny + self.n_knots * self.n_controls].reshape(
            self.n_knots, self.n_controls)
        tf = float(x[-1]) if self.free_tf else None
        return Yk, Omk, tf

    def knot_times(self, x, base_grid: TimeGrid):
        """Knot times implied by the decision vector (scales with free tf)."""
        if not self.free_tf:
            return base_grid.knots
        tf = float(np.asarray(x)[self.tf_index])
        return base_grid.knots * (tf / base_grid.tf)


def interpolate_control(om_i, om_i1, t_i, t_i1, t):
    """Linear control interpolation between two knots.

    Exact formula om_i + (t - t_i)/(t_i1 - t_i) * (om_i1 - om_i); ``t``
    must lie within the interval.
    """
    if t_i1 <= t_i:
        raise ValueError("knot times must increase")
    if t < t_i - 1e-12 or t > t_i1 + 1e-12:
        raise ValueError(f"t={t} outside interval [{t_i}, {t_i1}]")
    om_i = np.asarray(om_i, dtype=float)
    om_i1 = np.asarray(om_i1, dtype=float)
    return om_i + ((t - t_i) / (t_i1 - t_i)) * (om_i1 - om_i)


def cubic_coefficients(y_j, y_j1, f_j, f_j1, h):
    """Coefficients (c0..c3) of the interval cubic in s = (t - t_j)/h.

    c0 = Y_j, c1 = h F_j, c2 = -3 Y_j - 2 h F_j + 3 Y_j1 - h F_j1,
    c3 = 2 Y_j + h F_j - 2 Y_j1 + h F_j1; by construction the cubic meets
    the knot values and knot slopes at both ends.
    """
    if h <= 0:
        raise ValueError("interval length h must be positive")
    y_j = np.asarray(y_j, dtype=float)
    y_j1 = np.asarray(y_j1, dtype=float)
    f_j = np.asarray(f_j, dtype=float)
    f_j1 = np.asarray(f_j1, dtype=float)
    c0 = y_j
    c1 = h * f_j
    c2 = -3.0 * y_j - 2.0 * h * f_j + 3.0 * y_j1 - h * f_j1
    c3 = 2.0 * y_j + h * f_j - 2.0 * y_j1 + h * f_j1
    return c0, c1, c2, c3


def interpolate_state(y_j, y_j1, f_j, f_j1, t_j, t_j1, t):
    """Cubic state interpolation; value at ``t`` within [t_j, t_j1]."""
    h = t_j1 - t_j
    if h <= 0:
        raise ValueError("interval length h must be positive")
    if t < t_j - 1e-12 or t > t_j1 + 1e-12:
        raise ValueError(f"t={t} outside interval [{t_j}, {t_j1}]")
    c0, c1, c2, c3 = cubic_coefficients(y_j, y_j1, f_j, f_j1, h)
    s = (t - t_j) / h
    return c0 + s * (c1 + s * (c2 + s * c3))


def interpolate_state_derivative(y_j, y_j1, f_j, f_j1, t_j, t_j1, t):
    """Time derivative of the interval cubic at ``t``."""
    h = t_j1 - t_j
    if h <= 0:
        raise ValueError("interval length h must be positive")
    c0, c1, c2, c3 = cubic_coefficients(y_j, y_j1, f_j, f_j1, h)
    s = (t - t_j) / h
    return (c1 + s * (2.0 * c2 + s * 3.0 * c3)) / h


def defect_residuals(x, layout: DecisionLayout, grid: TimeGrid, dynamics):
    """Midpoint collocation defects of a decision vector.

    Per interval: residual = d/dt of the interval cubic at the midpoint
    minus the dynamics evaluated at the interpolated midpoint state and
    the linearly interpolated midpoint control.  Residuals are stacked in
    interval order.
    """
    Yk, Omk, _ = layout.unpack(x)
    tk = layout.knot_times(x, grid)
    res = np.empty(((layout.n_knots - 1) * layout.dim_y,))
    for j in range(layout.n_knots - 1):
        h = tk[j + 1] - tk[j]
        t_mid = tk[j] + 0.5 * h
        try:
            f_j = np.asarray(dynamics(Yk[j], Omk[j], tk[j]), dtype=float)
            f_j1 = np.asarray(dynamics(Yk[j + 1], Omk[j + 1], tk[j + 1]), dtype=float)
            c0, c1, c2, c3 = cubic_coefficients(Yk[j], Yk[j + 1], f_j, f_j1, h)
            y_mid = c0 + 0.5 * (c1 + 0.5 * (c2 + 0.5 * c3))
            dy_mid = (c1 + c2 + 0.75 * c3) / h
            om_mid = 0.5 * (Omk[j] + Omk[j + 1])
            f_mid = np.asarray(dynamics(y_mid, om_mid, t_mid), dtype=float)
        except Exception as err:
            raise type(err)(f"defect evaluation failed in interval {j}: {err}") from err
        res[j * layout.dim_y:(j + 1) * layout.dim_y] = dy_mid - f_mid
    return res


@dataclass
class TrackingCost:
    """Diagonal weighted square error over the attitude sample z.

    z = [roll, pitch, wx, wy, wz]; the reference schedule supplies one
    z_ref row per knot.
    """

    C: np.ndarray
    z_ref: np.ndarray

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=float)
        if self.C.ndim == 1:
            self.C = np.diag(self.C)
        if self.C.shape[0] != self.C.shape[1]:
            raise ModelConfigError("cost weight matrix must be square")
        if np.any(np.diag(self.C) < 0) or not np.any(np.diag(self.C) > 0):
            raise ModelConfigError(
                "cost weights must be non-negative with at least one positive")
        self.z_ref = np.atleast_2d(np.asarray(self.z_ref, dtype=float))


def tracking_cost(z_knots, z_ref, C):
    """Weighted sum of squared tracking errors over the knots.

    J = sum_i (z_i - z_ref_i)^T C (z_i - z_ref_i) with diagonal C.
    """
    z = np.atleast_2d(np.asarray(z_knots, dtype=float))
    zr = np.atleast_2d(np.asarray(z_ref, dtype=float))
    C = np.asarray(C, dtype=float)
    if C.ndim == 1:
        C = np.diag(C)
    if zr.shape[0] == 1 and z.shape[0] > 1:
        zr = np.broadcast_to(zr, z.shape)
    if z.shape != zr.shape:
        raise ValueError(f"z {z.shape} and reference {zr.shape} shapes differ")
    err = z - zr
    return float(np.einsum("ij,jk,ik->", err, C, err))


@dataclass
class CollocationNlp:
    """Assembled NLP plus the layout/grid needed to interpret solutions."""

    problem: NlpProblem
    layout: DecisionLayout
    grid: TimeGrid
    n_defects: int
    n_boundary: int
    n_inequalities: int


def assemble_nlp(*, grid: TimeGrid, dim_y, n_controls, dynamics, objective,
                 boundary="pinned", y0=None, tf_bounds=None,
                 y_box=50.0, yrate_box=2000.0, control_box=1.2,
                 stroke_limit=1.0, initial_guess=None, linear_dynamics=False):
    """Transcribe the horizon problem into a dense NLP.

    Parameters
    ----------
    grid : TimeGrid (free_tf decides gait-design vs receding mode)
    dynamics : F(Y, Omega, t) -> Ydot, the collocation dynamics
    objective : J(Yk, Omk, tk) -> float, attitude cost over the knots
    boundary : "pinned" (Y_1 = y0, fixed tf) or "periodic" (Y_1 = Y_n)
    tf_bounds : (lo, hi), required when grid.free_tf
    stroke_limit : inequality g = stroke_limit^2 - Omega^2 >= 0 per knot
        and regulator
    linear_dynamics : precompute the constant equality Jacobian (valid
        only when the dynamics are linear in (Y, Omega) and tf is fixed)

    Returns
    -------
    CollocationNlp
    """
    if boundary not in ("pinned", "periodic"):
        raise ModelConfigError(f"unknown boundary mode '{boundary}'")
    if boundary == "pinned":
        if y0 is None:
            raise ModelConfigError("pinned boundary needs the measured state y0")
        y0 = np.asarray(y0, dtype=float)
        if y0.shape != (dim_y,):
            raise ModelConfigError(f"y0 must have {dim_y} entries")
    if grid.free_tf and tf_bounds is None:
        raise ModelConfigError("free final time requires tf_bounds")

    layout = DecisionLayout(grid.n, dim_y, n_controls, free_tf=grid.free_tf)
    n_defects = (grid.n - 1) * dim_y
    n_boundary = dim_y

    def eq_fun(x):
        Yk, _, _ = layout.unpack(x)
        defects = defect_residuals(x, layout, grid, dynamics)
        if boundary == "pinned":
            bres = Yk[0] - y0
        else:
            bres = Yk[0] - Yk[-1]
        return np.concatenate([defects, bres])

    def ineq_fun(x):
        _, Omk, _ = layout.unpack(x)
        return (stroke_limit ** 2 - Omk ** 2).ravel()

    def ineq_jac(x):
        _, Omk, _ = layout.unpack(x)
        J = np.zeros((grid.n * n_controls, layout.size))
        base = grid.n * dim_y
        for r in range(grid.n * n_controls):
            J[r, base + r] = -2.0 * Omk.ravel()[r]
        return J

    def obj_fun(x):
        Yk, Omk, _ = layout.unpack(x)
        tk = layout.knot_times(x, grid)
        return float(objective(Yk, Omk, tk))

    eq_jac = None
    if linear_dynamics and not grid.free_tf:
        # affine residuals: columns probed once, reused for every solve
        x_zero = np.zeros(layout.size)
        base_res = eq_fun(x_zero)
        A_eq = np.empty((base_res.shape[0], layout.size))
        for k in range(layout.size):
            ek = np.zeros(layout.size)
            ek[k] = 1.0
            A_eq[:, k] = eq_fun(ek) - base_res

        def eq_jac(x, _A=A_eq):
            return _A

    lb = np.empty(layout.size)
    ub = np.empty(layout.size)
    for j in range(grid.n):
        ys = layout.y_slice(j)
        lb[ys] = -y_box
        ub[ys] = y_box
        lb[ys.start + 1:ys.stop:2] = -yrate_box  # rate entries interleave
        ub[ys.start + 1:ys.stop:2] = yrate_box
        os_ = layout.om_slice(j)
        lb[os_] = -control_box
        ub[os_] = control_box
    if grid.free_tf:
        lb[layout.tf_index] = tf_bounds[0]
        ub[layout.tf_index] = tf_bounds[1]

    if initial_guess is None:
        Yk0 = np.zeros((grid.n, dim_y))
        if boundary == "pinned":
            Yk0[:] = y0
        initial_guess = layout.pack(Yk0, np.zeros((grid.n, n_controls)),
                                    grid.tf if grid.free_tf else None)

    problem = NlpProblem(
        n=layout.size, objective=obj_fun, eq=eq_fun, eq_jac=eq_jac,
        ineq=ineq_fun, ineq_jac=ineq_jac, lb=lb, ub=ub, x0=initial_guess)
    return CollocationNlp(problem=problem, layout=layout, grid=grid,
                          n_defects=n_defects, n_boundary=n_boundary,
                          n_inequalities=grid.n * n_controls)


def shift_initial_guess(layout: DecisionLayout, grid: TimeGrid, x_prev,
                        shift, dynamics, y0_new):
    """Warm start: advance the previous solution by ``shift`` seconds.

    Knot values are re-sampled from the previous interpolants (cubic for
    states, linear for controls); times past the previous horizon hold the
    final knot.  The first state knot is replaced by the newly measured
    structure state.  When the shift equals a whole number of intervals
    the overlapping knots reproduce the previous values exactly.
    """
    Yk, Omk, _ = layout.unpack(x_prev)
    tk = grid.knots
    Fk = np.stack([np.asarray(dynamics(Yk[j], Omk[j], tk[j]), dtype=float)
                   for j in range(layout.n_knots)])
    Yn = np.empty_like(Yk)
    On = np.empty_like(Omk)
    for j in range(layout.n_knots):
        t = tk[j] + shift
        if t >= tk[-1] - 1e-12:
            Yn[j] = Yk[-1]
            On[j] = Omk[-1]
            continue
        i = int(np.searchsorted(tk, t, side="right") - 1)
        i = min(max(i, 0), layout.n_knots - 2)
        Yn[j] = interpolate_state(Yk[i], Yk[i + 1], Fk[i], Fk[i + 1],
                                  tk[i], tk[i + 1], t)
        On[j] = interpolate_control(Omk[i], Omk[i + 1], tk[i], tk[i + 1], t)
    Yn[0] = y0_new
    return layout.pack(Yn, On)


def nlp_debug_dict(cnlp: CollocationNlp, x=None):
    """JSON-serializable snapshot of an assembled NLP for inspection."""
    p = cnlp.problem
    x = p.x0 if x is None else np.asarray(x, dtype=float)
    out = {
        "n_variables": int(p.n),
        "n_defects": int(cnlp.n_defects),
        "n_boundary": int(cnlp.n_boundary),
        "n_inequalities": int(cnlp.n_inequalities),
        "free_tf": bool(cnlp.layout.free_tf),
        "knots": cnlp.grid.knots.tolist(),
        "x": x.tolist(),
        "objective": float(p.objective(x)),
        "eq_residuals": p.eq(x).tolist() if p.eq else [],
        "ineq_residuals": p.ineq(x).tolist() if p.ineq else [],
        "lb": np.asarray(p.lb).tolist(),
        "ub": np.asarray(p.ub).tolist(),
    }
    json.dumps(out)  # fail fast if anything is not serializable
    return out
