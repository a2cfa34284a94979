"""Dense SQP solver for small nonlinear programs.

Sequential quadratic programming with damped BFGS Hessian updates, an
active-set QP subproblem and an augmented-Lagrangian merit line search.
Designed for the collocation NLPs this package generates (up to a few
hundred variables, equality defects, stroke inequalities, simple bounds);
it is not a general-purpose large-scale solver.

Conventions: inequalities use g(x) >= 0; bounds are handled as linear
rows of the QP subproblem.  All computations are deterministic: identical
inputs produce bitwise-identical reports.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverAbortError
from .params import SolverOptions


def finite_difference_gradient(callback, x, scheme="central"):
    """Finite-difference gradient with per-coordinate steps.

    Step size h_k = max(1e-6, 1e-7 * |x_k|).  ``scheme`` is "central"
    (default) or "forward".

    Raises
    ------
    ValueError
        If a sampled value is non-finite, naming the coordinate index.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    g = np.empty(n)
    f0 = None
    if scheme == "forward":
        f0 = float(callback(x))
        if not np.isfinite(f0):
            raise ValueError("non-finite objective at the base point")
    elif scheme != "central":
        raise ValueError(f"unknown finite-difference scheme '{scheme}'")
    for k in range(n):
        h = max(1e-6, 1e-7 * abs(x[k]))
        xp = x.copy()
        xp[k] += h
        fp = float(callback(xp))
        if scheme == "central":
            xm = x.copy()
            xm[k] -= h
            fm = float(callback(xm))
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError(f"non-finite finite-difference sample at coordinate {k}")
            g[k] = (fp - fm) / (2.0 * h)
        else:
            if not np.isfinite(fp):
                raise ValueError(f"non-finite finite-difference sample at coordinate {k}")
            g[k] = (fp - f0) / h
    return g


def _fd_jacobian(fun, x, m):
    """Central-difference Jacobian of a vector residual function."""
    x = np.asarray(x, dtype=float)
    J = np.empty((m, x.shape[0]))
    for k in range(x.shape[0]):
        h = max(1e-6, 1e-7 * abs(x[k]))
        xp = x.copy()
        xp[k] += h
        xm = x.copy()
        xm[k] -= h
        J[:, k] = (np.asarray(fun(xp), dtype=float)
                   - np.asarray(fun(xm), dtype=float)) / (2.0 * h)
    return J


@dataclass
class NlpProblem:
    """Dense NLP: minimize objective subject to eq(x)=0, ineq(x)>=0, bounds.

    Callbacks must return finite values at the initial guess.  Jacobian
    and gradient callbacks are optional; finite differences fill the gaps.
    """

    n: int
    objective: object
    x0: np.ndarray
    gradient: object = None
    eq: object = None
    eq_jac: object = None
    ineq: object = None
    ineq_jac: object = None
    lb: np.ndarray = None
    ub: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (self.n,):
            raise ValueError(f"x0 must have {self.n} entries")
        self.lb = (np.full(self.n, -np.inf) if self.lb is None
                   else np.asarray(self.lb, dtype=float))
        self.ub = (np.full(self.n, np.inf) if self.ub is None
                   else np.asarray(self.ub, dtype=float))
        if np.any(self.lb > self.ub):
            raise ValueError("lower bounds must not exceed upper bounds")


@dataclass
class SolveReport:
    """Outcome of one solve.

    ``termination`` is one of converged | max-iter | line-search-failure |
    infeasible.  When converged, the KKT residual and constraint violation
    are within the requested tolerances.
    """

    x: np.ndarray
    objective: float
    max_violation: float
    iterations: int
    termination: str
    kkt_residual: float
    active_inequalities: tuple = ()
    multipliers_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    multipliers_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hessian: np.ndarray = None
    n_objective_evals: int = 0

    @property
    def converged(self):
        return self.termination == "converged"


def _qp_active_set(B, g, Aeq, beq, Ain, bin_, max_iter=200):
    """min 0.5 d'Bd + g'd  s.t.  Aeq d = beq, Ain d >= bin.

    Dense active-set scheme: solve the equality QP with the current
    working set, activate the most violated inequality, release working
    rows with negative multipliers.  Returns (d, nu_eq, mu_in, ok).
    """
    n = g.shape[0]
    me = Aeq.shape[0]
    mi = Ain.shape[0]
    work = np.zeros(mi, dtype=bool)
    last_dropped = -1
    tol = 1e-10

    for _ in range(max_iter):
        widx = np.where(work)[0]
        nw = widx.shape[0]
        dim = n + me + nw
        KKT = np.zeros((dim, dim))
        rhs = np.zeros(dim)
        KKT[:n, :n] = B
        rhs[:n] = -g
        if me:
            KKT[:n, n:n + me] = Aeq.T
            KKT[n:n + me, :n] = Aeq
            rhs[n:n + me] = beq
        if nw:
            W = Ain[widx]
            KKT[:n, n + me:] = W.T
            KKT[n + me:, :n] = W
            rhs[n + me:] = bin_[widx]
        try:
            sol = np.linalg.solve(KKT, rhs)
        except np.linalg.LinAlgError:
            # regularize the Hessian block and retry once per iteration
            KKT[:n, :n] = B + 1e-8 * np.eye(n)
            try:
                sol = np.linalg.solve(KKT, rhs)
            except np.linalg.LinAlgError:
                return np.zeros(n), np.zeros(me), np.zeros(mi), False
        if not np.all(np.isfinite(sol)):
            return np.zeros(n), np.zeros(me), np.zeros(mi), False
        d = sol[:n]
        nu = sol[n:n + me]
        pi = sol[n + me:]

        # most negative working multiplier -> candidate to release
        drop = -1
        if nw:
            k = int(np.argmin(pi))
            if pi[k] < -tol:
                drop = widx[k]

        # most violated inactive inequality -> candidate to activate
        add = -1
        worst = tol
        if mi:
            viol = bin_ - Ain @ d
            viol[widx] = -np.inf
            k = int(np.argmax(viol))
            if viol[k] > worst:
                add = k

        if add >= 0:
            if add == last_dropped:
                # degenerate flip-flop: keep it active and stop changing
                work[add] = True
                last_dropped = -1
                continue
            work[add] = True
            continue
        if drop >= 0:
            work[drop] = False
            last_dropped = drop
            continue

        mu = np.zeros(mi)
        if nw:
            mu[widx] = np.maximum(pi, 0.0)
        return d, nu, mu, True

    # iteration cap: return the last iterate as a best effort
    mu = np.zeros(mi)
    if np.any(work):
        mu[np.where(work)[0]] = np.maximum(pi, 0.0)
    return d, nu, mu, True


def _al_merit(f, ce, ci, lam, mu, rho):
    """Augmented-Lagrangian merit value."""
    val = f
    if ce.size:
        val += -lam @ ce + 0.5 * rho * float(ce @ ce)
    if ci.size:
        shifted = np.maximum(0.0, mu - rho * ci)
        val += float(np.sum(shifted ** 2 - mu ** 2)) / (2.0 * rho)
    return val


def solve(problem: NlpProblem, options: SolverOptions = None, warm=None):
    """Solve a dense NLP by SQP with an augmented-Lagrangian line search.

    Parameters
    ----------
    problem : NlpProblem
    options : SolverOptions (tolerances, iteration caps, optional trace)
    warm : SolveReport from a previous related solve; reuses multipliers
        and the BFGS Hessian estimate (the caller supplies x0 through the
        problem itself)

    Raises
    ------
    SolverAbortError
        If an objective or constraint callback returns a non-finite value
        at an accepted iterate.
    """
    opts = (options or SolverOptions()).validate()
    n = problem.n
    x = np.clip(problem.x0, problem.lb, problem.ub)

    n_evals = [0]

    def fval(xx):
        n_evals[0] += 1
        return float(problem.objective(xx))

    def grad(xx):
        if problem.gradient is not None:
            return np.asarray(problem.gradient(xx), dtype=float)
        return finite_difference_gradient(problem.objective, xx)

    def ceval(xx):
        return (np.asarray(problem.eq(xx), dtype=float) if problem.eq
                else np.zeros(0))

    def cjac(xx, mres):
        if problem.eq_jac is not None:
            return np.asarray(problem.eq_jac(xx), dtype=float)
        return _fd_jacobian(problem.eq, xx, mres)

    def ieval(xx):
        return (np.asarray(problem.ineq(xx), dtype=float) if problem.ineq
                else np.zeros(0))

    def ijac(xx, mres):
        if problem.ineq_jac is not None:
            return np.asarray(problem.ineq_jac(xx), dtype=float)
        return _fd_jacobian(problem.ineq, xx, mres)

    f = fval(x)
    ce = ceval(x)
    ci = ieval(x)
    if not (np.isfinite(f) and np.all(np.isfinite(ce)) and np.all(np.isfinite(ci))):
        raise SolverAbortError(x, "non-finite callback value at the initial guess")

    me, mi = ce.shape[0], ci.shape[0]
    lam = np.zeros(me)
    mu = np.zeros(mi)
    B = np.eye(n)
    if warm is not None:
        if warm.multipliers_eq is not None and warm.multipliers_eq.shape == (me,):
            lam = warm.multipliers_eq.copy()
        if warm.multipliers_ineq is not None and warm.multipliers_ineq.shape == (mi,):
            mu = warm.multipliers_ineq.copy()
        if warm.hessian is not None and warm.hessian.shape == (n, n):
            B = warm.hessian.copy()

    rho = 10.0
    g = grad(x)
    Je = cjac(x, me) if me else np.zeros((0, n))
    Ji = ijac(x, mi) if mi else np.zeros((0, n))

    trace = open(opts.trace_path, "a") if opts.trace_path else None
    termination = "max-iter"
    it = 0

    def viol(ce_, ci_):
        v = 0.0
        if ce_.size:
            v = max(v, float(np.max(np.abs(ce_))))
        if ci_.size:
            v = max(v, float(max(0.0, -np.min(ci_))))
        return v

    def kkt_res(xx, gg, Je_, Ji_, lam_, mu_, ci_):
        r = gg.copy()
        if lam_.size:
            r -= Je_.T @ lam_
        if mu_.size:
            r -= Ji_.T @ mu_
        # projected stationarity handles the bound multipliers implicitly
        pg = xx - np.clip(xx - r, problem.lb, problem.ub)
        res = float(np.max(np.abs(pg))) if pg.size else 0.0
        if mu_.size:
            res = max(res, float(np.max(np.abs(mu_ * np.minimum(ci_, mu_)))))
        return res

    try:
        for it in range(1, opts.max_iter + 1):
            kkt = kkt_res(x, g, Je, Ji, lam, mu, ci)
            vl = viol(ce, ci)
            if trace:
                trace.write(json.dumps({
                    "iter": it - 1, "objective": f, "violation": vl,
                    "kkt": kkt, "rho": rho}) + "\n")
            if kkt <= opts.tol_kkt and vl <= opts.tol_feas:
                termination = "converged"
                break

            # QP subproblem with bounds as inequality rows
            bnd_rows = []
            bnd_rhs = []
            for k in range(n):
                if np.isfinite(problem.lb[k]):
                    row = np.zeros(n)
                    row[k] = 1.0
                    bnd_rows.append(row)
                    bnd_rhs.append(problem.lb[k] - x[k])
                if np.isfinite(problem.ub[k]):
                    row = np.zeros(n)
                    row[k] = -1.0
                    bnd_rows.append(row)
                    bnd_rhs.append(x[k] - problem.ub[k])
            Ain = np.vstack([Ji] + bnd_rows) if (mi or bnd_rows) else np.zeros((0, n))
            bin_ = (np.concatenate([-ci, np.asarray(bnd_rhs)])
                    if (mi or bnd_rows) else np.zeros(0))

            d, nu, pim, qp_ok = _qp_active_set(B, g, Je, -ce, Ain, bin_)
            if not qp_ok or not np.all(np.isfinite(d)):
                termination = "infeasible"
                break
            lam_qp = nu
            mu_qp = pim[:mi] if mi else np.zeros(0)

            step = float(np.max(np.abs(d))) if d.size else 0.0
            if step <= 1e-14:
                # stationary for the QP model: accept multipliers and re-test
                lam = lam_qp
                mu = mu_qp
                kkt = kkt_res(x, g, Je, Ji, lam, mu, ci)
                if kkt <= opts.tol_kkt and vl <= opts.tol_feas:
                    termination = "converged"
                else:
                    termination = "line-search-failure"
                break

            # penalty large enough for descent of the AL merit
            mult_norm = max(
                1.0,
                float(np.max(np.abs(lam_qp))) if lam_qp.size else 0.0,
                float(np.max(mu_qp)) if mu_qp.size else 0.0)
            while rho < 10.0 * mult_norm:
                rho *= 10.0

            phi0 = _al_merit(f, ce, ci, lam_qp, mu_qp, rho)
            alpha = 1.0
            accepted = False
            f_t = f
            ce_t = ce
            ci_t = ci
            for _ in range(opts.line_search_max):
                xt = np.clip(x + alpha * d, problem.lb, problem.ub)
                f_t = fval(xt)
                ce_t = ceval(xt)
                ci_t = ieval(xt)
                if np.isfinite(f_t) and np.all(np.isfinite(ce_t)) and np.all(np.isfinite(ci_t)):
                    phi_t = _al_merit(f_t, ce_t, ci_t, lam_qp, mu_qp, rho)
                    if phi_t <= phi0 - 1e-8 * alpha * step:
                        accepted = True
                        break
                alpha *= 0.5
            if not accepted:
                termination = "line-search-failure"
                break

            x_new = np.clip(x + alpha * d, problem.lb, problem.ub)
            g_new = grad(x_new)
            ce_new = ce_t
            ci_new = ci_t
            if not np.all(np.isfinite(g_new)):
                raise SolverAbortError(x_new, "non-finite gradient at accepted iterate")
            Je_new = cjac(x_new, me) if me else np.zeros((0, n))
            Ji_new = ijac(x_new, mi) if mi else np.zeros((0, n))

            # damped BFGS on the Lagrangian gradient
            s = x_new - x
            dL_new = g_new.copy()
            dL_old = g.copy()
            if me:
                dL_new -= Je_new.T @ lam_qp
                dL_old -= Je.T @ lam_qp
            if mi:
                dL_new -= Ji_new.T @ mu_qp
                dL_old -= Ji.T @ mu_qp
            yv = dL_new - dL_old
            sBs = float(s @ B @ s)
            sy = float(s @ yv)
            if sBs > 1e-16 and float(s @ s) > 1e-16:
                if sy < 0.2 * sBs:
                    theta = 0.8 * sBs / (sBs - sy)
                    yv = theta * yv + (1.0 - theta) * (B @ s)
                    sy = float(s @ yv)
                if sy > 1e-12:
                    Bs = B @ s
                    B = B - np.outer(Bs, Bs) / sBs + np.outer(yv, yv) / sy
                    B = 0.5 * (B + B.T)

            x, f, g = x_new, f_t, g_new
            ce, ci, Je, Ji = ce_new, ci_new, Je_new, Ji_new
            lam, mu = lam_qp, mu_qp

        else:
            it = opts.max_iter
    finally:
        if trace:
            trace.close()

    ci_final = ci if mi else np.zeros(0)
    active = tuple(int(i) for i in np.where(
        ci_final <= opts.tol_feas * 10)[0]) if mi else ()
    return SolveReport(
        x=x, objective=f, max_violation=viol(ce, ci),
        iterations=it if termination != "converged" else it - 1,
        termination=termination,
        kkt_residual=kkt_res(x, g, Je, Ji, lam, mu, ci),
        active_inequalities=active,
        multipliers_eq=lam, multipliers_ineq=mu,
        hessian=B, n_objective_evals=n_evals[0])
