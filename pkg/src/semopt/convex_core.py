"""Self-contained smooth convex program solver.

Implements a two-phase log-barrier interior-point method with damped
Newton centering for small dense problems: minimize a smooth convex
objective subject to smooth convex inequality constraints g_i(x) <= 0.
Problem sizes here stay in the low hundreds of variables, so all linear
algebra is dense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericalFailure


@dataclass(frozen=True)
class Constraint:
    """One smooth convex inequality g(x) <= 0.

    ``value``/``grad`` are callables of x. ``hess`` may be None (affine),
    or a callable returning either a 1-D diagonal or a dense matrix;
    ``hess_constant`` lets the solver cache it.
    """

    label: str
    value: callable
    grad: callable
    hess: callable = None
    hess_constant: bool = False


@dataclass
class ConvexProgram:
    """Smooth convex minimization problem over R^n.

    ``objective(x)`` returns (value, gradient, hessian) with the hessian
    given as a 1-D diagonal or dense matrix (None for affine objectives).
    Constraint labels must be unique.
    """

    dimension: int
    objective: callable
    constraints: list
    x0: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = [c.label for c in self.constraints]
        if len(set(labels)) != len(labels):
            raise ValueError("constraint labels must be unique")

    def objective_value(self, x) -> float:
        fast = self.metadata.get("objective_value") if self.metadata else None
        if fast is not None:
            return fast(x)
        return self.objective(x)[0]

    def constraint_values(self, x) -> np.ndarray:
        return np.array([c.value(x) for c in self.constraints], dtype=float)


@dataclass
class SolverOptions:
    t0: float = 1.0                 # initial barrier weight on the objective
    mu: float = 10.0                # barrier multiplier per stage
    tol_gap_rel: float = 1e-8       # duality-gap target, relative to 1+|objective|
    tol_newton: float = 1e-9        # centering stop on decrement^2 / 2
    tol_kkt: float = 1e-6           # scaled KKT residual bound for 'converged'
    armijo_c: float = 0.01
    backtrack: float = 0.5
    reg0: float = 1e-10             # initial Hessian regularization (scaled by diag)
    reg_escalations: int = 5
    max_newton_per_stage: int = 60
    max_stages: int = 40
    phase1_margin: float = 1e-9     # strict-feasibility margin accepted by phase 1
    on_step: callable = None        # optional per-Newton-step diagnostics sink
    verbose: bool = False


@dataclass
class SolveResult:
    x: np.ndarray
    objective_value: float
    barrier_t: float
    duals: np.ndarray
    residuals: dict
    newton_steps: int
    stages: int
    status: str                     # converged | max_iter | infeasible | numerical_failure
    message: str = ""
    constraint_labels: tuple = ()
    infeasible_labels: tuple = ()   # set when phase 1 could not clear these


def _hessian_as_dense(h, n):
    if h is None:
        return None
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        return np.diag(h)
    return h


class _BarrierWorkspace:
    """Caches constant constraint Hessians and evaluates barrier terms.

    Programs may ship vectorized batch evaluators in their metadata under
    ``fused_values`` / ``fused_values_grads``; they must agree with the
    per-constraint closures and are used for speed when present.
    """

    def __init__(self, program: ConvexProgram):
        self.p = program
        self.n = program.dimension
        self.fused_values = program.metadata.get("fused_values")
        self.fused_values_grads = program.metadata.get("fused_values_grads")
        self.const_dense = []   # (index, matrix)
        self.const_diag = []    # (index, diag vector)
        self.dynamic = []       # indices with non-constant hessians
        x_probe = program.x0
        for i, c in enumerate(program.constraints):
            if c.hess is None:
                continue
            if c.hess_constant:
                h = c.hess(x_probe)
                if h is None:
                    continue
                h = np.asarray(h, dtype=float)
                if h.ndim == 1:
                    self.const_diag.append((i, h))
                else:
                    self.const_dense.append((i, h))
            else:
                self.dynamic.append(i)

    def values(self, x):
        if self.fused_values is not None:
            return self.fused_values(x)
        return self.p.constraint_values(x)

    def values_grads(self, x):
        if self.fused_values_grads is not None:
            return self.fused_values_grads(x)
        m = len(self.p.constraints)
        vals = np.empty(m)
        grads = np.empty((m, self.n))
        for i, c in enumerate(self.p.constraints):
            vals[i] = c.value(x)
            grads[i] = c.grad(x)
        return vals, grads

    def barrier_gradient_hessian(self, x, vals, grads):
        inv = 1.0 / (-vals)                       # positive inside the domain
        grad = grads.T @ inv
        hess = (grads * (inv ** 2)[:, None]).T @ grads
        diag_add = np.zeros(self.n)
        for i, h in self.const_diag:
            diag_add += inv[i] * h
        for i, h in self.const_dense:
            hess += inv[i] * h
        for i in self.dynamic:
            h = self.p.constraints[i].hess(x)
            if h is None:
                continue
            h = np.asarray(h, dtype=float)
            if h.ndim == 1:
                diag_add += inv[i] * h
            else:
                hess += inv[i] * h
        if np.any(diag_add):
            hess[np.diag_indices(self.n)] += diag_add
        return grad, hess


def _merit(program, ws, x, t):
    vals = ws.values(x)
    if not np.all(np.isfinite(vals)) or np.any(vals >= 0):
        return np.inf, vals
    f = program.objective_value(x)
    if not np.isfinite(f):
        return np.inf, vals
    return t * f + float(np.sum(-np.log(-vals))), vals


def _solve_regularized(h, rhs, opts):
    scale = max(1.0, float(np.max(np.abs(np.diagonal(h)))))
    reg = 0.0
    eye = np.eye(h.shape[0])
    for _ in range(opts.reg_escalations + 1):
        try:
            hr = h if reg == 0.0 else h + reg * eye
            cf = scipy.linalg.cho_factor(hr, lower=True, check_finite=False)
            d = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
            # one refinement pass against the factorized system
            r = rhs - hr @ d
            d += scipy.linalg.cho_solve(cf, r, check_finite=False)
            if np.all(np.isfinite(d)):
                return d
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            pass
        reg = opts.reg0 * scale if reg == 0.0 else reg * 10.0
    return None


def strictly_feasible(program: ConvexProgram, x, margin: float = 0.0) -> bool:
    """True if x lies strictly inside the feasible region (g_i < -margin)."""
    if x is None:
        return False
    vals = program.constraint_values(x)
    if not np.all(np.isfinite(vals)):
        return False
    if not np.isfinite(program.objective_value(x)):
        return False
    return bool(np.all(vals < -margin))


def _quiet_numpy(fn):
    """Out-of-domain probes during line searches are expected and handled,
    so numeric warnings are silenced for the duration of a solve."""
    import functools

    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return fn(*args, **kwargs)

    return wrapped


@_quiet_numpy
def solve_barrier(program: ConvexProgram, opts: SolverOptions = None,
                  stop_condition=None) -> SolveResult:
    """Barrier loop: center with damped Newton, then sharpen the barrier.

    Requires a strictly feasible start (``program.x0`` or a phase-1 run by
    the caller). Returns KKT residuals and barrier dual estimates; the
    'converged' status is only claimed when the residuals meet ``tol_kkt``.
    """
    opts = opts or SolverOptions()
    m = len(program.constraints)
    labels = tuple(c.label for c in program.constraints)
    x = None if program.x0 is None else np.array(program.x0, dtype=float)
    if not strictly_feasible(program, x):
        x, info = phase1_feasible(program, x_hint=x, opts=opts)
        if x is None:
            return SolveResult(
                x=info.get("x"), objective_value=np.nan, barrier_t=0.0,
                duals=np.zeros(m), residuals={}, newton_steps=0, stages=0,
                status="infeasible", message=info.get("message", "phase 1 failed"),
                constraint_labels=labels,
                infeasible_labels=tuple(info.get("violated", ())))

    ws = _BarrierWorkspace(program)
    t = opts.t0
    total_newton = 0
    stages = 0
    status = "max_iter"
    message = ""

    for _stage in range(opts.max_stages):
        stages += 1
        # final stages are centered tightly; earlier ones only loosely,
        # which cuts Newton work without touching the exit certificates
        final_stage = m / t <= opts.tol_gap_rel * (1.0 + abs(program.objective_value(x)))
        tol_inner = opts.tol_newton if final_stage else max(opts.tol_newton, 1e-4)
        for _it in range(opts.max_newton_per_stage):
            vals, grads = ws.values_grads(x)
            fval, fgrad, fhess = program.objective(x)
            bgrad, bhess = ws.barrier_gradient_hessian(x, vals, grads)
            g = t * fgrad + bgrad
            h = bhess
            if fhess is not None:
                fh = np.asarray(fhess, dtype=float)
                if fh.ndim == 1:
                    h = h.copy()
                    h[np.diag_indices(ws.n)] += t * fh
                else:
                    h = h + t * fh
            d = _solve_regularized(h, -g, opts)
            if d is None:
                return SolveResult(x=x, objective_value=fval, barrier_t=t,
                                   duals=1.0 / (t * (-vals)), residuals={},
                                   newton_steps=total_newton, stages=stages,
                                   status="numerical_failure",
                                   message="Newton system could not be factorized",
                                   constraint_labels=labels)
            lam2 = float(-g @ d)
            if opts.on_step is not None:
                opts.on_step({"stage": stages, "t": t, "objective": fval,
                              "decrement2": lam2})
            if opts.verbose:
                print(f"[barrier] stage={stages} t={t:.3e} f0={fval:.9e} "
                      f"lam2={lam2:.3e}")
            if lam2 / 2.0 <= tol_inner:
                break
            merit0, _ = _merit(program, ws, x, t)
            gdot = float(g @ d)
            # jump inside the linearized feasible region before backtracking
            dvals = grads @ d
            blocking = dvals > 0
            step = 1.0
            if np.any(blocking):
                step = min(1.0, 0.99 * float(np.min(-vals[blocking] / dvals[blocking])))
            accepted = False
            while step >= 1e-14:
                x_try = x + step * d
                mval, _ = _merit(program, ws, x_try, t)
                if mval <= merit0 + opts.armijo_c * step * gdot:
                    x = x_try
                    accepted = True
                    break
                step *= opts.backtrack
            total_newton += 1
            if not accepted:
                break  # stalled line search; treat current point as centered
        if stop_condition is not None and stop_condition(x):
            status = "converged"
            break
        if final_stage:
            status = "converged"
            break
        t *= opts.mu

    vals = ws.values(x)
    duals = 1.0 / (t * (-vals))
    residuals = kkt_residual(program, x, duals)
    fval = program.objective_value(x)
    if status == "converged" and stop_condition is None:
        ok = (residuals["stationarity_rel"] <= opts.tol_kkt
              and residuals["primal"] <= opts.tol_kkt
              and residuals["complementarity_rel"] <= opts.tol_kkt)
        if not ok:
            status = "max_iter"
            message = "gap target met but KKT residuals above tolerance"
    return SolveResult(x=x, objective_value=fval, barrier_t=t, duals=duals,
                       residuals=residuals, newton_steps=total_newton,
                       stages=stages, status=status, message=message,
                       constraint_labels=labels)


@_quiet_numpy
def phase1_feasible(program: ConvexProgram, x_hint=None, opts: SolverOptions = None):
    """Find a strictly feasible point by minimizing the worst constraint slack.

    Minimizes s over (x, s) subject to g_i(x) <= s. Returns ``(x, info)``
    with x None when the program is infeasible; ``info['best_slack']`` then
    certifies how far from feasibility the best point remained.
    """
    opts = opts or SolverOptions()
    n = program.dimension
    if x_hint is None:
        x_hint = np.zeros(n) if program.x0 is None else np.array(program.x0, dtype=float)
    x_hint = np.asarray(x_hint, dtype=float)
    vals = program.constraint_values(x_hint)
    if not np.all(np.isfinite(vals)):
        bad = [program.constraints[i].label for i in np.nonzero(~np.isfinite(vals))[0]]
        return None, {"message": "phase 1 start outside constraint domains", "x": None,
                      "best_slack": np.inf, "violated": bad}
    if np.all(vals < -opts.phase1_margin):
        return x_hint.copy(), {"best_slack": float(np.max(vals)), "violated": []}

    s_cap = 10.0 * (1.0 + float(np.max(np.abs(vals))))

    def aug_objective(z):
        g = np.zeros(n + 1)
        g[-1] = 1.0
        return z[-1], g, None

    def wrap(c: Constraint) -> Constraint:
        def value(z):
            return c.value(z[:n]) - z[-1]

        def grad(z):
            out = np.empty(n + 1)
            out[:n] = c.grad(z[:n])
            out[-1] = -1.0
            return out

        hess = None
        if c.hess is not None:
            def hess(z, _c=c):
                h = _c.hess(z[:n])
                if h is None:
                    return None
                h = np.asarray(h, dtype=float)
                if h.ndim == 1:
                    return np.concatenate([h, [0.0]])
                out = np.zeros((n + 1, n + 1))
                out[:n, :n] = h
                return out
        return Constraint(label=c.label, value=value, grad=grad, hess=hess,
                          hess_constant=c.hess_constant)

    floor = Constraint(label="__phase1_floor__",
                       value=lambda z: -z[-1] - s_cap,
                       grad=lambda z: np.concatenate([np.zeros(n), [-1.0]]))
    aug = ConvexProgram(
        dimension=n + 1,
        objective=aug_objective,
        constraints=[wrap(c) for c in program.constraints] + [floor],
        x0=np.concatenate([x_hint, [float(np.max(vals)) + 1.0]]),
    )

    def found(z):
        v = program.constraint_values(z[:n])
        return bool(np.all(np.isfinite(v)) and np.all(v < -opts.phase1_margin))

    p1_opts = SolverOptions(t0=opts.t0, mu=opts.mu, tol_gap_rel=opts.tol_gap_rel,
                            tol_newton=opts.tol_newton, reg0=opts.reg0,
                            max_newton_per_stage=opts.max_newton_per_stage,
                            max_stages=opts.max_stages)
    res = solve_barrier(aug, p1_opts, stop_condition=found)
    x = res.x[:n]
    vals = program.constraint_values(x)
    best = float(np.max(vals))
    if np.all(np.isfinite(vals)) and best < 0:
        return x, {"best_slack": best, "violated": []}
    violated = [program.constraints[i].label for i in np.nonzero(vals >= 0)[0]]
    return None, {"message": "no strictly feasible point found", "x": x,
                  "best_slack": best, "violated": violated}


def kkt_residual(program: ConvexProgram, x, duals) -> dict:
    """Stationarity / primal feasibility / complementarity norms at (x, duals)."""
    duals = np.asarray(duals, dtype=float)
    if duals.shape != (len(program.constraints),):
        raise ValueError("dual vector length must match the constraint count")
    _, fgrad, _ = program.objective(x)
    vals = np.empty(len(program.constraints))
    lagr = np.array(fgrad, dtype=float)
    gnorm = float(np.max(np.abs(fgrad))) if len(fgrad) else 0.0
    for i, c in enumerate(program.constraints):
        vals[i] = c.value(x)
        gi = c.grad(x)
        lagr += duals[i] * gi
        gnorm = max(gnorm, float(duals[i]) * float(np.max(np.abs(gi))))
    stationarity = float(np.max(np.abs(lagr)))
    fval = program.objective_value(x)
    comp = float(np.max(np.abs(duals * vals)))
    return {
        "stationarity": stationarity,
        "stationarity_rel": stationarity / (1.0 + gnorm),
        "primal": float(max(0.0, np.max(vals))),
        "complementarity": comp,
        "complementarity_rel": comp / (1.0 + abs(fval)),
        "dual_min": float(np.min(duals)) if len(duals) else 0.0,
    }


def gradient_errors(func, x, step_rel: float = 1e-6):
    """Relative error between an analytic gradient and central differences.

    ``func(x)`` must return at least (value, gradient). Used by the
    numerical-hygiene test suites.
    """
    x = np.asarray(x, dtype=float)
    out = func(x)
    grad = np.asarray(out[1], dtype=float)
    fd = np.empty_like(grad)
    for j in range(len(x)):
        h = step_rel * (1.0 + abs(x[j]))
        xp = x.copy(); xp[j] += h
        xm = x.copy(); xm[j] -= h
        fd[j] = (func(xp)[0] - func(xm)[0]) / (2.0 * h)
    scale = np.maximum(1.0, np.abs(fd))
    return np.abs(grad - fd) / scale


def hessian_errors(func, x, step_rel: float = 1e-6):
    """Relative error between an analytic Hessian and differenced gradients."""
    x = np.asarray(x, dtype=float)
    out = func(x)
    h = out[2]
    n = len(x)
    if h is None:
        h = np.zeros((n, n))
    else:
        h = np.asarray(h, dtype=float)
        if h.ndim == 1:
            h = np.diag(h)
    fd = np.empty((n, n))
    for j in range(n):
        hj = step_rel * (1.0 + abs(x[j]))
        xp = x.copy(); xp[j] += hj
        xm = x.copy(); xm[j] -= hj
        fd[:, j] = (np.asarray(func(xp)[1], dtype=float)
                    - np.asarray(func(xm)[1], dtype=float)) / (2.0 * hj)
    fd = (fd + fd.T) / 2.0
    scale = max(1.0, float(np.max(np.abs(fd))))
    return np.abs(h - fd) / scale
