"""Small dense solvers shared by the fitting and planning code.

Two drivers live here:

* :func:`nls_solve` -- damped Gauss-Newton (Levenberg-Marquardt style) on a
  residual vector, with optional box bounds handled by projection.
* :func:`nlp_solve` -- a quadratic-penalty outer loop with first-order
  multiplier shifts, whose inner problem is an :func:`nls_solve` on the stacked
  cost and penalty residuals.

Costs are always sums of squares, ``cost = r @ r``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

Vector = np.ndarray
VectorFn = Callable[[np.ndarray], np.ndarray]

CONVERGED = "converged"
MAX_ITERATIONS = "max-iterations"
STALLED = "stalled"

_MAX_DAMPING = 1e16


class InvalidProblemError(ValueError):
    """Raised when a problem cannot be evaluated at its starting point."""


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances and iteration caps; the pipeline config overrides these."""

    gtol: float = 1e-8
    xtol: float = 1e-10
    ftol: float = 1e-12
    max_iter: int = 200
    damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.5
    fd_step: float = 1e-6
    feasibility_tol: float = 1e-6
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    max_outer: int = 12

    def __post_init__(self):
        for name in ("gtol", "xtol", "ftol", "damping", "fd_step", "feasibility_tol", "penalty_init"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.max_iter < 1 or self.max_outer < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.damping_up <= 1 or not 0 < self.damping_down < 1:
            raise ValueError("damping factors must satisfy up > 1 > down > 0")
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")


DEFAULT_SETTINGS = SolverSettings()


@dataclass
class NlsProblem:
    residual: VectorFn
    x0: Vector
    jacobian: VectorFn | None = None
    settings: SolverSettings = DEFAULT_SETTINGS
    lower: Vector | None = None
    upper: Vector | None = None

    def __post_init__(self):
        self.x0 = np.array(self.x0, dtype=float).reshape(-1)
        n = self.x0.size
        self.lower = np.full(n, -np.inf) if self.lower is None else np.broadcast_to(
            np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.broadcast_to(
            np.asarray(self.upper, dtype=float), (n,)).copy()
        if np.any(self.lower > self.upper):
            raise InvalidProblemError("lower bound exceeds upper bound")


@dataclass
class NlpProblem:
    """Constrained problem ``min ||cost(x)||^2`` s.t. ``eq(x) = 0``, ``ineq(x) >= 0``.

    The cost is supplied in least-squares form: ``cost`` returns the residual
    vector whose squared norm is the scalar objective. Each entry of
    ``equalities``/``inequalities`` returns a scalar or a vector; the
    optional ``*_jacobian`` callables return the Jacobian of the whole stacked
    vector.
    """

    cost: VectorFn
    x0: Vector
    equalities: Sequence[VectorFn] = ()
    inequalities: Sequence[VectorFn] = ()
    lower: Vector | None = None
    upper: Vector | None = None
    cost_jacobian: VectorFn | None = None
    eq_jacobian: VectorFn | None = None
    ineq_jacobian: VectorFn | None = None
    settings: SolverSettings = DEFAULT_SETTINGS

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        n = x0.size
        self.lower = np.full(n, -np.inf) if self.lower is None else np.broadcast_to(
            np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.broadcast_to(
            np.asarray(self.upper, dtype=float), (n,)).copy()
        if np.any(self.lower > self.upper):
            raise InvalidProblemError("lower bound exceeds upper bound")
        self.x0 = np.clip(x0, self.lower, self.upper)

    def eq(self, x):
        if not self.equalities:
            return np.zeros(0)
        return np.concatenate([np.atleast_1d(np.asarray(h(x), dtype=float)) for h in self.equalities])

    def ineq(self, x):
        if not self.inequalities:
            return np.zeros(0)
        return np.concatenate([np.atleast_1d(np.asarray(g(x), dtype=float)) for g in self.inequalities])

    def violation(self, x) -> float:
        h = self.eq(x)
        g = self.ineq(x)
        v = 0.0
        if h.size:
            v = max(v, float(np.max(np.abs(h))))
        if g.size:
            v = max(v, float(np.max(-g, initial=0.0)))
        return v


@dataclass
class SolveReport:
    x: Vector
    cost: float
    iterations: int
    reason: str
    max_violation: float = 0.0
    cost_history: list[float] = field(default_factory=list)
    violation_history: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.reason == CONVERGED


def finite_diff_jacobian(f: VectorFn, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with per-coordinate step ``step * max(1, |x_j|)``."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=float).reshape(-1)
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        fp = np.atleast_1d(np.asarray(f(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(f(xm), dtype=float))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise InvalidProblemError(f"non-finite function value when perturbing coordinate {j}")
        jac[:, j] = (fp - fm) / (2.0 * h)
    return jac


def _eval_residual(fn, x):
    r = np.atleast_1d(np.asarray(fn(x), dtype=float))
    return r


def nls_solve(problem: NlsProblem) -> SolveReport:
    """Minimize ``||residual(x)||^2`` by damped Gauss-Newton.

    Damping is Marquardt-scaled (``lambda * diag(J^T J)``), multiplied by
    ``damping_up`` after a rejected trial and by ``damping_down`` after an
    accepted one. Only cost-decreasing steps are accepted, so the recorded
    ``cost_history`` is non-increasing.
    """
    s = problem.settings
    lo, hi = problem.lower, problem.upper
    x = np.clip(problem.x0, lo, hi)
    r = _eval_residual(problem.residual, x)
    if not np.all(np.isfinite(r)):
        raise InvalidProblemError("residual is not finite at the initial vector")
    jac_fn = problem.jacobian or (lambda z: finite_diff_jacobian(problem.residual, z, s.fd_step))

    cost = float(r @ r)
    history = [cost]
    lam = s.damping
    reason = MAX_ITERATIONS
    it = 0
    while it < s.max_iter:
        if cost == 0.0:
            reason = CONVERGED
            break
        J = np.asarray(jac_fn(x), dtype=float).reshape(r.size, x.size)
        g = J.T @ r
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        if 2.0 * np.linalg.norm(g[free]) <= s.gtol:
            reason = CONVERGED
            break
        Jf = J[:, free]
        A = Jf.T @ Jf
        diag = np.diag(A).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(initial=0.0), 1e-300))
        gf = g[free]
        it += 1
        accepted = False
        while lam <= _MAX_DAMPING:
            try:
                dx_free = np.linalg.solve(A + lam * np.diag(diag), -gf)
            except np.linalg.LinAlgError:
                lam *= s.damping_up
                continue
            dx = np.zeros_like(x)
            dx[free] = dx_free
            x_new = np.clip(x + dx, lo, hi)
            r_new = _eval_residual(problem.residual, x_new)
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if cost_new < cost:
                accepted = True
                break
            lam *= s.damping_up
        if not accepted:
            reason = STALLED
            break
        step = float(np.linalg.norm(x_new - x))
        decrease = cost - cost_new
        x, r, cost_old, cost = x_new, r_new, cost, cost_new
        history.append(cost)
        lam = max(lam * s.damping_down, 1e-15)
        if step <= s.xtol * (s.xtol + np.linalg.norm(x)):
            reason = CONVERGED
            break
        if decrease <= s.ftol * cost_old:
            reason = CONVERGED
            break
    return SolveReport(x=x, cost=cost, iterations=it, reason=reason, cost_history=history)


def _stack_jacobian(jac_fn, fn, x, size, step):
    if size == 0:
        return np.zeros((0, x.size))
    if jac_fn is not None:
        return np.asarray(jac_fn(x), dtype=float).reshape(size, x.size)
    return finite_diff_jacobian(fn, x, step)


def nlp_solve(problem: NlpProblem) -> SolveReport:
    """Solve a bound- and nonlinearly-constrained least-squares problem.

    Each outer stage minimizes

        ||cost||^2 + rho ||h + lam/rho||^2 + rho ||min(0, g - nu/rho)||^2

    over the box, then shifts the multipliers (``lam += rho h``,
    ``nu = max(0, nu - rho g)``). A stage whose violation exceeds the previous
    accepted stage is discarded and retried with a larger ``rho``, so the
    reported ``violation_history`` never increases.
    """
    s = problem.settings
    x = problem.x0.copy()
    f0 = _eval_residual(problem.cost, x)
    if not np.all(np.isfinite(f0)):
        raise InvalidProblemError("cost is not finite at the initial vector")
    h0 = problem.eq(x)
    g0 = problem.ineq(x)
    if not (np.all(np.isfinite(h0)) and np.all(np.isfinite(g0))):
        raise InvalidProblemError("constraints are not finite at the initial vector")

    lam = np.zeros(h0.size)
    nu = np.zeros(g0.size)
    rho = s.penalty_init
    n_eq, n_in = h0.size, g0.size
    fd = s.fd_step

    def make_inner(lam, nu, rho):
        sq = math.sqrt(rho)

        def residual(z):
            parts = [_eval_residual(problem.cost, z)]
            if n_eq:
                parts.append(sq * (problem.eq(z) + lam / rho))
            if n_in:
                parts.append(sq * np.minimum(0.0, problem.ineq(z) - nu / rho))
            return np.concatenate(parts)

        def jacobian(z):
            fz = _eval_residual(problem.cost, z)
            blocks = [_stack_jacobian(problem.cost_jacobian, problem.cost, z, fz.size, fd)]
            if n_eq:
                blocks.append(sq * _stack_jacobian(problem.eq_jacobian, problem.eq, z, n_eq, fd))
            if n_in:
                active = (problem.ineq(z) - nu / rho) < 0.0
                Jg = _stack_jacobian(problem.ineq_jacobian, problem.ineq, z, n_in, fd)
                blocks.append(sq * Jg * active[:, None])
            return np.vstack(blocks)

        return residual, jacobian

    best_x = x
    best_v = problem.violation(x)
    prev_v = None
    violation_history: list[float] = []
    cost_history: list[float] = []
    total_iter = 0
    reason = STALLED
    inner_reason = None
    for _ in range(s.max_outer):
        residual, jacobian = make_inner(lam, nu, rho)
        rep = nls_solve(NlsProblem(residual=residual, x0=x, jacobian=jacobian, settings=s,
                                   lower=problem.lower, upper=problem.upper))
        total_iter += rep.iterations
        v = problem.violation(rep.x)
        if prev_v is not None and v > prev_v:
            logger.debug("outer stage rejected: violation %.3e > %.3e, rho %.1e", v, prev_v, rho)
            rho *= s.penalty_growth
            continue
        x = rep.x
        inner_reason = rep.reason
        violation_history.append(v)
        cost_history.append(float(np.sum(_eval_residual(problem.cost, x) ** 2)))
        if v <= best_v or not np.isfinite(best_v):
            best_x, best_v = x, v
        if v <= s.feasibility_tol and rep.reason != MAX_ITERATIONS:
            reason = CONVERGED
            break
        if n_eq:
            lam = lam + rho * problem.eq(x)
        if n_in:
            nu = np.maximum(0.0, nu - rho * problem.ineq(x))
        if prev_v is not None and v > 0.25 * prev_v:
            rho *= s.penalty_growth
        prev_v = v
    else:
        reason = MAX_ITERATIONS if best_v <= s.feasibility_tol else STALLED

    if reason == CONVERGED:
        out_x, out_v = x, violation_history[-1]
    else:
        out_x, out_v = best_x, best_v
    final_cost = float(np.sum(_eval_residual(problem.cost, out_x) ** 2))
    if not math.isfinite(final_cost):
        raise InvalidProblemError("cost became non-finite")
    logger.debug("nlp_solve: %s after %d inner iterations, violation %.2e (last inner: %s)",
                 reason, total_iter, out_v, inner_reason)
    return SolveReport(x=out_x, cost=final_cost, iterations=total_iter, reason=reason,
                       max_violation=out_v, cost_history=cost_history,
                       violation_history=violation_history)


def min_norm_nonnegative(A, b) -> np.ndarray:
    """Minimum-Euclidean-norm ``x >= 0`` with ``A x = b``.

    Solved as a least-distance program through its NNLS dual, then polished
    by an exact minimum-norm solve on the support so the equalities hold to
    machine precision. Raises ``ValueError`` when no non-negative solution
    exists.
    """
    from scipy.optimize import nnls

    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    # LDP form: min ||x|| s.t. G x >= h, with the equalities split in two.
    G = np.vstack([A, -A, np.eye(n)])
    h = np.concatenate([b, -b, np.zeros(n)])
    E = np.vstack([G.T, h[None, :]])
    e = np.zeros(n + 1)
    e[-1] = 1.0
    u, _ = nnls(E, e, maxiter=50 * E.shape[1])
    res = E @ u - e
    if abs(res[-1]) < 1e-14:
        raise ValueError("no non-negative solution of the balance equations")
    x = -res[:n] / res[-1]
    x = np.maximum(x, 0.0)

    scale = max(np.abs(x).max(initial=0.0), 1e-300)
    support = x > 1e-9 * scale
    for _ in range(n):
        As = A[:, support]
        xs, *_ = np.linalg.lstsq(As, b, rcond=None)
        if np.all(xs >= 0):
            out = np.zeros(n)
            out[support] = xs
            if np.allclose(A @ out, b, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(b).max())):
                return out
            break
        support[np.flatnonzero(support)[np.argmin(xs)]] = False
    if not np.allclose(A @ x, b, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(b).max())):
        raise ValueError("no non-negative solution of the balance equations")
    return x
