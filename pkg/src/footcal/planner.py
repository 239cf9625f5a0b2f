"""Whole-body CoP-tracking trajectories for one double-support stance.

Short direct-collocation segments are solved one after another; each pulls
the modeled CoP toward the current landmark while the feet stay put, the CoP
stays inside the sensing polygon, the legs keep clear of each other, and the
joints stay within limits. The landmark switches when the CoP is close
enough or stops approaching.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .model import (DoubleSupportConfig, RobotModel, collision_distances, com_jacobian,
                    fk_arrays, foot_transform_residual, half_planes, polygon_area,
                    polygon_margin, sensing_polygon)
from .numopt import CONVERGED, NlpProblem, SolverSettings, nlp_solve

logger = logging.getLogger(__name__)

PLANNER_SOLVER = SolverSettings(gtol=1e-9, xtol=1e-10, ftol=1e-10, max_iter=60,
                                feasibility_tol=1e-7, penalty_init=100.0, max_outer=10)


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 5                       # states per segment, start state included
    cop_weight: tuple[float, float] = (100.0, 100.0)
    smooth_weight: float = 1.0
    d_min: float = 0.005
    arrival_radius: float = 0.005
    max_steps: int = 60
    inset: float = 0.25                    # fraction of foot length
    cop_margin: float = 0.002
    max_transition: float = 0.05           # rad per step
    progress_tol: float = 1e-4             # m; smaller approach counts as stalled
    posture_weight: float = 0.0
    solver: SolverSettings = PLANNER_SOLVER

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if min(self.cop_weight) < 0 or self.smooth_weight < 0:
            raise ValueError("weights must be non-negative")
        if not (self.d_min > 0 and self.arrival_radius > 0):
            raise ValueError("d_min and arrival radius must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class Trajectory:
    q: np.ndarray           # (M+1, n)
    u: np.ndarray           # (M, n), q[i+1] = q[i] + u[i]
    cop: np.ndarray         # (M+1, 2)
    landmark: np.ndarray    # (M+1,) target index being pursued
    step: np.ndarray        # (M+1,) planning step that produced the state
    summary: dict = field(default_factory=dict)
    complete: bool = True
    visits: list = field(default_factory=list)

    def __len__(self):
        return len(self.q)


@dataclass(frozen=True)
class LandmarkSet:
    points: np.ndarray      # (4, 2) CCW
    midpoints: np.ndarray   # (4, 2); midpoints[i] lies between points[i] and points[i+1]

    def targets_from(self, cop) -> tuple[np.ndarray, int]:
        """Visiting order: nearest edge midpoint, then the 4 landmarks CCW."""
        k = int(np.argmin(np.linalg.norm(self.midpoints - np.asarray(cop), axis=1)))
        order = [(k + 1 + i) % 4 for i in range(4)]
        return np.vstack([self.midpoints[k], self.points[order]]), k


def make_landmarks(model: RobotModel, ds: DoubleSupportConfig, inset: float = 0.25) -> LandmarkSet:
    """Front/rear landmarks on each foot's centerline, inset from the sensing edges."""
    pts = []
    for side, T in (("left", None), ("right", ds.foot_transform)):
        sensing = model.foot(side).sensing
        lo, hi = sensing.min(axis=0), sensing.max(axis=0)
        yc = 0.5 * (lo[1] + hi[1])
        d = inset * model.foot_length
        local = np.array([[hi[0] - d, yc], [lo[0] + d, yc]])
        if T is not None:
            local = local @ T.rotation[:2, :2].T + T.translation[:2]
        pts.extend(local)
    pts = np.array(pts)
    centre = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - centre[1], pts[:, 0] - centre[0])
    pts = pts[np.argsort(ang, kind="stable")]
    if polygon_area(pts) < 0:
        pts = pts[::-1]
    mids = 0.5 * (pts + np.roll(pts, -1, axis=0))
    return LandmarkSet(pts, mids)


class _StanceEval:
    """Per-state kinematic quantities, cached by joint vector bytes."""

    def __init__(self, model: RobotModel, ds: DoubleSupportConfig, cfg: PlannerConfig):
        self.model = model
        self.ds = ds
        self.cfg = cfg
        poly = sensing_polygon(model, ds)
        self.normals, self.offsets = half_planes(poly)
        self.polygon = poly
        self._cache: dict[bytes, tuple] = {}

    def state(self, q):
        key = q.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        m = self.model
        Rs, ps = fk_arrays(m, q)
        com, Jc = com_jacobian(m, q, Rs, ps)
        tf, Jtf = foot_transform_residual(m, q, self.ds.foot_transform, Rs, ps, jacobian=True)
        d, Jd = collision_distances(m, q, Rs, ps, jacobian=True)
        out = (com[:2], Jc[:2], tf, Jtf, d, Jd)
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = out
        return out

    def margins(self, c):
        return self.offsets - self.normals @ c - self.cfg.cop_margin


def _segment_problem(ev: _StanceEval, q_start, target, u_prev, q_ref=None) -> NlpProblem:
    model, cfg = ev.model, ev.cfg
    n = model.n_joints
    K = cfg.horizon - 1
    qc = np.sqrt(np.asarray(cfg.cop_weight, dtype=float))
    qu = np.sqrt(cfg.smooth_weight)
    qp = np.sqrt(cfg.posture_weight)
    n_faces = len(ev.offsets)
    n_pairs = len(model.collision_pairs)

    def states(x):
        return x.reshape(K, n)

    def transitions(x):
        Q = np.vstack([q_start, states(x)])
        return np.diff(Q, axis=0)

    def cost(x):
        Q = states(x)
        U = transitions(x)
        parts = []
        for i in range(K):
            parts.append(qc * (ev.state(Q[i])[0] - target))
        dU = np.diff(np.vstack([u_prev, U]), axis=0)
        parts.append(qu * dU.reshape(-1))
        if qp > 0:
            parts.append(qp * (Q - q_ref).reshape(-1))
        return np.concatenate(parts)

    # d(dU)/dx is constant: dU[i] = q[i+1] - 2 q[i] + q[i-1] in state terms
    D = np.zeros((K, K))
    for i in range(K):
        D[i, i] = 1.0
        if i >= 1:
            D[i, i - 1] = -2.0
        if i >= 2:
            D[i, i - 2] = 1.0
    smooth_jac = qu * np.kron(D, np.eye(n))
    diff_jac = np.kron(np.eye(K) - np.eye(K, k=-1), np.eye(n))

    def cost_jac(x):
        Q = states(x)
        J = np.zeros((2 * K, K * n))
        for i in range(K):
            J[2 * i:2 * i + 2, i * n:(i + 1) * n] = qc[:, None] * ev.state(Q[i])[1]
        blocks = [J, smooth_jac]
        if qp > 0:
            blocks.append(qp * np.eye(K * n))
        return np.vstack(blocks)

    def eq(x):
        Q = states(x)
        return np.concatenate([ev.state(Q[i])[2] for i in range(K)])

    def eq_jac(x):
        Q = states(x)
        J = np.zeros((6 * K, K * n))
        for i in range(K):
            J[6 * i:6 * i + 6, i * n:(i + 1) * n] = ev.state(Q[i])[3]
        return J

    def ineq(x):
        Q = states(x)
        U = transitions(x)
        parts = []
        for i in range(K):
            c, _, _, _, d, _ = ev.state(Q[i])
            parts.append(ev.margins(c))
            parts.append(d - cfg.d_min)
        parts.append((cfg.max_transition - U).reshape(-1))
        parts.append((cfg.max_transition + U).reshape(-1))
        return np.concatenate(parts)

    def ineq_jac(x):
        Q = states(x)
        rows = n_faces + n_pairs
        J = np.zeros((K * rows, K * n))
        for i in range(K):
            _, Jc, _, _, _, Jd = ev.state(Q[i])
            J[i * rows:i * rows + n_faces, i * n:(i + 1) * n] = -ev.normals @ Jc
            J[i * rows + n_faces:(i + 1) * rows, i * n:(i + 1) * n] = Jd
        return np.vstack([J, -diff_jac, diff_jac])

    x0 = np.tile(q_start, K)
    return NlpProblem(cost=cost, x0=x0, equalities=[eq], inequalities=[ineq],
                      lower=np.tile(model.q_min, K), upper=np.tile(model.q_max, K),
                      cost_jacobian=cost_jac, eq_jacobian=eq_jac, ineq_jacobian=ineq_jac,
                      settings=cfg.solver)


@dataclass
class Segment:
    q: np.ndarray       # (N, n) including the start state
    u: np.ndarray       # (N-1, n)
    cop: np.ndarray     # (N, 2)
    progress: bool
    report: object


def _chain(q_start, states):
    """Rebuild states as q[i] = q[i-1] + u[i-1] so replay is bit-exact."""
    qs = [np.array(q_start, dtype=float)]
    us = []
    for s in states:
        u = s - qs[-1]
        us.append(u)
        qs.append(qs[-1] + u)
    return np.array(qs), np.array(us).reshape(-1, len(q_start))


def plan_segment(model: RobotModel, ds: DoubleSupportConfig, q_start, target,
                 cfg: PlannerConfig = PlannerConfig(), u_prev=None, _ev=None) -> Segment:
    """Optimize the next ``horizon - 1`` states toward ``target``.

    A segment that is infeasible or does not bring the CoP strictly closer
    comes back with ``progress=False`` and the start state repeated.
    """
    ev = _ev or _StanceEval(model, ds, cfg)
    q_start = model.check_q(q_start)
    target = np.asarray(target, dtype=float)
    if u_prev is None:
        u_prev = np.zeros(model.n_joints)
    problem = _segment_problem(ev, q_start, target, u_prev, q_ref=q_start)
    rep = nlp_solve(problem)
    K = cfg.horizon - 1
    c_start = ev.state(q_start)[0]
    d_start = float(np.linalg.norm(c_start - target))
    Q, U = _chain(q_start, rep.x.reshape(K, -1))
    cops = np.array([ev.state(q)[0] for q in Q])
    d_end = float(np.linalg.norm(cops[-1] - target))
    feasible = rep.reason == CONVERGED
    if not feasible or not d_end < d_start:
        logger.debug("segment without progress (%s, %.4f -> %.4f)", rep.reason, d_start, d_end)
        Q = np.repeat(q_start[None, :], cfg.horizon, axis=0)
        U = np.zeros((K, model.n_joints))
        cops = np.repeat(c_start[None, :], cfg.horizon, axis=0)
        return Segment(Q, U, cops, False, rep)
    return Segment(Q, U, cops, True, rep)


def reach_double_support(model: RobotModel, ds: DoubleSupportConfig,
                         cfg: PlannerConfig = PlannerConfig(), q_seed=None) -> np.ndarray:
    """A posture standing in ``ds``: close to the seed, CoP centred, all constraints met."""
    ev = _StanceEval(model, ds, cfg)
    q0 = model.q_nominal if q_seed is None else model.check_q(q_seed)
    lm = make_landmarks(model, ds, cfg.inset)
    centre = lm.points.mean(axis=0)
    n = model.n_joints

    def cost(q):
        return np.concatenate([0.1 * (q - q0), ev.state(q)[0] - centre])

    def cost_jac(q):
        return np.vstack([0.1 * np.eye(n), ev.state(q)[1]])

    def ineq(q):
        c, _, _, _, d, _ = ev.state(q)
        return np.concatenate([ev.margins(c), d - cfg.d_min])

    def ineq_jac(q):
        _, Jc, _, _, _, Jd = ev.state(q)
        return np.vstack([-ev.normals @ Jc, Jd])

    settings = replace(cfg.solver, max_iter=200, max_outer=14)
    problem = NlpProblem(cost=cost, x0=q0, equalities=[lambda q: ev.state(q)[2]],
                         inequalities=[ineq], lower=model.q_min, upper=model.q_max,
                         cost_jacobian=cost_jac, eq_jacobian=lambda q: ev.state(q)[3],
                         ineq_jacobian=ineq_jac, settings=settings)
    rep = nlp_solve(problem)
    if rep.reason != CONVERGED:
        raise PlanningError(
            f"cannot reach stance dx={ds.dx:.3f} dy={ds.dy:.3f} dtheta={ds.dtheta:.3f}: "
            f"{rep.reason}, violation {rep.max_violation:.2e}")
    return rep.x


def plan_trajectory(model: RobotModel, ds: DoubleSupportConfig, q_init,
                    cfg: PlannerConfig = PlannerConfig()) -> Trajectory:
    """Receding-horizon landmark tour around the sensing polygon."""
    ev = _StanceEval(model, ds, cfg)
    q = model.check_q(q_init).copy()
    lm = make_landmarks(model, ds, cfg.inset)
    c = ev.state(q)[0]
    targets, first_edge = lm.targets_from(c)

    qs, us, cops, marks, steps = [q.copy()], [], [c.copy()], [0], [0]
    visits = []
    u_prev = np.zeros(model.n_joints)
    n = 0
    s = 0
    d_prev = float(np.linalg.norm(c - targets[n]))
    complete = True
    while n < len(targets):
        if s >= cfg.max_steps:
            complete = False
            break
        seg = plan_segment(model, ds, q, targets[n], cfg, u_prev, _ev=ev)
        s += 1
        if seg.progress:
            for i in range(1, len(seg.q)):
                qs.append(seg.q[i])
                us.append(seg.u[i - 1])
                cops.append(seg.cop[i])
                marks.append(n)
                steps.append(s)
            q = seg.q[-1]
            u_prev = seg.u[-1]
        else:
            u_prev = np.zeros(model.n_joints)
        c = ev.state(q)[0]
        d = float(np.linalg.norm(c - targets[n]))
        arrived = d < cfg.arrival_radius
        stalled = d_prev - d < cfg.progress_tol
        if arrived or stalled:
            visits.append({"step": s, "landmark": n, "target": targets[n].tolist(),
                           "d_prev": d_prev, "d": d,
                           "reason": "arrived" if arrived else "stalled"})
            n += 1
            if n < len(targets):
                d = float(np.linalg.norm(c - targets[n]))
        d_prev = d

    traj = Trajectory(q=np.array(qs), u=np.array(us).reshape(-1, model.n_joints),
                      cop=np.array(cops), landmark=np.array(marks), step=np.array(steps),
                      complete=complete, visits=visits)
    traj.summary = {
        "targets": targets.tolist(),
        "first_edge": first_edge,
        "landmarks": lm.points.tolist(),
        "planning_steps": s,
        "complete": complete,
    }
    return traj


@dataclass
class Certificate:
    ok: bool
    min_cop_margin: float
    max_limit_violation: float
    min_capsule_distance: float
    max_tf_residual: float
    max_transition: float
    transitions_exact: bool
    switches_ok: bool
    failures: list

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def certify(model: RobotModel, ds: DoubleSupportConfig, traj: Trajectory,
            cfg: PlannerConfig = PlannerConfig(), tol: float = 1e-6) -> Certificate:
    """Re-check every emitted state with plain model calls, not the solver's."""
    from .model import foot_transform, modeled_cop, rotation_log

    poly = sensing_polygon(model, ds)
    failures = []
    margins, lim, caps, tfs = [], [], [], []
    for i, q in enumerate(traj.q):
        c = modeled_cop(model, q)
        margins.append(polygon_margin(c, poly))
        lim.append(max(float(np.max(model.q_min - q)), float(np.max(q - model.q_max)), 0.0))
        caps.append(float(np.min(collision_distances(model, q))))
        T = foot_transform(model, q)
        dT = np.concatenate([T.translation - ds.foot_transform.translation,
                             rotation_log(ds.foot_transform.rotation.T @ T.rotation)])
        tfs.append(float(np.linalg.norm(dT)))
        if not np.allclose(c, traj.cop[i], atol=1e-12):
            failures.append(f"state {i}: stored CoP disagrees with the model")
    margins = np.array(margins)
    if margins.min() < cfg.cop_margin - tol:
        failures.append(f"CoP margin {margins.min():.2e} below {cfg.cop_margin}")
    if max(lim) > tol:
        failures.append(f"joint limit violated by {max(lim):.2e}")
    if min(caps) < cfg.d_min - tol:
        failures.append(f"capsule distance {min(caps):.4f} below d_min")
    if max(tfs) >= 1e-6:
        failures.append(f"foot transform residual {max(tfs):.2e}")
    replay = [traj.q[0]]
    for u in traj.u:
        replay.append(replay[-1] + u)
    exact = bool(np.array_equal(np.array(replay), traj.q))
    if not exact:
        failures.append("transition replay is not bit-exact")
    max_u = float(np.abs(traj.u).max(initial=0.0))
    if max_u > cfg.max_transition + tol:
        failures.append(f"transition {max_u:.4f} exceeds bound")
    switches_ok = all(v["d"] < cfg.arrival_radius or v["d_prev"] - v["d"] < cfg.progress_tol
                      for v in traj.visits)
    if not switches_ok:
        failures.append("landmark switch without arrival or stall")
    return Certificate(not failures, float(margins.min()), float(max(lim)), float(min(caps)),
                       float(max(tfs)), max_u, exact, switches_ok, failures)
