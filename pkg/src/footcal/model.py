"""Quasi-static kinematic biped: forward kinematics, CoM/CoP, capsules, feet.

The left sole is the kinematic root and is pinned to the world frame, so
"world" and "left-foot frame" coincide everywhere in this package. The right
foot pose relative to the left is described by ``(dx, dy, dtheta)``: the right
sole origin sits at ``(dx, -dy, 0)`` with yaw ``dtheta``, so ``dy`` is the
(positive) lateral foot spacing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

ROBOT_SCHEMA = "footcal.robot/1"
GRAVITY = 9.81


class ModelError(ValueError):
    """Invalid robot description or query."""


def skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def axis_rotation(axis, angle: float) -> np.ndarray:
    """Rotation matrix about a unit ``axis`` (Rodrigues)."""
    x, y, z = axis
    c = np.cos(angle)
    s = np.sin(angle)
    t = 1.0 - c
    return np.array([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])


def rpy_matrix(roll, pitch, yaw):
    return (axis_rotation((0.0, 0.0, 1.0), yaw) @ axis_rotation((0.0, 1.0, 0.0), pitch)
            @ axis_rotation((1.0, 0.0, 0.0), roll))


def rotation_log(R) -> np.ndarray:
    """Rotation vector of ``R`` (inverse of the exponential map)."""
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        return 0.5 * w * (1.0 + theta * theta / 6.0)
    if np.pi - theta < 1e-4:
        from scipy.spatial.transform import Rotation
        return Rotation.from_matrix(R).as_rotvec()
    return theta / (2.0 * np.sin(theta)) * w


def right_jacobian_inverse(phi) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + coef * (K @ K)


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        p = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ModelError("pose rotation must be a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def planar(cls, x: float, y: float, yaw: float) -> "Pose":
        return cls(axis_rotation((0.0, 0.0, 1.0), yaw), np.array([x, y, 0.0]))

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.translation + self.rotation @ other.translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def orthonormalized(self) -> "Pose":
        u, _, vt = np.linalg.svd(self.rotation)
        return Pose(u @ vt, self.translation)

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True)
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float
    link: int = -1
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float).reshape(3))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float).reshape(3))
        if not self.radius > 0:
            raise ModelError("capsule radius must be positive")


@dataclass(frozen=True)
class Link:
    name: str
    parent: int
    origin: Pose
    mass: float
    com: np.ndarray
    axis: np.ndarray | None = None
    joint: int | None = None


@dataclass(frozen=True)
class FootLayout:
    """Per-foot geometry in the foot (sole) frame."""

    link: int
    sensors: np.ndarray   # (4, 2), cell order 1..4
    support: np.ndarray   # support polygon, CCW
    sensing: np.ndarray   # sensing polygon, CCW


@dataclass(frozen=True, eq=False)
class RobotModel:
    name: str
    links: tuple[Link, ...]
    q_min: np.ndarray
    q_max: np.ndarray
    capsules: tuple[Capsule, ...]
    collision_pairs: tuple[tuple[int, int], ...]
    left_foot: FootLayout
    right_foot: FootLayout
    foot_length: float
    q_nominal: np.ndarray
    joint_names: tuple[str, ...] = ()
    gravity: float = GRAVITY

    def __post_init__(self):
        if self.links[0].parent != -1:
            raise ModelError("first link must be the root")
        for i, link in enumerate(self.links[1:], start=1):
            if not 0 <= link.parent < i:
                raise ModelError(f"link {link.name!r} must come after its parent")
            if (link.axis is None) != (link.joint is None):
                raise ModelError(f"link {link.name!r}: axis and joint index go together")
        joints = sorted(l.joint for l in self.links if l.joint is not None)
        if joints != list(range(len(joints))):
            raise ModelError("joint indices must be a permutation of 0..n-1")
        if self.q_min.shape != (len(joints),) or self.q_max.shape != (len(joints),):
            raise ModelError("joint limit vectors must match the joint count")
        if np.any(self.q_min >= self.q_max):
            raise ModelError("q_min must be strictly below q_max")
        for foot in (self.left_foot, self.right_foot):
            if foot.sensors.shape != (4, 2):
                raise ModelError("each foot needs exactly 4 sensor points")
            if not is_convex_polygon(foot.sensors):
                raise ModelError("sensor points must form a convex quadrilateral")
            if not all(point_in_polygon(v, foot.support, tol=1e-12) for v in foot.sensing):
                raise ModelError("sensing polygon must lie inside the support polygon")
        if self.gravity <= 0:
            raise ModelError("gravity must be positive")

    @property
    def n_joints(self) -> int:
        return self.q_min.size

    @cached_property
    def masses(self) -> np.ndarray:
        return np.array([l.mass for l in self.links])

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def weight(self) -> float:
        return self.total_mass * self.gravity

    @cached_property
    def joint_links(self) -> np.ndarray:
        """``joint_links[j]`` is the link whose joint is ``q[j]``."""
        out = np.empty(self.n_joints, dtype=int)
        for i, l in enumerate(self.links):
            if l.joint is not None:
                out[l.joint] = i
        return out

    @cached_property
    def ancestor_mask(self) -> np.ndarray:
        """Boolean (links, joints): joint moves the link."""
        mask = np.zeros((len(self.links), self.n_joints), dtype=bool)
        for i, l in enumerate(self.links):
            if l.parent >= 0:
                mask[i] = mask[l.parent]
            if l.joint is not None:
                mask[i, l.joint] = True
        return mask

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.size != self.n_joints:
            raise ModelError(f"expected {self.n_joints} joint values, got {q.size}")
        return q

    def foot(self, side: str) -> FootLayout:
        return {"left": self.left_foot, "right": self.right_foot}[side]


# -- geometry helpers ---------------------------------------------------------

def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise hull vertices (monotone chain), collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).round(15))))
    if len(pts) < 3:
        raise ModelError("degenerate hull: fewer than three distinct points")

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    span = np.ptp(np.asarray(pts), axis=0).max()
    if len(hull) < 3 or abs(polygon_area(hull)) <= 1e-12 * span * span:
        raise ModelError("degenerate hull: points are collinear")
    return hull


def is_convex_polygon(poly) -> bool:
    p = np.asarray(poly, dtype=float)
    n = len(p)
    if n < 3:
        return False
    signs = []
    for i in range(n):
        a, b, c = p[i], p[(i + 1) % n], p[(i + 2) % n]
        signs.append((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]))
    signs = np.array(signs)
    return bool(np.all(signs > 0) or np.all(signs < 0))


def half_planes(poly) -> tuple[np.ndarray, np.ndarray]:
    """``(normals, offsets)`` with inside iff ``normals @ p <= offsets`` (CCW polygon)."""
    p = np.asarray(poly, dtype=float)
    if polygon_area(p) < 0:
        p = p[::-1]
    e = np.roll(p, -1, axis=0) - p
    outward = np.column_stack([e[:, 1], -e[:, 0]])
    outward /= np.linalg.norm(outward, axis=1, keepdims=True)
    return outward, np.einsum("ij,ij->i", outward, p)


def point_in_polygon(point, poly, tol: float = 0.0) -> bool:
    normals, offsets = half_planes(poly)
    return bool(np.all(normals @ np.asarray(point, dtype=float) <= offsets + tol))


def polygon_margin(point, poly) -> float:
    """Signed distance to the nearest edge line, positive inside."""
    normals, offsets = half_planes(poly)
    return float(np.min(offsets - normals @ np.asarray(point, dtype=float)))


# -- stance ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DoubleSupportConfig:
    """Relative right-foot placement plus geometry derived from the model."""

    dx: float
    dy: float
    dtheta: float
    foot_transform: Pose
    sensor_points: np.ndarray     # (8, 2) world, left cells 1..4 then right 1..4
    left_support: np.ndarray
    right_support: np.ndarray
    left_sensing: np.ndarray
    right_sensing: np.ndarray

    @classmethod
    def create(cls, model: RobotModel, dx: float, dy: float, dtheta: float) -> "DoubleSupportConfig":
        T0 = Pose.planar(dx, -dy, dtheta)
        R2 = T0.rotation[:2, :2]
        t2 = T0.translation[:2]

        def to_world(pts):
            return np.asarray(pts) @ R2.T + t2

        lf, rf = model.left_foot, model.right_foot
        sensors = np.vstack([lf.sensors, to_world(rf.sensors)])
        return cls(float(dx), float(dy), float(dtheta), T0, sensors,
                   lf.support.copy(), to_world(rf.support),
                   lf.sensing.copy(), to_world(rf.sensing))

    @property
    def offsets(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dtheta])


# -- kinematics -------------------------------------------------------------------

def fk_arrays(model: RobotModel, q) -> tuple[np.ndarray, np.ndarray]:
    """World rotations ``(n, 3, 3)`` and positions ``(n, 3)`` of every link frame."""
    q = model.check_q(q)
    n = len(model.links)
    Rs = np.empty((n, 3, 3))
    ps = np.empty((n, 3))
    for i, link in enumerate(model.links):
        if link.parent < 0:
            R = link.origin.rotation
            p = link.origin.translation
        else:
            Rp = Rs[link.parent]
            R = Rp @ link.origin.rotation
            p = ps[link.parent] + Rp @ link.origin.translation
        if link.axis is not None:
            R = R @ axis_rotation(link.axis, q[link.joint])
        Rs[i] = R
        ps[i] = p
    return Rs, ps


def forward_kinematics(model: RobotModel, q) -> list[Pose]:
    Rs, ps = fk_arrays(model, q)
    return [Pose(R, p) for R, p in zip(Rs, ps)]


def _joint_frames(model: RobotModel, Rs, ps):
    jl = model.joint_links
    axes = np.array([model.links[i].axis for i in jl])
    w = np.einsum("jab,jb->ja", Rs[jl], axes)
    return w, ps[jl]


def link_com_world(model: RobotModel, Rs, ps) -> np.ndarray:
    coms = np.array([l.com for l in model.links])
    return ps + np.einsum("nab,nb->na", Rs, coms)


def modeled_com(model: RobotModel, q) -> np.ndarray:
    Rs, ps = fk_arrays(model, q)
    c = link_com_world(model, Rs, ps)
    m = model.masses
    return (m @ c) / m.sum()


def modeled_cop(model: RobotModel, q) -> np.ndarray:
    """Ground projection of the CoM (quasi-static CoP)."""
    return modeled_com(model, q)[:2]


def com_jacobian(model: RobotModel, q, Rs=None, ps=None) -> tuple[np.ndarray, np.ndarray]:
    """CoM position and its (3, n_joints) Jacobian."""
    if Rs is None:
        Rs, ps = fk_arrays(model, q)
    c = link_com_world(model, Rs, ps)
    m = model.masses
    M = m.sum()
    w, o = _joint_frames(model, Rs, ps)
    mask = model.ancestor_mask.astype(float)
    moment = mask.T @ (m[:, None] * c)          # (joints, 3)
    sub_mass = mask.T @ m                       # (joints,)
    J = np.cross(w, moment - sub_mass[:, None] * o).T / M
    return (m @ c) / M, J


def point_jacobian(model: RobotModel, link: int, point_world, Rs, ps) -> np.ndarray:
    """(3, n_joints) Jacobian of a world point rigidly attached to ``link``."""
    w, o = _joint_frames(model, Rs, ps)
    J = np.cross(w, np.asarray(point_world) - o).T
    return J * model.ancestor_mask[link][None, :]


def foot_transform(model: RobotModel, q) -> Pose:
    """Right-sole pose expressed in the left-sole frame."""
    Rs, ps = fk_arrays(model, q)
    left = Pose(Rs[model.left_foot.link], ps[model.left_foot.link])
    right = Pose(Rs[model.right_foot.link], ps[model.right_foot.link])
    return left.inverse() @ right


def foot_transform_residual(model: RobotModel, q, target: Pose, Rs=None, ps=None,
                            jacobian: bool = False):
    """Six-vector ``[p - p0, log(R0^T R)]`` and optionally its Jacobian.

    Valid for the default anchoring where the left sole is the fixed root.
    """
    if Rs is None:
        Rs, ps = fk_arrays(model, q)
    k = model.right_foot.link
    R = Rs[k]
    p = ps[k]
    e_rot = rotation_log(target.rotation.T @ R)
    r = np.concatenate([p - target.translation, e_rot])
    if not jacobian:
        return r
    w, o = _joint_frames(model, Rs, ps)
    mask = model.ancestor_mask[k]
    Jv = np.cross(w, p - o).T * mask
    Jw = w.T * mask
    Jr = right_jacobian_inverse(e_rot) @ R.T @ Jw
    return r, np.vstack([Jv, Jr])


# -- capsules ---------------------------------------------------------------------

def closest_points_segments(p1, q1, p2, q2):
    """Closest points between segments [p1, q1] and [p2, q2] (Ericson)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    eps = 1e-15
    if a <= eps and e <= eps:
        return p1, p2
    if a <= eps:
        s = 0.0
        t = np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e <= eps:
            t = 0.0
            s = np.clip(-c / a, 0.0, 1.0)
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > eps * a * e else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
    return p1 + d1 * s, p2 + d2 * t


def _ordered(seg_a, seg_b):
    key_a = tuple(np.concatenate(seg_a))
    key_b = tuple(np.concatenate(seg_b))
    return (seg_a, seg_b, False) if key_a <= key_b else (seg_b, seg_a, True)


def capsule_distance_points(c1: Capsule, pose1: Pose, c2: Capsule, pose2: Pose):
    """Signed distance plus the two world closest points on the centerlines."""
    s1 = (pose1.apply(c1.p0), pose1.apply(c1.p1))
    s2 = (pose2.apply(c2.p0), pose2.apply(c2.p1))
    first, second, swapped = _ordered(s1, s2)
    a, b = closest_points_segments(first[0], first[1], second[0], second[1])
    if swapped:
        a, b = b, a
    R = float(np.linalg.norm(a - b))
    return R - (c1.radius + c2.radius), a, b


def capsule_distance(c1: Capsule, pose1: Pose, c2: Capsule, pose2: Pose) -> float:
    return capsule_distance_points(c1, pose1, c2, pose2)[0]


def collision_distances(model: RobotModel, q, Rs=None, ps=None, jacobian: bool = False):
    """Signed distances of every configured capsule pair (and Jacobian)."""
    if Rs is None:
        Rs, ps = fk_arrays(model, q)
    d = np.empty(len(model.collision_pairs))
    J = np.zeros((len(model.collision_pairs), model.n_joints)) if jacobian else None
    for k, (i, j) in enumerate(model.collision_pairs):
        ci, cj = model.capsules[i], model.capsules[j]
        pi = Pose(Rs[ci.link], ps[ci.link])
        pj = Pose(Rs[cj.link], ps[cj.link])
        d[k], a, b = capsule_distance_points(ci, pi, cj, pj)
        if jacobian:
            diff = a - b
            nrm = np.linalg.norm(diff)
            if nrm > 0:
                n = diff / nrm
                J[k] = n @ (point_jacobian(model, ci.link, a, Rs, ps)
                            - point_jacobian(model, cj.link, b, Rs, ps))
    return (d, J) if jacobian else d


def sensing_polygon(model: RobotModel, ds: DoubleSupportConfig) -> np.ndarray:
    """Convex hull (CCW) of the 8 world-frame sensor points."""
    return convex_hull(ds.sensor_points)


# -- persistence -------------------------------------------------------------------

def _pose_from_entry(entry) -> Pose:
    if entry is None:
        return Pose()
    xyz = entry.get("xyz", [0.0, 0.0, 0.0])
    rpy = entry.get("rpy", [0.0, 0.0, 0.0])
    return Pose(rpy_matrix(*rpy), np.asarray(xyz, dtype=float))


def model_from_dict(doc: dict) -> RobotModel:
    if doc.get("schema") != ROBOT_SCHEMA:
        raise ModelError(f"unsupported robot schema {doc.get('schema')!r}")
    names = [l["name"] for l in doc["links"]]
    index = {n: i for i, n in enumerate(names)}
    if len(index) != len(names):
        raise ModelError("duplicate link names")
    links = []
    limits: dict[int, tuple[float, float]] = {}
    joint_names: dict[int, str] = {}
    for entry in doc["links"]:
        parent = entry.get("parent")
        axis = joint = None
        if "joint" in entry:
            js = entry["joint"]
            axis = np.asarray(js["axis"], dtype=float)
            axis = axis / np.linalg.norm(axis)
            joint = int(js["index"])
            limits[joint] = tuple(map(float, js["limits"]))
            joint_names[joint] = js.get("name", f"q{joint}")
        links.append(Link(
            name=entry["name"],
            parent=-1 if parent is None else index[parent],
            origin=_pose_from_entry(entry.get("origin")),
            mass=float(entry.get("mass", 0.0)),
            com=np.asarray(entry.get("com", [0.0, 0.0, 0.0]), dtype=float),
            axis=axis,
            joint=joint,
        ))
    n = len(limits)
    q_min = np.array([limits[j][0] for j in range(n)])
    q_max = np.array([limits[j][1] for j in range(n)])
    capsules = []
    cap_index = {}
    for entry in doc.get("capsules", []):
        cap_index[entry["name"]] = len(capsules)
        capsules.append(Capsule(entry["p0"], entry["p1"], float(entry["radius"]),
                                link=index[entry["link"]], name=entry["name"]))
    pairs = tuple((cap_index[a], cap_index[b]) for a, b in doc.get("collision_pairs", []))

    def foot(entry):
        return FootLayout(
            link=index[entry["link"]],
            sensors=np.asarray(entry["sensors"], dtype=float),
            support=np.asarray(entry["support"], dtype=float),
            sensing=np.asarray(entry["sensing"], dtype=float),
        )

    model = RobotModel(
        name=doc.get("name", "robot"),
        links=tuple(links),
        q_min=q_min,
        q_max=q_max,
        capsules=tuple(capsules),
        collision_pairs=pairs,
        left_foot=foot(doc["feet"]["left"]),
        right_foot=foot(doc["feet"]["right"]),
        foot_length=float(doc["foot_length"]),
        q_nominal=np.asarray(doc.get("nominal_q", np.zeros(n)), dtype=float),
        joint_names=tuple(joint_names[j] for j in range(n)),
        gravity=float(doc.get("gravity", GRAVITY)),
    )
    if "total_mass" in doc and abs(model.total_mass - float(doc["total_mass"])) > 1e-9:
        raise ModelError(f"total_mass {doc['total_mass']} != sum of link masses {model.total_mass}")
    return model


def load_model(path: str | Path | None = None) -> RobotModel:
    """Load a robot description; ``None`` gives the bundled NAO-like biped."""
    if path is None:
        text = resources.files("footcal").joinpath("data/nao_like.yaml").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return model_from_dict(yaml.safe_load(text))


def default_model() -> RobotModel:
    return load_model(None)


def mirror_q(model: RobotModel, q_left_leg: Sequence[float]) -> np.ndarray:
    """Full joint vector with the right leg mirroring the given left-leg angles.

    Assumes the default joint ordering (left leg 0..5, right leg 6..11, each
    yaw, roll, pitch, knee, ankle pitch, ankle roll).
    """
    ql = np.asarray(q_left_leg, dtype=float)
    return np.concatenate([ql, ql * np.array([-1.0, -1.0, 1.0, 1.0, 1.0, -1.0])])
