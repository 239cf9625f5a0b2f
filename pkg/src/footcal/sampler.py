"""Random double-support stances on a discretized grid, kept mutually distant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DoubleSupportConfig, RobotModel

MAX_CONSECUTIVE_REJECTIONS = 10_000


class SamplerStallError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    dx_range: tuple[float, float] = (-0.04, 0.08)
    dy_range: tuple[float, float] = (0.10, 0.17)
    dtheta_range: tuple[float, float] = (-0.35, 0.35)
    resolution: tuple[int, int, int] = (9, 8, 8)
    w_d: float = 1.0
    w_o: float = 0.1
    threshold: float = 0.04
    count: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("dx_range", "dy_range", "dtheta_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} must be ordered (low, high)")
        if any(int(r) < 2 for r in self.resolution):
            raise ValueError("grid resolution must be >= 2 on every axis")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.w_d < 0 or self.w_o < 0 or (self.w_d == 0 and self.w_o == 0):
            raise ValueError("distance weights must be non-negative and not both zero")
        if self.count < 1:
            raise ValueError("count must be >= 1")

    def grid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nx, ny, nt = (int(r) for r in self.resolution)
        return (np.linspace(*self.dx_range, nx), np.linspace(*self.dy_range, ny),
                np.linspace(*self.dtheta_range, nt))


def config_distance(c1, c2, w_d: float, w_o: float) -> float:
    """Weighted planar distance between two stances."""
    ddx = c1.dx - c2.dx
    ddy = c1.dy - c2.dy
    return w_d * float(np.hypot(ddx, ddy)) + w_o * abs(c1.dtheta - c2.dtheta)


def _separated(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons; touching counts as overlap."""
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        for e in edges:
            axis = np.array([-e[1], e[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return True
    return False


def feet_collide(ds: DoubleSupportConfig, model: RobotModel | None = None) -> bool:
    """True iff the two foot support polygons intersect (closed sets)."""
    return not _separated(ds.left_support, ds.right_support)


def sample_double_supports(cfg: SamplerConfig, model: RobotModel) -> list[DoubleSupportConfig]:
    """Rejection-sample ``cfg.count`` collision-free, pairwise-distant stances."""
    xs, ys, ts = cfg.grid()
    rng = np.random.default_rng(cfg.seed)
    accepted: list[DoubleSupportConfig] = []
    rejections = 0
    while len(accepted) < cfg.count:
        i, j, k = rng.integers(len(xs)), rng.integers(len(ys)), rng.integers(len(ts))
        ds = DoubleSupportConfig.create(model, xs[i], ys[j], ts[k])
        ok = not feet_collide(ds, model) and all(
            config_distance(ds, other, cfg.w_d, cfg.w_o) > cfg.threshold for other in accepted)
        if ok:
            accepted.append(ds)
            rejections = 0
            continue
        rejections += 1
        if rejections >= MAX_CONSECUTIVE_REJECTIONS:
            raise SamplerStallError(
                f"{rejections} consecutive rejections after {len(accepted)} stances; "
                f"try a smaller distance threshold than {cfg.threshold}")
    return accepted
