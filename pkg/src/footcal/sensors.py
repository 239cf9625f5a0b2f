"""Load-cell measurement model and the synthetic shoe simulator.

Each cell maps voltage to force affinely, ``f = a S + b``. The simulator runs
that map backwards: it distributes the (quasi-static) load over the cells,
converts forces to voltages with the ground-truth parameters, then adds
noise and drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import DoubleSupportConfig, RobotModel, modeled_cop
from .numopt import min_norm_nonnegative

FORCE_FLOOR = 1.0  # N; below this the CoP is undefined


class InsufficientLoadError(ValueError):
    """Total measured force is at or below the force floor."""


class NoFeasibleDistributionError(ValueError):
    """The commanded CoP lies outside the hull of the load cells."""


@dataclass(frozen=True)
class LoadCellParams:
    scale: float   # a, N/V
    offset: float  # b, N

    def __post_init__(self):
        if not (np.isfinite(self.scale) and np.isfinite(self.offset)):
            raise ValueError("load cell parameters must be finite")
        if self.scale <= 0:
            raise ValueError("load cell scale must be positive; flip the voltage polarity instead")

    def force(self, voltage):
        return self.scale * np.asarray(voltage, dtype=float) + self.offset

    def voltage(self, force):
        return (np.asarray(force, dtype=float) - self.offset) / self.scale


@dataclass(frozen=True)
class ShoeParams:
    cells: tuple[LoadCellParams, ...]
    positions: np.ndarray  # (4, 2), foot frame

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(4, 2)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "cells", tuple(self.cells))
        if len(self.cells) != 4:
            raise ValueError("a shoe has exactly four load cells")

    @property
    def scales(self) -> np.ndarray:
        return np.array([c.scale for c in self.cells])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([c.offset for c in self.cells])


@dataclass(frozen=True)
class NoiseModel:
    """Voltage noise, slow drift, and quasi-static model error.

    ``grf_perturbation`` (N) and ``cop_perturbation`` (m) are amplitudes of
    smooth sinusoidal deviations of the true load from the quasi-static
    reference; they emulate residual dynamics and CoM modelling error.
    """

    voltage_std: float = 0.0001
    drift_amplitude: float = 0.00005
    drift_period: float = 400.0
    grf_perturbation: float = 0.3
    cop_perturbation: float = 0.002
    perturbation_period: float = 60.0
    seed: int = 0

    def __post_init__(self):
        for name in ("voltage_std", "drift_amplitude", "grf_perturbation", "cop_perturbation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.drift_period <= 0 or self.perturbation_period <= 0:
            raise ValueError("periods must be positive")

    @classmethod
    def zero(cls, seed: int = 0) -> "NoiseModel":
        return cls(voltage_std=0.0, drift_amplitude=0.0, grf_perturbation=0.0,
                   cop_perturbation=0.0, seed=seed)

    def _phases(self, n_cells: int) -> np.ndarray:
        return np.random.default_rng([self.seed, 7919]).uniform(0.0, 2 * np.pi, n_cells + 3)

    def voltage_error(self, index: int, n_cells: int) -> np.ndarray:
        phases = self._phases(n_cells)[:n_cells]
        drift = self.drift_amplitude * np.sin(2 * np.pi * index / self.drift_period + phases)
        if self.voltage_std == 0:
            return drift
        rng = np.random.default_rng([self.seed, int(index)])
        return drift + rng.normal(0.0, self.voltage_std, n_cells)

    def load_error(self, index: int) -> tuple[float, np.ndarray]:
        """(GRF deviation in N, CoP deviation in m) for frame ``index``."""
        ph = self._phases(0)
        w = 2 * np.pi * index / self.perturbation_period
        grf = self.grf_perturbation * np.sin(w + ph[0])
        cop = self.cop_perturbation * np.array([np.sin(0.61 * w + ph[1]), np.sin(0.83 * w + ph[2])])
        return float(grf), cop


@dataclass(frozen=True)
class SensorTruth:
    """Ground-truth parameters of all 8 cells (left 1..4, right 1..4).

    ``position_offsets`` displace the real mounting points from the nominal
    layout (foot frame, m); measurements always assume the nominal layout.
    """

    cells: tuple[LoadCellParams, ...]
    position_offsets: np.ndarray = field(default_factory=lambda: np.zeros((8, 2)))

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        object.__setattr__(self, "position_offsets",
                           np.asarray(self.position_offsets, dtype=float).reshape(8, 2))
        if len(self.cells) != 8:
            raise ValueError("ground truth needs 8 cells")

    @property
    def scales(self) -> np.ndarray:
        return np.array([c.scale for c in self.cells])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([c.offset for c in self.cells])

    def shoe(self, side: str, model: RobotModel) -> ShoeParams:
        sl = slice(0, 4) if side == "left" else slice(4, 8)
        foot = model.foot(side)
        return ShoeParams(self.cells[sl], foot.sensors + self.position_offsets[sl])


def random_truth(seed: int, nominal_scale: float = 100.0, spread: float = 0.3,
                 offset_range: float = 3.0, position_error: float = 0.002) -> SensorTruth:
    """Heterogeneous cells: scales within ``+-spread`` of nominal, offsets in ``+-offset_range`` N."""
    rng = np.random.default_rng([seed, 104729])
    scales = nominal_scale * (1.0 + rng.uniform(-spread, spread, 8))
    offsets = rng.uniform(-offset_range, offset_range, 8)
    pos = rng.uniform(-position_error, position_error, (8, 2))
    return SensorTruth(tuple(LoadCellParams(float(a), float(b)) for a, b in zip(scales, offsets)), pos)


def cell_force(p: LoadCellParams, S):
    return p.scale * S + p.offset


def cell_forces(cells: Sequence[LoadCellParams], voltages) -> np.ndarray:
    """Forces of several cells; ``voltages`` may be (n,) or (frames, n)."""
    a = np.array([c.scale for c in cells])
    b = np.array([c.offset for c in cells])
    return np.asarray(voltages, dtype=float) * a + b


def measured_grf(forces) -> float | np.ndarray:
    return np.sum(np.asarray(forces, dtype=float), axis=-1)


def measured_cop(forces, positions, floor: float = FORCE_FLOOR) -> np.ndarray:
    """Force-weighted mean of the cell positions."""
    f = np.asarray(forces, dtype=float)
    total = f.sum()
    if not total > floor:
        raise InsufficientLoadError(f"total force {total:.3f} N is below the {floor} N floor")
    return f @ np.asarray(positions, dtype=float) / total


def distribute_load(positions, total: float, cop) -> np.ndarray:
    """Minimum-norm non-negative cell forces with the given resultant and CoP.

    Equivalent to a rigid plate resting on identical springs.
    """
    pos = np.asarray(positions, dtype=float)
    A = np.vstack([np.ones(len(pos)), pos[:, 0], pos[:, 1]])
    b = total * np.array([1.0, cop[0], cop[1]])
    try:
        return min_norm_nonnegative(A, b)
    except ValueError as exc:
        raise NoFeasibleDistributionError(
            f"CoP ({cop[0]:.4f}, {cop[1]:.4f}) is outside the sensor hull") from exc


def world_cell_positions(model: RobotModel, ds: DoubleSupportConfig,
                         offsets=None) -> np.ndarray:
    """World positions of all 8 cells, optionally displaced by foot-frame ``offsets``."""
    if offsets is None:
        return ds.sensor_points.copy()
    off = np.asarray(offsets, dtype=float).reshape(8, 2)
    R2 = ds.foot_transform.rotation[:2, :2]
    return ds.sensor_points + np.vstack([off[:4], off[4:] @ R2.T])


@dataclass(frozen=True)
class SensorFrame:
    index: int
    voltages: np.ndarray
    q: np.ndarray
    forces: np.ndarray | None = None       # true cell forces (simulation only)
    cop_true: np.ndarray | None = None
    grf_true: float | None = None


def simulate_frame(model: RobotModel, q, ds: DoubleSupportConfig, truth: SensorTruth,
                   noise: NoiseModel, index: int, cop=None) -> SensorFrame:
    """Voltages the 8 cells would read with the robot standing at ``q``."""
    q = model.check_q(q)
    if model.weight <= 0:
        raise ValueError("robot weight must be positive")
    if cop is None:
        cop = modeled_cop(model, q)
    dg, dc = noise.load_error(index)
    grf = model.weight + dg
    cop_true = np.asarray(cop, dtype=float) + dc
    positions = world_cell_positions(model, ds, truth.position_offsets)
    forces = distribute_load(positions, grf, cop_true)
    volts = (forces - truth.offsets) / truth.scales
    volts = volts + noise.voltage_error(index, 8)
    return SensorFrame(int(index), volts, q.copy(), forces, cop_true, grf)
