"""Bench calibration of a single shoe: per-cell affine fits, the weighted
hole-grid protocol, and the polynomial CoP correction fitted on it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import RobotModel, point_in_polygon
from .numopt import NlsProblem, SolverSettings, DEFAULT_SETTINGS, nls_solve
from .sensors import (LoadCellParams, NoiseModel, NoFeasibleDistributionError, ShoeParams,
                      cell_forces, distribute_load, measured_cop)

logger = logging.getLogger(__name__)

GRID_WEIGHTS = (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)
N_CORRECTION = 16


class DeadCellError(ValueError):
    pass


class UnderdeterminedError(ValueError):
    pass


@dataclass(frozen=True)
class CorrectionParams:
    """Coefficients of the per-shoe CoP correction.

    Stored as ``[a1..a4, m1..m4, b1..b4, n1..n4]``. The x-correction is
    ``a1 x^2 + a2 x + a3 y + a4 + sum(m_i f_i)`` and the y-correction is
    ``b1 y^2 + b2 y + b3 x + b4 + sum(n_i f_i)``, with ``(x, y)`` the measured
    CoP.
    """

    values: np.ndarray = field(default_factory=lambda: np.zeros(N_CORRECTION))

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(N_CORRECTION)
        if not np.all(np.isfinite(v)):
            raise ValueError("correction coefficients must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls) -> "CorrectionParams":
        return cls(np.zeros(N_CORRECTION))

    @property
    def a(self):
        return self.values[0:4]

    @property
    def m(self):
        return self.values[4:8]

    @property
    def b(self):
        return self.values[8:12]

    @property
    def n(self):
        return self.values[12:16]


def correction_basis(p0, forces) -> np.ndarray:
    """Design tensor ``B`` (k, 2, 16) so that ``delta[k] = B[k] @ values``."""
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    f = np.atleast_2d(np.asarray(forces, dtype=float))
    k = p0.shape[0]
    x, y = p0[:, 0], p0[:, 1]
    one = np.ones(k)
    B = np.zeros((k, 2, N_CORRECTION))
    B[:, 0, 0:4] = np.column_stack([x * x, x, y, one])
    B[:, 0, 4:8] = f
    B[:, 1, 8:12] = np.column_stack([y * y, y, x, one])
    B[:, 1, 12:16] = f
    return B


def correction_delta(p0, forces, params: CorrectionParams) -> np.ndarray:
    return correction_basis(p0, forces) @ params.values


def corrected_cop(p0, forces, params: CorrectionParams) -> np.ndarray:
    """Measured CoP plus the polynomial/force correction; batched over rows."""
    p0 = np.asarray(p0, dtype=float)
    out = np.atleast_2d(p0) + correction_delta(p0, forces, params)
    return out.reshape(p0.shape)


@dataclass(frozen=True)
class MaeReport:
    mean: float
    std: float
    count: int
    units: str

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "count": self.count, "units": self.units}


def mae_grf(measured, truth) -> MaeReport:
    m = np.asarray(measured, dtype=float).reshape(-1)
    t = np.asarray(truth, dtype=float).reshape(-1)
    if m.size != t.size:
        raise ValueError(f"length mismatch: {m.size} measured vs {t.size} reference values")
    if m.size == 0:
        raise ValueError("need at least one sample")
    err = np.abs(m - t)
    return MaeReport(float(err.mean()), float(err.std()), int(err.size), "N")


def mae_cop(measured, truth) -> MaeReport:
    """Mean Euclidean CoP error; inputs in m, report in mm."""
    m = np.asarray(measured, dtype=float).reshape(-1, 2)
    t = np.asarray(truth, dtype=float).reshape(-1, 2)
    if m.shape != t.shape:
        raise ValueError(f"length mismatch: {len(m)} measured vs {len(t)} reference points")
    if m.size == 0:
        raise ValueError("need at least one sample")
    err = 1000.0 * np.linalg.norm(m - t, axis=1)
    return MaeReport(float(err.mean()), float(err.std()), int(err.size), "mm")


def calibrate_cell(S0: float, SG: float, G: float) -> LoadCellParams:
    """Affine cell model from a no-load and a single known-load reading."""
    if not G > 0:
        raise ValueError("reference force must be positive")
    if SG == S0:
        raise DeadCellError("loaded and unloaded voltages are identical")
    sigma = (SG - S0) / G
    if sigma < 0:
        raise DeadCellError("cell voltage drops under load; check wiring polarity")
    a = 1.0 / sigma
    return LoadCellParams(a, -(a * S0))


@dataclass(frozen=True)
class GridProtocol:
    holes: np.ndarray                   # (n, 2) foot frame
    weights: tuple[float, ...] = GRID_WEIGHTS
    readings_per_sample: int = 100      # voltage frames averaged per placement
    gravity: float = 9.81

    def __post_init__(self):
        object.__setattr__(self, "holes", np.asarray(self.holes, dtype=float).reshape(-1, 2))
        w = np.asarray(self.weights, dtype=float)
        if np.any(np.diff(w) <= 0) or np.any(w <= 0):
            raise ValueError("weights must be positive and strictly increasing")
        if self.readings_per_sample < 1:
            raise ValueError("readings_per_sample must be >= 1")

    @classmethod
    def for_polygon(cls, sensing, rows: int = 6, cols: int = 3, **kw) -> "GridProtocol":
        """Uniform ``rows x cols`` hole array spanning the polygon's bounding box."""
        sensing = np.asarray(sensing, dtype=float)
        lo, hi = sensing.min(axis=0), sensing.max(axis=0)
        xs = np.linspace(lo[0], hi[0], rows)
        ys = np.linspace(lo[1], hi[1], cols)
        holes = np.array([(x, y) for x in xs for y in ys])
        return cls(holes=holes, **kw)


@dataclass
class GridSamples:
    hole: np.ndarray        # (k, 2) commanded position = truth
    weight_kg: np.ndarray   # (k,)
    forces: np.ndarray      # (k, 4) measured with the assumed parameters
    cop: np.ndarray         # (k, 2) measured CoP
    skipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.weight_kg)

    def subset(self, mask) -> "GridSamples":
        mask = np.asarray(mask)
        return GridSamples(self.hole[mask], self.weight_kg[mask], self.forces[mask], self.cop[mask])


def run_grid_protocol(model: RobotModel, shoe: ShoeParams, protocol: GridProtocol,
                      noise: NoiseModel, assumed: ShoeParams | None = None,
                      side: str = "left") -> tuple[GridSamples, np.ndarray]:
    """Place every weight on every hole and record the averaged shoe readings.

    ``shoe`` is the real shoe (true cell parameters and mounting points);
    ``assumed`` is what the measurement side believes -- the calibrated cell
    parameters and the nominal layout. Holes outside the real sensor hull are
    skipped and listed in ``samples.skipped``.
    """
    if assumed is None:
        assumed = ShoeParams(shoe.cells, model.foot(side).sensors)
    sensing = model.foot(side).sensing
    holes, weights, forces, cops, skipped = [], [], [], [], []
    k = 0
    for hole in protocol.holes:
        if not point_in_polygon(hole, sensing, tol=1e-12):
            logger.warning("hole (%.4f, %.4f) is outside the sensing polygon", *hole)
        for w in protocol.weights:
            load = w * protocol.gravity
            try:
                f_true = distribute_load(shoe.positions, load, hole)
            except NoFeasibleDistributionError:
                skipped.append({"hole": hole.tolist(), "weight_kg": w, "reason": "outside sensor hull"})
                continue
            volts = (f_true - shoe.offsets) / shoe.scales
            readings = np.array([volts + noise.voltage_error(k * protocol.readings_per_sample + r, 4)
                                 for r in range(protocol.readings_per_sample)])
            k += 1
            v = readings.mean(axis=0)
            f = cell_forces(assumed.cells, v)
            holes.append(hole)
            weights.append(w)
            forces.append(f)
            cops.append(measured_cop(f, assumed.positions))
    samples = GridSamples(np.array(holes).reshape(-1, 2), np.array(weights),
                          np.array(forces).reshape(-1, 4), np.array(cops).reshape(-1, 2), skipped)
    return samples, samples.hole.copy()


def correction_cost(params: CorrectionParams, cop, forces, truths) -> float:
    r = corrected_cop(cop, forces, params) - np.asarray(truths)
    return float(np.sum(r * r))


def fit_correction(samples, truths, settings: SolverSettings = DEFAULT_SETTINGS) -> CorrectionParams:
    """Least-squares fit of the 16 correction coefficients.

    ``samples`` is either a :class:`GridSamples` or a ``(cop, forces)`` pair of
    arrays.
    """
    if isinstance(samples, GridSamples):
        cop, forces = samples.cop, samples.forces
    else:
        cop, forces = samples
    cop = np.asarray(cop, dtype=float).reshape(-1, 2)
    forces = np.asarray(forces, dtype=float).reshape(-1, 4)
    truths = np.asarray(truths, dtype=float).reshape(-1, 2)
    if len(cop) < N_CORRECTION:
        raise UnderdeterminedError(f"{len(cop)} samples cannot determine {N_CORRECTION} coefficients")
    if len(np.unique(truths.round(9), axis=0)) < 4:
        raise UnderdeterminedError("samples must span at least 4 distinct positions")
    B = correction_basis(cop, forces)
    J = B.reshape(-1, N_CORRECTION)
    target = (truths - cop).reshape(-1)
    if np.linalg.matrix_rank(J) < N_CORRECTION:
        raise UnderdeterminedError("sample set leaves some correction coefficients undetermined")

    problem = NlsProblem(residual=lambda z: J @ z - target, x0=np.zeros(N_CORRECTION),
                         jacobian=lambda z: J, settings=settings)
    rep = nls_solve(problem)
    return CorrectionParams(rep.x)


@dataclass
class ManualCalibration:
    """Everything the bench procedure produces for one shoe."""

    side: str
    cells: tuple[LoadCellParams, ...]
    correction: CorrectionParams
    samples: GridSamples
    grf: MaeReport
    cop_raw: MaeReport
    cop_corrected: MaeReport


def bench_cell_readings(cell: LoadCellParams, G: float, noise: NoiseModel, index: int,
                        readings: int = 100, gain_error: float = 0.0) -> tuple[float, float]:
    """Averaged (S0, SG) of one cell; ``gain_error`` mis-states the reference load."""
    idx = index * 2 * readings
    s0 = np.mean([cell.voltage(0.0) + noise.voltage_error(idx + r, 1)[0] for r in range(readings)])
    applied = G * (1.0 + gain_error)
    sg = np.mean([cell.voltage(applied) + noise.voltage_error(idx + readings + r, 1)[0]
                  for r in range(readings)])
    return float(s0), float(sg)


def manual_calibrate_shoe(model: RobotModel, shoe: ShoeParams, noise: NoiseModel,
                          side: str = "left", reference_kg: float = 2.0,
                          gain_error: float = 0.001, protocol: GridProtocol | None = None,
                          settings: SolverSettings = DEFAULT_SETTINGS) -> ManualCalibration:
    """Cell calibration, grid protocol, and correction fit for one shoe."""
    if protocol is None:
        protocol = GridProtocol.for_polygon(model.foot(side).sensing)
    G = reference_kg * protocol.gravity
    rng = np.random.default_rng([noise.seed, 31])
    errs = gain_error * rng.choice([-1.0, 1.0], 4)
    cells = tuple(calibrate_cell(*bench_cell_readings(c, G, noise, i, protocol.readings_per_sample, e), G)
                  for i, (c, e) in enumerate(zip(shoe.cells, errs)))
    assumed = ShoeParams(cells, model.foot(side).sensors)
    samples, truths = run_grid_protocol(model, shoe, protocol, noise, assumed, side)
    corr = fit_correction(samples, truths, settings)
    fixed = corrected_cop(samples.cop, samples.forces, corr)
    return ManualCalibration(
        side=side,
        cells=cells,
        correction=corr,
        samples=samples,
        grf=mae_grf(samples.forces.sum(axis=1), samples.weight_kg * protocol.gravity),
        cop_raw=mae_cop(samples.cop, truths),
        cop_corrected=mae_cop(fixed, truths),
    )
