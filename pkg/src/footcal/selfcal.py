"""Self-calibration from whole-body motions in double support.

Pipeline: a shared linear initial guess for all cells, a regularized
nonlinear fit of every cell's scale/offset against the modeled GRF and CoP,
then per-foot polynomial CoP corrections fitted on the combined CoP.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .manual_cal import (N_CORRECTION, CorrectionParams, MaeReport, UnderdeterminedError,
                         correction_basis, mae_cop, mae_grf)
from .model import DoubleSupportConfig, RobotModel, modeled_cop
from .numopt import (DEFAULT_SETTINGS, STALLED, NlsProblem, SolveReport, SolverSettings,
                     nls_solve)
from .sensors import (FORCE_FLOOR, LoadCellParams, NoiseModel, SensorFrame, SensorTruth,
                      simulate_frame)

logger = logging.getLogger(__name__)

VARIANTS = ("init", "selfcal", "corrected")
ROLES = ("train", "test")
MIN_FRAMES = 50


class DegenerateDataError(ValueError):
    pass


class IdentificationError(RuntimeError):
    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


@dataclass
class CalibrationDataset:
    """One double-support recording: voltages, postures and references.

    ``cop_true``/``grf_true`` are the simulator's ground truth; they are only
    read by evaluation, never by a fit.
    """

    name: str
    ds: DoubleSupportConfig
    index: np.ndarray        # (K,)
    q: np.ndarray            # (K, n)
    voltages: np.ndarray     # (K, 8)
    cop_model: np.ndarray    # (K, 2)
    grf_model: np.ndarray    # (K,)
    cop_true: np.ndarray | None = None
    grf_true: np.ndarray | None = None
    role: str = "train"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        if len(self.voltages) < MIN_FRAMES:
            raise ValueError(f"dataset {self.name!r} has {len(self.voltages)} frames; need {MIN_FRAMES}")
        if not (np.all(np.isfinite(self.cop_model)) and np.all(np.isfinite(self.grf_model))):
            raise ValueError("references must be finite")

    def __len__(self):
        return len(self.voltages)

    @property
    def positions(self) -> np.ndarray:
        return self.ds.sensor_points

    def frames(self) -> list[SensorFrame]:
        return [SensorFrame(int(i), v, q) for i, v, q in zip(self.index, self.voltages, self.q)]

    def frame_hashes(self) -> set[str]:
        return {hashlib.sha256(v.tobytes()).hexdigest() for v in self.voltages}

    def with_role(self, role: str) -> "CalibrationDataset":
        return CalibrationDataset(self.name, self.ds, self.index, self.q, self.voltages,
                                  self.cop_model, self.grf_model, self.cop_true, self.grf_true, role)


def interpolate_states(q_states, frames_per_state: int) -> np.ndarray:
    """Linear samples between consecutive states, ending on the last state."""
    Q = np.asarray(q_states, dtype=float)
    if frames_per_state <= 1 or len(Q) < 2:
        return Q.copy()
    t = np.arange(frames_per_state) / frames_per_state
    parts = [Q[i] + t[:, None] * (Q[i + 1] - Q[i]) for i in range(len(Q) - 1)]
    parts.append(Q[-1:])
    return np.vstack(parts)


def simulate_dataset(model: RobotModel, q_states, ds: DoubleSupportConfig, truth: SensorTruth,
                     noise: NoiseModel, name: str = "data", role: str = "train",
                     frames_per_state: int = 3) -> CalibrationDataset:
    qs = interpolate_states(q_states, frames_per_state)
    cops = np.array([modeled_cop(model, q) for q in qs])
    frames = [simulate_frame(model, q, ds, truth, noise, k, cop=c) for k, (q, c) in enumerate(zip(qs, cops))]
    return CalibrationDataset(
        name=name, ds=ds,
        index=np.arange(len(frames)),
        q=qs,
        voltages=np.array([f.voltages for f in frames]),
        cop_model=cops,
        grf_model=np.full(len(frames), model.weight),
        cop_true=np.array([f.cop_true for f in frames]),
        grf_true=np.array([f.grf_true for f in frames]),
        role=role,
    )


@dataclass(frozen=True)
class SelfCalWeights:
    w_n: float = 1.0       # 1/N^2
    w_c: float = 1e4       # 1/m^2
    w_zeta: float = 1e-4

    def __post_init__(self):
        if self.w_n < 0 or self.w_zeta < 0 or not self.w_c > 0:
            raise ValueError("weights must be >= 0 with w_c > 0")


# -- initial guess -----------------------------------------------------------------

def initial_guess_system(datasets: Sequence[CalibrationDataset]) -> tuple[np.ndarray, np.ndarray]:
    """Stacked linear system ``A [c0, d0] ~ y`` with three rows per frame."""
    rows, rhs = [], []
    for d in datasets:
        t = d.positions
        S = d.voltages
        G = d.grf_model
        sx, sy = S @ t[:, 0], S @ t[:, 1]
        k = len(S)
        A = np.empty((3 * k, 2))
        A[0::3] = np.column_stack([sx, np.full(k, t[:, 0].sum())])
        A[1::3] = np.column_stack([sy, np.full(k, t[:, 1].sum())])
        A[2::3] = np.column_stack([S.sum(axis=1), np.full(k, float(len(t)))])
        y = np.empty(3 * k)
        y[0::3] = d.cop_model[:, 0] * G
        y[1::3] = d.cop_model[:, 1] * G
        y[2::3] = G
        rows.append(A)
        rhs.append(y)
    return np.vstack(rows), np.concatenate(rhs)


def initial_guess(datasets: Sequence[CalibrationDataset]) -> tuple[float, float]:
    """Shared ``(c0, d0)`` for every cell by closed-form linear least squares."""
    A, y = initial_guess_system(datasets)
    if len(A) < 6:
        raise DegenerateDataError("need at least two frames")
    N = A.T @ A
    det = N[0, 0] * N[1, 1] - N[0, 1] * N[1, 0]
    if abs(det) <= 1e-12 * N[0, 0] * N[1, 1]:
        raise DegenerateDataError("voltages do not vary enough to separate scale from offset")
    b = A.T @ y
    c0 = (N[1, 1] * b[0] - N[0, 1] * b[1]) / det
    d0 = (N[0, 0] * b[1] - N[1, 0] * b[0]) / det
    return float(c0), float(d0)


# -- load-cell identification -------------------------------------------------------

def zeta_from_cells(cells: Sequence[LoadCellParams]) -> np.ndarray:
    return np.array([v for c in cells for v in (c.scale, c.offset)])


def cells_from_zeta(zeta) -> tuple[LoadCellParams, ...]:
    z = np.asarray(zeta, dtype=float).reshape(-1, 2)
    return tuple(LoadCellParams(float(a), float(b)) for a, b in z)


def _stack(datasets):
    S = np.vstack([d.voltages for d in datasets])
    T = np.concatenate([np.broadcast_to(d.positions, (len(d), 8, 2)) for d in datasets])
    cm = np.vstack([d.cop_model for d in datasets])
    G = np.concatenate([d.grf_model for d in datasets])
    return S, T, cm, G


def identification_residual(zeta, S, T, cm, G, zeta0, weights: SelfCalWeights, jacobian=False):
    z = np.asarray(zeta, dtype=float).reshape(8, 2)
    f = S * z[:, 0] + z[:, 1]                   # (K, 8)
    n = f.sum(axis=1)
    mom = np.einsum("ki,kij->kj", f, T)         # (K, 2)
    c = mom / n[:, None]
    sn, sc, sz = np.sqrt(weights.w_n), np.sqrt(weights.w_c), np.sqrt(weights.w_zeta)
    k = len(S)
    r = np.concatenate([sn * (n - G), (sc * (c - cm)).reshape(-1), sz * (np.ravel(zeta) - zeta0)])
    if not jacobian:
        return r
    J = np.zeros((3 * k + 16, 16))
    J[:k, 0::2] = sn * S
    J[:k, 1::2] = sn
    rel = (T - c[:, None, :]) / n[:, None, None]  # (K, 8, 2)
    Jc_a = S[:, :, None] * rel
    Jc_b = rel
    Jc = np.empty((k, 2, 16))
    Jc[:, :, 0::2] = np.transpose(Jc_a, (0, 2, 1))
    Jc[:, :, 1::2] = np.transpose(Jc_b, (0, 2, 1))
    J[k:3 * k] = sc * Jc.reshape(2 * k, 16)
    J[3 * k:] = sz * np.eye(16)
    return r, J


def identify_params(datasets: Sequence[CalibrationDataset], init: tuple[float, float],
                    weights: SelfCalWeights = SelfCalWeights(),
                    settings: SolverSettings = DEFAULT_SETTINGS):
    """Per-cell scale/offset minimizing GRF, CoP and regularization residuals.

    Returns ``(cells, report)``.
    """
    c0, d0 = init
    if not (np.isfinite(c0) and np.isfinite(d0)):
        raise ValueError("initial guess must be finite")
    S, T, cm, G = _stack(datasets)
    zeta0 = np.tile([c0, d0], 8).astype(float)
    problem = NlsProblem(
        residual=lambda z: identification_residual(z, S, T, cm, G, zeta0, weights),
        jacobian=lambda z: identification_residual(z, S, T, cm, G, zeta0, weights, True)[1],
        x0=zeta0, settings=settings)
    rep = nls_solve(problem)
    if rep.reason == STALLED and rep.iterations <= 1 and np.array_equal(rep.x, zeta0):
        raise IdentificationError("identification made no progress from the initial guess", rep)
    return cells_from_zeta(rep.x), rep


# -- double-support CoP correction -------------------------------------------------

def _cell_forces(voltages, cells):
    z = zeta_from_cells(cells).reshape(8, 2)
    return np.asarray(voltages, dtype=float) * z[:, 0] + z[:, 1]


@dataclass
class _FootTerms:
    base: np.ndarray     # (K, 2) uncorrected combined CoP
    basis: np.ndarray    # (K, 2, 32) d c_aug / d [corr_L, corr_R]
    valid: np.ndarray    # (K,) bool


def _double_terms(forces, ds: DoubleSupportConfig, model: RobotModel | None = None,
                  floor: float = FORCE_FLOOR) -> _FootTerms:
    """Linear decomposition ``c_aug = base + basis @ [corr_L, corr_R]``.

    Per-foot CoPs and corrections live in each sole frame; the right-foot
    correction is rotated into the world frame before combining.
    """
    f = np.asarray(forces, dtype=float)
    pts = ds.sensor_points
    n_l = f[:, :4].sum(axis=1)
    n_r = f[:, 4:].sum(axis=1)
    total = n_l + n_r
    valid = total > floor
    safe = np.where(valid, total, 1.0)
    base = (f @ pts) / safe[:, None]

    R2 = ds.foot_transform.rotation[:2, :2]
    t2 = ds.foot_transform.translation[:2]
    left_local = pts[:4]
    right_local = (pts[4:] - t2) @ R2          # sole-frame positions of the right cells
    k = len(f)
    basis = np.zeros((k, 2, 2 * N_CORRECTION))
    for foot, local, n_f, rot, cols in ((f[:, :4], left_local, n_l, np.eye(2), slice(0, 16)),
                                         (f[:, 4:], right_local, n_r, R2, slice(16, 32))):
        loaded = n_f > floor
        p0 = np.zeros((k, 2))
        p0[loaded] = (foot[loaded] @ local) / n_f[loaded, None]
        B = correction_basis(p0, foot)                         # (K, 2, 16), sole frame
        B = np.einsum("ab,kbj->kaj", rot, B)
        w = np.where(loaded, n_f, 0.0) / safe
        basis[:, :, cols] = B * w[:, None, None]
    return _FootTerms(base, basis, valid)


def corrected_double_cop(voltages, cells: Sequence[LoadCellParams], corr_l: CorrectionParams,
                         corr_r: CorrectionParams, ds: DoubleSupportConfig,
                         floor: float = FORCE_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """GRF-weighted combination of the per-foot corrected CoPs.

    Returns ``(cop, valid)``; invalid frames (total force at or below the
    floor) hold NaN.
    """
    f = _cell_forces(np.atleast_2d(voltages), cells)
    terms = _double_terms(f, ds, floor=floor)
    zeta = np.concatenate([corr_l.values, corr_r.values])
    cop = terms.base + terms.basis @ zeta
    cop[~terms.valid] = np.nan
    return cop, terms.valid


def fit_double_correction(datasets: Sequence[CalibrationDataset], cells: Sequence[LoadCellParams],
                          settings: SolverSettings = DEFAULT_SETTINGS
                          ) -> tuple[CorrectionParams, CorrectionParams]:
    """Least-squares fit of both feet's corrections against the modeled CoP."""
    blocks, targets = [], []
    for d in datasets:
        terms = _double_terms(_cell_forces(d.voltages, cells), d.ds)
        v = terms.valid
        blocks.append(terms.basis[v].reshape(-1, 2 * N_CORRECTION))
        targets.append((d.cop_model[v] - terms.base[v]).reshape(-1))
    J = np.vstack(blocks)
    y = np.concatenate(targets)
    if len(y) < 2 * N_CORRECTION or np.linalg.matrix_rank(J) < 2 * N_CORRECTION:
        raise UnderdeterminedError("training data cannot determine all 32 correction coefficients")
    # column scaling keeps the tiny quadratic and large force columns comparable
    scale = np.linalg.norm(J, axis=0)
    Js = J / scale
    rep = nls_solve(NlsProblem(residual=lambda z: Js @ z - y, jacobian=lambda z: Js,
                               x0=np.zeros(2 * N_CORRECTION), settings=settings))
    zeta = rep.x / scale
    return CorrectionParams(zeta[:16]), CorrectionParams(zeta[16:])


# -- pipeline ------------------------------------------------------------------------

@dataclass
class SelfCalResult:
    cells: tuple[LoadCellParams, ...]
    init: tuple[float, float]
    corr_left: CorrectionParams
    corr_right: CorrectionParams
    reports: dict = field(default_factory=dict)   # variant -> role -> metric -> MaeReport
    train: tuple[str, ...] = ()
    test: tuple[str, ...] = ()
    solve: dict = field(default_factory=dict)

    @property
    def init_cells(self) -> tuple[LoadCellParams, ...]:
        c0, d0 = self.init
        return tuple(LoadCellParams(c0, d0) for _ in range(8))


def self_calibrate(train: Sequence[CalibrationDataset], weights: SelfCalWeights = SelfCalWeights(),
                   settings: SolverSettings = DEFAULT_SETTINGS) -> SelfCalResult:
    init = initial_guess(train)
    cells, rep = identify_params(train, init, weights, settings)
    corr_l, corr_r = fit_double_correction(train, cells, settings)
    return SelfCalResult(cells=cells, init=init, corr_left=corr_l, corr_right=corr_r,
                         train=tuple(d.name for d in train),
                         solve={"reason": rep.reason, "iterations": rep.iterations, "cost": rep.cost})


def measure(dataset: CalibrationDataset, result: SelfCalResult, variant: str):
    """Measured (GRF, CoP) series of ``dataset`` under one calibration variant."""
    cells = result.init_cells if variant == "init" else result.cells
    f = _cell_forces(dataset.voltages, cells)
    grf = f.sum(axis=1)
    if variant == "corrected":
        cop, _ = corrected_double_cop(dataset.voltages, cells, result.corr_left, result.corr_right, dataset.ds)
    else:
        safe = np.where(np.abs(grf) > FORCE_FLOOR, grf, np.nan)
        cop = (f @ dataset.positions) / safe[:, None]
    return grf, cop


def _references(d: CalibrationDataset, reference: str):
    if reference == "truth" and d.cop_true is not None:
        return d.grf_true, d.cop_true
    return d.grf_model, d.cop_model


def evaluate(result: SelfCalResult, test: Sequence[CalibrationDataset],
             train: Sequence[CalibrationDataset] = (), reference: str = "truth") -> dict:
    """MAE of every variant on both roles.

    ``reference='truth'`` compares against the simulator's true load (the
    role manual calibration plays on hardware); ``'model'`` against the
    modeled references.
    """
    train_hashes = set().union(*(d.frame_hashes() for d in train)) if train else set()
    test_hashes = set().union(*(d.frame_hashes() for d in test)) if test else set()
    if train_hashes & test_hashes:
        raise ValueError("train and test datasets share frames")
    reports: dict = {}
    for variant in VARIANTS:
        reports[variant] = {}
        for role, group in (("train", train), ("test", test)):
            if not group:
                continue
            g_meas, g_ref, c_meas, c_ref = [], [], [], []
            for d in group:
                grf, cop = measure(d, result, variant)
                gr, cr = _references(d, reference)
                ok = np.all(np.isfinite(cop), axis=1)
                g_meas.append(grf)
                g_ref.append(gr)
                c_meas.append(cop[ok])
                c_ref.append(cr[ok])
            reports[variant][role] = {
                "grf": mae_grf(np.concatenate(g_meas), np.concatenate(g_ref)),
                "cop": mae_cop(np.vstack(c_meas), np.vstack(c_ref)),
            }
    result.reports = reports
    result.test = tuple(d.name for d in test)
    return reports


def model_closure(dataset: CalibrationDataset, truth: SensorTruth) -> tuple[MaeReport, MaeReport]:
    """Reliability of the quasi-static references for one recording.

    GRF: measured with the true cell parameters vs the robot weight.
    CoP: modeled CoP vs the true CoP.
    """
    f = _cell_forces(dataset.voltages, truth.cells)
    return (mae_grf(f.sum(axis=1), dataset.grf_model),
            mae_cop(dataset.cop_model, dataset.cop_true))
