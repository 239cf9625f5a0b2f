"""Pipeline configuration and stages: sample, plan, simulate, manual-cal, self-cal, evaluate.

Each stage reads its predecessors' artifacts from the output directory,
writes its own atomically and leaves a manifest whose inputs are the
upstream manifests' hashes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import artifacts as art
from .manual_cal import CorrectionParams, GridProtocol, MaeReport, manual_calibrate_shoe
from .model import DoubleSupportConfig, ModelError, RobotModel, load_model
from .numopt import DEFAULT_SETTINGS, InvalidProblemError, SolverSettings
from .planner import PLANNER_SOLVER, PlannerConfig, PlanningError, Trajectory, certify, plan_trajectory, reach_double_support
from .sampler import SamplerConfig, SamplerStallError, sample_double_supports
from .selfcal import (ROLES, VARIANTS, CalibrationDataset, DegenerateDataError, IdentificationError,
                      SelfCalResult, SelfCalWeights, evaluate, measure, model_closure, self_calibrate,
                      simulate_dataset)
from .sensors import LoadCellParams, NoiseModel, SensorTruth, random_truth

logger = logging.getLogger(__name__)

CONFIG_SCHEMA = "footcal.config/1"
STAGES = ("sample", "plan", "simulate", "manual-cal", "self-cal", "evaluate")
PREREQUISITES = {
    "sample": (),
    "plan": ("sample",),
    "simulate": ("sample", "plan"),
    "manual-cal": ("simulate",),
    "self-cal": ("sample", "simulate"),
    "evaluate": ("sample", "simulate", "self-cal"),
}

S_SAMPLES = "footcal.samples/1"
S_TRAJ = "footcal.trajectory/1"
S_PLAN = "footcal.plan/1"
S_DATASET = "footcal.dataset/1"
S_TRUTH = "footcal.truth/1"
S_GRID = "footcal.grid/1"
S_MANUAL = "footcal.manual/1"
S_SELFCAL = "footcal.selfcal/1"
S_RESULT = "footcal.result/1"
S_TRACE = "footcal.trace/1"


class PipelineError(Exception):
    exit_code = 1


class MissingPrerequisiteError(PipelineError):
    exit_code = 2


class ConfigError(PipelineError):
    exit_code = 3


class CorruptArtifact(PipelineError):
    exit_code = 4


class SolverFailure(PipelineError):
    exit_code = 5


@dataclass(frozen=True)
class TruthConfig:
    nominal_scale: float = 100.0
    spread: float = 0.3
    offset_range: float = 3.0
    position_error: float = 0.002


@dataclass(frozen=True)
class ManualConfig:
    reference_kg: float = 2.0
    gain_error: float = 0.001
    readings_per_sample: int = 100
    rows: int = 6
    cols: int = 3


@dataclass(frozen=True)
class SelfCalConfig:
    w_n: float = 1.0
    w_c: float = 1e4
    w_zeta: float = 1e-4
    frames_per_state: int = 3

    @property
    def weights(self) -> SelfCalWeights:
        return SelfCalWeights(self.w_n, self.w_c, self.w_zeta)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    robot: str | None = None
    out: str = "footcal-out"
    sampler: SamplerConfig = SamplerConfig()
    planner: PlannerConfig = PlannerConfig()
    noise: NoiseModel = NoiseModel()
    truth: TruthConfig = TruthConfig()
    manual: ManualConfig = ManualConfig()
    selfcal: SelfCalConfig = SelfCalConfig()
    solver: SolverSettings = DEFAULT_SETTINGS
    planner_solver: SolverSettings = PLANNER_SOLVER
    train: tuple[int, ...] = (0, 1, 2)
    test: tuple[int, ...] = (3, 4)
    stages: tuple[str, ...] = STAGES

    def echo(self) -> dict:
        """Plain-data view of the resolved config (the hash-chain root)."""
        d = dataclasses.asdict(self)
        d["planner"].pop("solver", None)
        d["sampler"].pop("seed", None)
        d["noise"].pop("seed", None)
        d.pop("out")
        return d

    def sha256(self) -> str:
        return hashlib.sha256(art.dumps_json(self.echo()).encode()).hexdigest()

    def model(self) -> RobotModel:
        return load_model(self.robot)

    def noise_for(self, stream: int) -> NoiseModel:
        return dataclasses.replace(self.noise, seed=self.seed * 1000 + stream)


_SECTIONS = {"sampler": SamplerConfig, "planner": PlannerConfig, "noise": NoiseModel,
             "truth": TruthConfig, "manual": ManualConfig, "selfcal": SelfCalConfig,
             "solver": SolverSettings, "planner_solver": SolverSettings}
_HIDDEN = {"sampler": {"seed"}, "planner": {"solver"}, "noise": {"seed"}}


def _section(name: str, cls, raw) -> object:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    allowed = {f.name for f in dataclasses.fields(cls)} - _HIDDEN.get(name, set())
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(sorted(unknown))}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def default_config_text() -> str:
    return resources.files("footcal").joinpath("data/default_config.yaml").read_text()


def config_from_dict(raw: dict, base_dir: Path | None = None) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if raw.get("schema") != CONFIG_SCHEMA:
        raise ConfigError(f"config schema must be {CONFIG_SCHEMA!r}, found {raw.get('schema')!r}")
    top = {"schema", "seed", "robot", "out", "split", "stages", *_SECTIONS}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    seed = raw.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    robot = raw.get("robot")
    if robot is not None:
        p = Path(robot)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"robot model {p} does not exist")
        robot = str(p)
    sections = {k: _section(k, cls, raw.get(k)) for k, cls in _SECTIONS.items()}
    split = raw.get("split") or {}
    if not isinstance(split, dict) or set(split) - {"train", "test"}:
        raise ConfigError("split must be a mapping with 'train' and 'test' lists")
    train = tuple(split.get("train", (0, 1, 2)))
    test = tuple(split.get("test", (3, 4)))
    count = sections["sampler"].count
    if not train:
        raise ConfigError("split.train must not be empty")
    if set(train) & set(test):
        raise ConfigError("split.train and split.test overlap")
    if any(not isinstance(i, int) or not 0 <= i < count for i in train + test):
        raise ConfigError(f"split indices must be integers in [0, {count})")
    stages = raw.get("stages", list(STAGES))
    if isinstance(stages, str):
        stages = [stages]
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stage(s): {', '.join(bad)}")
    sections["sampler"] = dataclasses.replace(sections["sampler"], seed=seed)
    sections["planner"] = dataclasses.replace(sections["planner"], solver=sections["planner_solver"])
    return PipelineConfig(seed=seed, robot=robot, out=str(raw.get("out", "footcal-out")),
                          train=train, test=test, stages=tuple(stages), **sections)


def load_config(path=None, seed: int | None = None, out=None) -> PipelineConfig:
    if path is None:
        text, base = default_config_text(), None
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        text, base = p.read_text(), p.parent
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if isinstance(raw, dict):
        if seed is not None:
            raw["seed"] = seed
        if out is not None:
            raw["out"] = str(out)
    return config_from_dict(raw, base)


# -- helpers -------------------------------------------------------------------------

def _require(out: Path, stages) -> dict[str, str]:
    """Verify upstream manifests; returns {manifest file: sha256}."""
    found = {}
    for st in stages:
        name = f"{st}.manifest.json"
        if not (out / name).exists():
            raise MissingPrerequisiteError(f"missing {out / name}; run the '{st}' stage first")
        try:
            art.verify_manifest(out, st)
        except art.MissingArtifactError as exc:
            raise MissingPrerequisiteError(f"missing artifact {exc} listed by the '{st}' manifest") from exc
        except art.CorruptArtifactError as exc:
            raise CorruptArtifact(str(exc)) from exc
        found[name] = art.file_sha256(out / name)
    return found


def _finish(out: Path, cfg: PipelineConfig, stage: str, inputs: dict, outputs: dict):
    rel = {str(Path(k).relative_to(out)) if Path(k).is_absolute() else k: v for k, v in outputs.items()}
    art.write_manifest(out, stage, inputs, rel, cfg.sha256())


def _read(fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except art.MissingArtifactError as exc:
        raise MissingPrerequisiteError(f"missing artifact {exc}") from exc
    except art.CorruptArtifactError as exc:
        raise CorruptArtifact(str(exc)) from exc


def load_samples(out: Path, model: RobotModel) -> list[DoubleSupportConfig]:
    _, arr = _read(art.read_csv_array, out / "samples.csv", S_SAMPLES, ["idx", "dx", "dy", "dtheta"])
    return [DoubleSupportConfig.create(model, dx, dy, dt) for _, dx, dy, dt in arr]


def _q_cols(n):
    return [f"q_{j}" for j in range(n)]


def traj_header(n: int) -> list[str]:
    return ["step", *_q_cols(n), *[f"u_{j}" for j in range(n)], "cop_x", "cop_y", "landmark_idx"]


def load_trajectory(out: Path, i: int, n: int) -> np.ndarray:
    _, arr = _read(art.read_csv_array, out / "plan" / f"traj_{i}.csv", S_TRAJ, traj_header(n))
    return arr[:, 1:1 + n]


def dataset_header(n: int) -> list[str]:
    return ["frame", *_q_cols(n), *[f"S_{j}" for j in range(8)], "cop_x", "cop_y", "grf",
            "cop_true_x", "cop_true_y", "grf_true"]


def load_dataset(out: Path, i: int, ds: DoubleSupportConfig, n: int, role: str) -> CalibrationDataset:
    _, a = _read(art.read_csv_array, out / "datasets" / f"ds_{i}.csv", S_DATASET, dataset_header(n))
    try:
        return CalibrationDataset(
            name=f"ds_{i}", ds=ds, index=a[:, 0].astype(int), q=a[:, 1:1 + n],
            voltages=a[:, 1 + n:9 + n], cop_model=a[:, 9 + n:11 + n], grf_model=a[:, 11 + n],
            cop_true=a[:, 12 + n:14 + n], grf_true=a[:, 14 + n], role=role)
    except ValueError as exc:
        raise CorruptArtifact(f"ds_{i}.csv: {exc}") from exc


def _cells_doc(cells) -> list[dict]:
    return [{"scale": c.scale, "offset": c.offset} for c in cells]


def _cells_from(doc, where: str) -> tuple[LoadCellParams, ...]:
    try:
        return tuple(LoadCellParams(float(c["scale"]), float(c["offset"])) for c in doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptArtifact(f"{where}: bad cell parameters ({exc})") from exc


def load_truth(out: Path) -> SensorTruth:
    doc = _read(art.read_json, out / "truth.json", S_TRUTH)
    try:
        return SensorTruth(_cells_from(doc["cells"], "truth.json"), np.array(doc["position_offsets"]))
    except (KeyError, ValueError) as exc:
        raise CorruptArtifact(f"truth.json: {exc}") from exc


def _mae_doc(r: MaeReport) -> dict:
    return r.as_dict()


# -- stages --------------------------------------------------------------------------

def stage_sample(cfg: PipelineConfig, out: Path):
    model = cfg.model()
    try:
        dss = sample_double_supports(cfg.sampler, model)
    except SamplerStallError as exc:
        raise SolverFailure(str(exc)) from exc
    sha = art.write_csv(out / "samples.csv", S_SAMPLES, ["idx", "dx", "dy", "dtheta"],
                        [(i, d.dx, d.dy, d.dtheta) for i, d in enumerate(dss)])
    _finish(out, cfg, "sample", {}, {"samples.csv": sha})


def stage_plan(cfg: PipelineConfig, out: Path):
    inputs = _require(out, PREREQUISITES["plan"])
    model = cfg.model()
    dss = load_samples(out, model)
    n = model.n_joints
    outputs, plans = {}, []
    for i, ds in enumerate(dss):
        t0 = time.perf_counter()
        try:
            q0 = reach_double_support(model, ds, cfg.planner)
            traj = plan_trajectory(model, ds, q0, cfg.planner)
        except (PlanningError, InvalidProblemError) as exc:
            raise SolverFailure(f"planning stance {i} failed: {exc}") from exc
        cert = certify(model, ds, traj, cfg.planner)
        logger.info("stance %d: %d states, %d steps, %.1f s, certified=%s", i, len(traj),
                    traj.summary["planning_steps"], time.perf_counter() - t0, cert.ok)
        if not cert.ok:
            raise SolverFailure(f"stance {i} trajectory failed certification: {'; '.join(cert.failures)}")
        rows = []
        for k in range(len(traj)):
            u = traj.u[k - 1] if k > 0 else np.zeros(n)
            rows.append((k, *traj.q[k], *u, *traj.cop[k], int(traj.landmark[k])))
        outputs[f"plan/traj_{i}.csv"] = art.write_csv(out / "plan" / f"traj_{i}.csv", S_TRAJ,
                                                      traj_header(n), rows)
        plans.append({"index": i, "states": len(traj), "summary": traj.summary,
                      "visits": traj.visits, "certificate": cert.as_dict()})
    outputs["plan/plan.json"] = art.write_json(out / "plan" / "plan.json", S_PLAN, {"stances": plans})
    _finish(out, cfg, "plan", inputs, outputs)


def _role(cfg: PipelineConfig, i: int) -> str | None:
    if i in cfg.train:
        return "train"
    if i in cfg.test:
        return "test"
    return None


def stage_simulate(cfg: PipelineConfig, out: Path):
    inputs = _require(out, PREREQUISITES["simulate"])
    model = cfg.model()
    dss = load_samples(out, model)
    n = model.n_joints
    t = cfg.truth
    truth = random_truth(cfg.seed, t.nominal_scale, t.spread, t.offset_range, t.position_error)
    outputs = {"truth.json": art.write_json(out / "truth.json", S_TRUTH, {
        "cells": _cells_doc(truth.cells), "position_offsets": truth.position_offsets})}
    for i, ds in enumerate(dss):
        q = load_trajectory(out, i, n)
        d = simulate_dataset(model, q, ds, truth, cfg.noise_for(i), name=f"ds_{i}",
                             frames_per_state=cfg.selfcal.frames_per_state)
        rows = [(int(k), *d.q[k], *d.voltages[k], *d.cop_model[k], d.grf_model[k], *d.cop_true[k],
                 d.grf_true[k]) for k in range(len(d))]
        outputs[f"datasets/ds_{i}.csv"] = art.write_csv(out / "datasets" / f"ds_{i}.csv", S_DATASET,
                                                        dataset_header(n), rows)
    _finish(out, cfg, "simulate", inputs, outputs)


def stage_manual(cfg: PipelineConfig, out: Path):
    inputs = _require(out, PREREQUISITES["manual-cal"])
    model = cfg.model()
    truth = load_truth(out)
    m = cfg.manual
    outputs, shoes = {}, {}
    for k, side in enumerate(("left", "right")):
        proto = GridProtocol.for_polygon(model.foot(side).sensing, m.rows, m.cols,
                                         readings_per_sample=m.readings_per_sample)
        try:
            cal = manual_calibrate_shoe(model, truth.shoe(side, model), cfg.noise_for(900 + k), side,
                                        m.reference_kg, m.gain_error, proto, cfg.solver)
        except ValueError as exc:
            raise SolverFailure(f"manual calibration of the {side} shoe failed: {exc}") from exc
        s = cal.samples
        rows = [(*s.hole[j], s.weight_kg[j], *s.forces[j], *s.cop[j]) for j in range(len(s))]
        outputs[f"manual/grid_{side}.csv"] = art.write_csv(
            out / "manual" / f"grid_{side}.csv", S_GRID,
            ["hole_x", "hole_y", "weight_kg", "f1", "f2", "f3", "f4", "cop_x", "cop_y"], rows)
        shoes[side] = {"cells": _cells_doc(cal.cells), "correction": cal.correction.values,
                       "grf": _mae_doc(cal.grf), "cop_raw": _mae_doc(cal.cop_raw),
                       "cop_corrected": _mae_doc(cal.cop_corrected), "skipped": s.skipped}
    outputs["manual/manual.json"] = art.write_json(out / "manual" / "manual.json", S_MANUAL, {"shoes": shoes})
    _finish(out, cfg, "manual-cal", inputs, outputs)


def _datasets(cfg: PipelineConfig, out: Path, model: RobotModel, which: str):
    dss = load_samples(out, model)
    idx = cfg.train if which == "train" else cfg.test
    return [load_dataset(out, i, dss[i], model.n_joints, which) for i in idx]


def stage_selfcal(cfg: PipelineConfig, out: Path):
    inputs = _require(out, PREREQUISITES["self-cal"])
    model = cfg.model()
    train = _datasets(cfg, out, model, "train")
    try:
        res = self_calibrate(train, cfg.selfcal.weights, cfg.solver)
    except (DegenerateDataError, IdentificationError, ValueError) as exc:
        raise SolverFailure(f"self-calibration failed: {exc}") from exc
    sha = art.write_json(out / "selfcal.json", S_SELFCAL, {
        "init": {"scale": res.init[0], "offset": res.init[1]},
        "cells": _cells_doc(res.cells),
        "correction_left": res.corr_left.values,
        "correction_right": res.corr_right.values,
        "train": list(res.train),
        "solve": res.solve,
    })
    _finish(out, cfg, "self-cal", inputs, {"selfcal.json": sha})


def load_selfcal(out: Path) -> SelfCalResult:
    doc = _read(art.read_json, out / "selfcal.json", S_SELFCAL)
    try:
        return SelfCalResult(
            cells=_cells_from(doc["cells"], "selfcal.json"),
            init=(float(doc["init"]["scale"]), float(doc["init"]["offset"])),
            corr_left=CorrectionParams(np.array(doc["correction_left"], dtype=float)),
            corr_right=CorrectionParams(np.array(doc["correction_right"], dtype=float)),
            train=tuple(doc["train"]), solve=doc["solve"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptArtifact(f"selfcal.json: {exc}") from exc


def stage_evaluate(cfg: PipelineConfig, out: Path):
    inputs = _require(out, PREREQUISITES["evaluate"])
    manual = None
    if (out / "manual-cal.manifest.json").exists():
        inputs.update(_require(out, ("manual-cal",)))
        manual = _read(art.read_json, out / "manual" / "manual.json", S_MANUAL)["shoes"]
    model = cfg.model()
    truth = load_truth(out)
    res = load_selfcal(out)
    train = _datasets(cfg, out, model, "train")
    test = _datasets(cfg, out, model, "test")
    try:
        reports = evaluate(res, test, train)
    except ValueError as exc:
        raise CorruptArtifact(str(exc)) from exc
    outputs = {}
    closure = {}
    for d in train + test:
        g, c = model_closure(d, truth)
        closure[d.name] = {"role": d.role, "frames": len(d), "grf": _mae_doc(g), "cop": _mae_doc(c)}
        rows = []
        for v in VARIANTS:
            grf, cop = measure(d, res, v)
            rows += [(int(d.index[k]), cop[k, 0], cop[k, 1], d.cop_model[k, 0], d.cop_model[k, 1],
                      grf[k], d.grf_model[k], v) for k in range(len(d)) if np.all(np.isfinite(cop[k]))]
        outputs[f"traces/{d.name}.csv"] = art.write_csv(
            out / "traces" / f"{d.name}.csv", S_TRACE,
            ["frame", "cop_meas_x", "cop_meas_y", "cop_model_x", "cop_model_y", "grf_meas", "grf_model",
             "variant"], rows)
    doc = {
        "config": cfg.echo(),
        "seeds": {"global": cfg.seed, "noise_streams": {d.name: cfg.noise_for(int(d.name.split("_")[1])).seed
                                                         for d in train + test}},
        "selfcal": {v: {r: {k: _mae_doc(m) for k, m in reports[v][r].items()} for r in reports[v]}
                    for v in reports},
        "closure": closure,
        "params": {"init": {"scale": res.init[0], "offset": res.init[1]},
                   "cells": _cells_doc(res.cells),
                   "correction_left": res.corr_left.values,
                   "correction_right": res.corr_right.values},
        "truth_cells": _cells_doc(truth.cells),
        "manual": manual,
        "train": [d.name for d in train],
        "test": [d.name for d in test],
    }
    outputs["result.json"] = art.write_json(out / "result.json", S_RESULT, doc)
    _finish(out, cfg, "evaluate", inputs, outputs)


STAGE_FUNCS = {
    "sample": stage_sample,
    "plan": stage_plan,
    "simulate": stage_simulate,
    "manual-cal": stage_manual,
    "self-cal": stage_selfcal,
    "evaluate": stage_evaluate,
}


def run_stage(cfg: PipelineConfig, stage: str, out=None):
    if stage not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}")
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        STAGE_FUNCS[stage](cfg, out)
    except ModelError as exc:
        raise ConfigError(f"robot model: {exc}") from exc
    logger.info("stage %s finished in %.1f s", stage, time.perf_counter() - t0)


def run_pipeline(cfg: PipelineConfig, out=None, stages=None):
    for st in stages or cfg.stages:
        run_stage(cfg, st, out)


# -- report --------------------------------------------------------------------------

def _fmt(r: dict | None) -> str:
    if r is None:
        return "-"
    return f"{r['mean']:.3f} ± {r['std']:.3f}"


def format_report(doc: dict) -> str:
    lines = []
    sc = doc["selfcal"]
    roles = [r for r in ROLES if any(r in sc[v] for v in sc)]
    if "test" not in roles:
        lines.append("WARNING: empty test set; only training errors are shown")
    lines.append("Self-calibration MAE against ground truth (GRF in N, CoP in mm)")
    head = f"{'variant':<10} {'metric':<9}" + "".join(f" {r:>20}" for r in roles)
    lines.append(head)
    for v in VARIANTS:
        for metric, unit in (("grf", "N"), ("cop", "mm")):
            cells = "".join(f" {_fmt(sc.get(v, {}).get(r, {}).get(metric)) + ' ' + unit:>20}" for r in roles)
            lines.append(f"{v:<10} {metric.upper() + ' [' + unit + ']':<9}{cells}")
    lines.append("")
    lines.append("Quasi-static closure per dataset (GRF in N, CoP in mm)")
    lines.append(f"{'dataset':<10} {'role':<6} {'frames':>6} {'GRF [N]':>18} {'CoP [mm]':>18}")
    for name, c in sorted(doc.get("closure", {}).items()):
        lines.append(f"{name:<10} {c['role']:<6} {c['frames']:>6} {_fmt(c['grf']):>18} {_fmt(c['cop']):>18}")
    if doc.get("manual"):
        lines.append("")
        lines.append("Manual calibration (GRF in N, CoP in mm)")
        lines.append(f"{'shoe':<6} {'GRF [N]':>18} {'CoP raw [mm]':>18} {'CoP corr. [mm]':>18}")
        for side, s in sorted(doc["manual"].items()):
            lines.append(f"{side:<6} {_fmt(s['grf']):>18} {_fmt(s['cop_raw']):>18} {_fmt(s['cop_corrected']):>18}")
    return "\n".join(lines)


def load_result(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "result.json"
    doc = _read(art.read_json, path, S_RESULT)
    try:
        sc = doc["selfcal"]
        for v in sc:
            for r in sc[v]:
                for m in ("grf", "cop"):
                    float(sc[v][r][m]["mean"]), float(sc[v][r][m]["std"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptArtifact(f"{path}: malformed result ({exc})") from exc
    return doc
