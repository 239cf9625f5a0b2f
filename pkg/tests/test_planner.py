import dataclasses
import json

import numpy as np
import pytest

from footcal.model import (DoubleSupportConfig, collision_distances, foot_transform_residual,
                           modeled_cop, polygon_area, polygon_margin, sensing_polygon)
from footcal.numopt import finite_diff_jacobian
from footcal.pipeline import load_samples, load_trajectory
from footcal.planner import (PlannerConfig, Trajectory, _segment_problem, _StanceEval, certify,
                             make_landmarks, plan_segment, plan_trajectory, reach_double_support)

CFG = PlannerConfig()


@pytest.fixture(scope="module")
def aligned(model):
    ds = DoubleSupportConfig.create(model, 0.0, 0.1, 0.0)
    return ds, reach_double_support(model, ds, CFG)


def test_aligned_landmarks(model):
    ds = DoubleSupportConfig.create(model, 0.0, 0.1, 0.0)
    lm = make_landmarks(model, ds)
    assert model.foot_length == 0.16
    assert np.allclose(lm.points, [[0, -0.1], [0.05, -0.1], [0.05, 0], [0, 0]], atol=1e-12)
    # 0.04 m from the sensing front and rear edges
    assert np.isclose(model.left_foot.sensing[:, 0].max() - lm.points[:, 0].max(), 0.04)
    assert np.isclose(lm.points[:, 0].min() - model.left_foot.sensing[:, 0].min(), 0.04)
    assert polygon_area(lm.points) > 0
    assert np.allclose(lm.midpoints, 0.5 * (lm.points + np.roll(lm.points, -1, axis=0)))


def test_landmarks_symmetric_about_stance_axis(model):
    lm = make_landmarks(model, DoubleSupportConfig.create(model, 0.0, 0.13, 0.0))
    mirrored = lm.points * [1, -1] + [0, -0.13]
    for p in mirrored:
        assert np.min(np.linalg.norm(lm.points - p, axis=1)) < 1e-9


def test_landmarks_rotate_with_foot(model):
    base = make_landmarks(model, DoubleSupportConfig.create(model, 0.02, 0.14, 0.0))
    ds = DoubleSupportConfig.create(model, 0.02, 0.14, 0.3)
    rot = make_landmarks(model, ds)
    right_local = base.points[base.points[:, 1] < -0.05] - [0.02, -0.14]
    expect = right_local @ ds.foot_transform.rotation[:2, :2].T + [0.02, -0.14]
    for p in expect:
        assert np.min(np.linalg.norm(rot.points - p, axis=1)) < 1e-12
    left = base.points[base.points[:, 1] > -0.05]
    for p in left:
        assert np.min(np.linalg.norm(rot.points - p, axis=1)) < 1e-12
    poly = sensing_polygon(model, ds)
    assert all(polygon_margin(p, poly) > 0 for p in rot.points)


def test_target_at_current_cop_gives_zero_transitions(model, aligned):
    ds, q0 = aligned
    seg = plan_segment(model, ds, q0, modeled_cop(model, q0), CFG)
    assert np.all(seg.u == 0.0)
    assert np.all(seg.q == q0)


def test_forward_segment_satisfies_constraints(model, aligned):
    ds, q0 = aligned
    c0 = modeled_cop(model, q0)
    target = c0 + [0.02, 0.0]
    seg = plan_segment(model, ds, q0, target, CFG)
    assert seg.progress
    assert np.linalg.norm(seg.cop[-1] - target) < np.linalg.norm(c0 - target)
    poly = sensing_polygon(model, ds)
    for q in seg.q:
        assert np.linalg.norm(foot_transform_residual(model, q, ds.foot_transform)) < 1e-6
        assert collision_distances(model, q).min() > CFG.d_min - 1e-9
        assert polygon_margin(modeled_cop(model, q), poly) > 0
        assert np.all(q >= model.q_min - 1e-12) and np.all(q <= model.q_max + 1e-12)
    assert np.array_equal(seg.q[1:], seg.q[:-1] + seg.u)


def test_segment_jacobians_match_fd(model, aligned, rng):
    ds, q0 = aligned
    ev = _StanceEval(model, ds, CFG)
    prob = _segment_problem(ev, q0, modeled_cop(model, q0) + [0.01, 0.0], rng.normal(0, 0.01, 12))
    for _ in range(3):
        x = prob.x0 + rng.normal(0, 0.01, prob.x0.size)
        for f, jf in ((prob.cost, prob.cost_jacobian), (prob.equalities[0], prob.eq_jacobian),
                      (prob.inequalities[0], prob.ineq_jacobian)):
            J = jf(x)
            Jfd = finite_diff_jacobian(f, x)
            assert np.allclose(J, Jfd, atol=1e-5 * max(1.0, np.abs(Jfd).max()))


def test_unreachable_landmark_still_terminates(model, aligned):
    ds, q0 = aligned
    tight = dataclasses.replace(model, q_min=np.maximum(model.q_min, q0 - 0.08),
                                q_max=np.minimum(model.q_max, q0 + 0.08))
    traj = plan_trajectory(tight, ds, q0, CFG)
    assert traj.complete
    assert [v["landmark"] for v in traj.visits] == [0, 1, 2, 3, 4]
    assert any(v["reason"] == "stalled" for v in traj.visits)
    assert certify(tight, ds, traj, CFG).ok


def test_max_steps_gives_incomplete(model, aligned):
    ds, q0 = aligned
    traj = plan_trajectory(model, ds, q0, dataclasses.replace(CFG, max_steps=2))
    assert not traj.complete and traj.summary["planning_steps"] == 2


def _stored(run, model, i):
    doc = json.loads((run["out"] / "plan" / "plan.json").read_text())["stances"][i]
    q = load_trajectory(run["out"], i, model.n_joints)
    traj = Trajectory(q=q, u=np.diff(q, axis=0), cop=np.array([modeled_cop(model, x) for x in q]),
                      landmark=np.zeros(len(q)), step=np.zeros(len(q)), visits=doc["visits"])
    return doc, traj


@pytest.mark.parametrize("i", range(5))
def test_pipeline_trajectories(pipeline_run, model, i):
    ds = load_samples(pipeline_run["out"], model)[i]
    doc, traj = _stored(pipeline_run, model, i)
    visits = doc["visits"]
    idx = [v["landmark"] for v in visits]
    assert idx == sorted(idx) and idx[-1] == len(doc["summary"]["targets"]) - 1
    for v in visits:
        assert v["d"] < CFG.arrival_radius or v["d_prev"] - v["d"] < CFG.progress_tol
    visited = np.array([v["target"] for v in visits])
    assert polygon_area(visited) > 0
    assert doc["certificate"]["ok"]
    cert = certify(model, ds, traj, CFG)
    assert cert.min_cop_margin >= CFG.cop_margin - 1e-6
    assert cert.max_tf_residual < 1e-6 and cert.max_limit_violation <= 1e-6
    assert cert.min_capsule_distance >= CFG.d_min - 1e-6


def test_replay_is_bit_exact(pipeline_run, model):
    ds = load_samples(pipeline_run["out"], model)[0]
    stored = load_trajectory(pipeline_run["out"], 0, model.n_joints)
    traj = plan_trajectory(model, ds, reach_double_support(model, ds, CFG), CFG)
    assert np.array_equal(traj.q, stored)
    replay = [traj.q[0]]
    for u in traj.u:
        replay.append(replay[-1] + u)
    assert np.array_equal(np.array(replay), traj.q)


@pytest.mark.parametrize("kw", [dict(horizon=1), dict(d_min=0.0), dict(arrival_radius=-1.0),
                                dict(cop_weight=(-1.0, 1.0)), dict(max_steps=0)])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        PlannerConfig(**kw)
