import numpy as np
import pytest
from hypothesis import given, strategies as st

from footcal.numopt import (CONVERGED, STALLED, InvalidProblemError, NlpProblem, NlsProblem,
                            SolverSettings, finite_diff_jacobian, min_norm_nonnegative, nlp_solve,
                            nls_solve)


def test_scalar_linear_residual_solves_exactly():
    rep = nls_solve(NlsProblem(lambda x: x - 3.0, np.array([0.0])))
    assert rep.x[0] == pytest.approx(3.0, abs=1e-8)
    assert rep.cost < 1e-16
    assert rep.converged


def test_banana_valley():
    res = lambda x: np.array([x[0] - 1.0, 10.0 * (x[1] - x[0] ** 2)])
    rep = nls_solve(NlsProblem(res, np.array([-1.2, 1.0])))
    assert np.allclose(rep.x, [1.0, 1.0], atol=1e-7)
    assert rep.cost < 1e-12


def test_affine_fit_recovers_generator():
    S = np.linspace(0.0, 0.5, 100)
    F = 50.0 * S + 1.0
    rep = nls_solve(NlsProblem(lambda p: p[0] * S + p[1] - F, np.array([1.0, 0.0])))
    assert rep.x[0] == pytest.approx(50.0, rel=1e-8)
    assert rep.x[1] == pytest.approx(1.0, rel=1e-8)


def test_nonfinite_start_is_invalid():
    with pytest.raises(InvalidProblemError):
        nls_solve(NlsProblem(lambda x: np.array([np.inf * x[0]]), np.array([-1.0])))


def test_rank_collapse_without_progress_is_a_report_not_an_error():
    rep = nls_solve(NlsProblem(lambda x: np.array([1.0, 1.0]), np.array([0.0, 0.0])))
    assert rep.reason in (STALLED, CONVERGED)
    assert rep.cost == pytest.approx(2.0)


def test_nls_is_deterministic():
    res = lambda x: np.array([x[0] - 1.0, 10.0 * (x[1] - x[0] ** 2), x[0] * x[1]])
    a = nls_solve(NlsProblem(res, np.array([-1.2, 1.0])))
    b = nls_solve(NlsProblem(res, np.array([-1.2, 1.0])))
    assert a.x.tobytes() == b.x.tobytes() and a.cost_history == b.cost_history


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.floats(0.1, 20))
def test_accepted_steps_never_increase_cost(x0, k):
    res = lambda x: np.array([x[0] - 1.0, k * (x[1] - x[0] ** 2), np.sin(x[0] + x[1])])
    rep = nls_solve(NlsProblem(res, np.array(x0)))
    h = np.array(rep.cost_history)
    assert np.all(np.diff(h) <= 0.0)
    assert rep.cost <= h[0]


def test_bounds_are_respected_by_projection():
    rep = nls_solve(NlsProblem(lambda x: x - 3.0, np.array([0.0]), lower=np.array([-1.0]),
                               upper=np.array([2.0])))
    assert rep.x[0] == 2.0


def test_nlp_active_inequality():
    prob = NlpProblem(cost=lambda x: np.array([x[0] - 2.0]), x0=np.array([0.0]),
                      inequalities=[lambda x: np.array([1.0 - x[0]])])
    rep = nlp_solve(prob)
    assert rep.converged
    assert rep.x[0] == pytest.approx(1.0, abs=1e-6)


def test_nlp_equality_projection():
    prob = NlpProblem(cost=lambda x: x.copy(), x0=np.array([0.0, 0.0]),
                      equalities=[lambda x: np.array([x[0] + x[1] - 1.0])])
    rep = nlp_solve(prob)
    assert rep.converged
    assert np.allclose(rep.x, [0.5, 0.5], atol=1e-6)
    assert rep.max_violation < 1e-6


def test_nlp_kinematic_equality(model):
    from footcal.model import modeled_com
    q0 = model.q_nominal.copy()
    target = modeled_com(model, q0)[2] - 0.01
    prob = NlpProblem(cost=lambda q: q - q0, x0=q0,
                      equalities=[lambda q: np.array([modeled_com(model, q)[2] - target])],
                      lower=model.q_min, upper=model.q_max)
    rep = nlp_solve(prob)
    assert rep.converged
    assert abs(modeled_com(model, rep.x)[2] - target) < 1e-6


def test_nlp_infeasible_returns_stalled_best():
    prob = NlpProblem(cost=lambda x: x.copy(), x0=np.array([0.0]),
                      equalities=[lambda x: np.array([x[0] ** 2 + 1.0])],
                      settings=SolverSettings(max_outer=4))
    rep = nlp_solve(prob)
    assert not rep.converged
    assert rep.max_violation == pytest.approx(1.0, abs=1e-3)


def test_nlp_violation_history_non_increasing():
    prob = NlpProblem(cost=lambda x: np.array([x[0] - 3.0, x[1] + 1.0]), x0=np.array([0.0, 0.0]),
                      equalities=[lambda x: np.array([x[0] * x[1] - 1.0])],
                      inequalities=[lambda x: np.array([x[1] - 0.2])])
    rep = nlp_solve(prob)
    assert np.all(np.diff(rep.violation_history) <= 0)


def test_nlp_nonfinite_cost_is_invalid():
    prob = NlpProblem(cost=lambda x: np.array([np.nan]), x0=np.array([0.0]))
    with pytest.raises(InvalidProblemError):
        nlp_solve(prob)


def test_nlp_clamps_start_to_bounds():
    prob = NlpProblem(cost=lambda x: x.copy(), x0=np.array([5.0]), lower=np.array([1.0]),
                      upper=np.array([2.0]))
    assert prob.x0[0] == 2.0
    assert nlp_solve(prob).x[0] == pytest.approx(1.0)


def test_fd_jacobian_of_linear_map(rng):
    A = rng.normal(size=(4, 3))
    J = finite_diff_jacobian(lambda x: A @ x, rng.normal(size=3))
    assert np.allclose(J, A, atol=1e-9)


def test_fd_gradient_of_product():
    J = finite_diff_jacobian(lambda x: np.array([x[0] * x[1]]), np.array([2.0, 3.0]))
    assert np.allclose(J, [[3.0, 2.0]], atol=1e-6)


def test_fd_reports_offending_coordinate():
    f = lambda x: np.array([x[0], np.sqrt(x[1]) if x[1] >= 0 else np.nan])
    with pytest.raises(InvalidProblemError, match="coordinate 1"):
        finite_diff_jacobian(f, np.array([1.0, 0.0]))


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(gtol=0.0)
    with pytest.raises(ValueError):
        SolverSettings(max_iter=0)


def test_min_norm_nonnegative_symmetric_split():
    A = np.array([[1.0, 1.0, 1.0, 1.0], [1.0, -1.0, -1.0, 1.0], [1.0, 1.0, -1.0, -1.0]])
    x = min_norm_nonnegative(A, np.array([4.0, 0.0, 0.0]))
    assert np.allclose(x, 1.0, atol=1e-12)


def test_min_norm_nonnegative_infeasible():
    with pytest.raises(ValueError):
        min_norm_nonnegative(np.array([[1.0, 1.0]]), np.array([-1.0]))


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2))
def test_min_norm_nonnegative_balances(c):
    pts = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    A = np.vstack([np.ones(4), pts.T])
    x = min_norm_nonnegative(A, np.array([10.0, 10 * c[0], 10 * c[1]]))
    assert np.all(x >= 0)
    assert np.allclose(A @ x, [10.0, 10 * c[0], 10 * c[1]], atol=1e-9)
