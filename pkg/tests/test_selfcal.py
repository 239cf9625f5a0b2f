import numpy as np
import pytest

from footcal.manual_cal import CorrectionParams, UnderdeterminedError, mae_cop
from footcal.model import DoubleSupportConfig
from footcal.numopt import finite_diff_jacobian
from footcal.pipeline import _datasets, load_selfcal
from footcal.selfcal import (CalibrationDataset, DegenerateDataError, SelfCalWeights,
                             corrected_double_cop, evaluate, fit_double_correction,
                             identification_residual, identify_params, initial_guess, measure,
                             self_calibrate, zeta_from_cells)
from footcal.sensors import LoadCellParams, random_truth

STANCES = [(0.0, 0.1, 0.0), (0.05, 0.14, 0.2), (-0.03, 0.16, -0.3), (0.02, 0.12, 0.1)]


def synth(model, stance, cells, rng, k=80, name="d", role="train", right_share=None):
    """Noiseless recording with exact references: random non-negative cell loads summing to the weight."""
    ds = DoubleSupportConfig.create(model, *stance)
    G = model.weight
    w = rng.dirichlet(np.full(8, 2.0), size=k)
    if right_share is not None:
        w[:, :4] *= (1 - right_share) / w[:, :4].sum(axis=1, keepdims=True)
        w[:, 4:] *= right_share / np.maximum(w[:, 4:].sum(axis=1, keepdims=True), 1e-300)
    f = w * G
    a = np.array([c.scale for c in cells])
    b = np.array([c.offset for c in cells])
    S = (f - b) / a
    cop = f @ ds.sensor_points / G
    return CalibrationDataset(name=name, ds=ds, index=np.arange(k), q=np.zeros((k, model.n_joints)),
                              voltages=S, cop_model=cop, grf_model=np.full(k, G),
                              cop_true=cop.copy(), grf_true=np.full(k, G), role=role)


@pytest.fixture
def hetero():
    return random_truth(0).cells


def test_homogeneous_initial_guess_exact(model, rng):
    cells = tuple(LoadCellParams(87.0, -1.5) for _ in range(8))
    data = [synth(model, s, cells, rng, name=str(i)) for i, s in enumerate(STANCES[:3])]
    c0, d0 = initial_guess(data)
    assert c0 == pytest.approx(87.0, rel=1e-6) and d0 == pytest.approx(-1.5, rel=1e-6)


def test_initial_guess_permutation_invariant(model, rng, hetero):
    data = [synth(model, s, hetero, rng, name=str(i)) for i, s in enumerate(STANCES[:3])]
    base = initial_guess(data)
    perm = rng.permutation(len(data[0]))
    shuffled = [CalibrationDataset(d.name, d.ds, d.index[perm], d.q[perm], d.voltages[perm],
                                   d.cop_model[perm], d.grf_model[perm]) for d in data[::-1]]
    assert np.allclose(initial_guess(shuffled), base, rtol=1e-10)


def test_initial_guess_degenerate(model, rng, hetero):
    d = synth(model, STANCES[0], hetero, rng)
    flat = CalibrationDataset("flat", d.ds, d.index, d.q, np.ones_like(d.voltages), d.cop_model, d.grf_model)
    with pytest.raises(DegenerateDataError):
        initial_guess([flat])


def test_heterogeneous_truth_defeats_initial_guess(model, rng, hetero):
    data = [synth(model, s, hetero, rng, name=str(i)) for i, s in enumerate(STANCES[:3])]
    res = self_calibrate(data, SelfCalWeights(w_zeta=0.0))
    rep = evaluate(res, [], data)
    assert rep["init"]["train"]["cop"].mean > 5.0
    assert rep["init"]["train"]["grf"].mean > 100 * rep["selfcal"]["train"]["grf"].mean


def test_noiseless_recovery(model, rng, hetero):
    train = [synth(model, s, hetero, rng, name=f"tr{i}") for i, s in enumerate(STANCES[:3])]
    test = [synth(model, STANCES[3], hetero, rng, name="te", role="test")]
    res = self_calibrate(train, SelfCalWeights(w_zeta=0.0))
    # offsets keep some gauge freedom under a constant GRF reference; scales do not
    assert np.allclose(zeta_from_cells(res.cells)[0::2], zeta_from_cells(hetero)[0::2], rtol=1e-6)
    rep = evaluate(res, test, train)
    for variant in ("selfcal", "corrected"):
        assert rep[variant]["test"]["grf"].mean < 0.05
        assert rep[variant]["test"]["cop"].mean < 1.0
    assert rep["init"]["test"]["cop"].mean > rep["selfcal"]["test"]["cop"].mean


def test_perfect_sensors_all_variants_near_zero(model, rng):
    cells = tuple(LoadCellParams(100.0, 0.0) for _ in range(8))
    train = [synth(model, s, cells, rng, name=f"tr{i}") for i, s in enumerate(STANCES[:3])]
    res = self_calibrate(train)
    rep = evaluate(res, [], train)
    for variant in rep:
        assert rep[variant]["train"]["grf"].mean < 1e-6
        assert rep[variant]["train"]["cop"].mean < 1e-6


def test_identification_jacobian(model, rng, hetero):
    d = synth(model, STANCES[1], hetero, rng, k=60)
    z0 = np.tile([90.0, -1.0], 8)
    args = (d.voltages, np.broadcast_to(d.positions, (60, 8, 2)), d.cop_model, d.grf_model, z0,
            SelfCalWeights(w_zeta=0.3))
    for _ in range(3):
        z = z0 + rng.normal(0, [5, 0.5] * 8)
        _, J = identification_residual(z, *args, jacobian=True)
        Jfd = finite_diff_jacobian(lambda x: identification_residual(x, *args), z)
        assert np.allclose(J, Jfd, rtol=1e-5, atol=1e-6)


def test_identification_never_worse_than_start(model, rng, hetero):
    data = [synth(model, s, hetero, rng, name=str(i)) for i, s in enumerate(STANCES[:3])]
    init = initial_guess(data)
    _, rep = identify_params(data, init)
    assert rep.cost <= rep.cost_history[0]


def test_regularization_monotone(model, rng, hetero):
    data = [synth(model, s, hetero, rng, name=str(i)) for i, s in enumerate(STANCES[:3])]
    for d in data:
        d.voltages += rng.normal(0, 2e-3, d.voltages.shape)
        d.cop_model += rng.normal(0, 2e-3, d.cop_model.shape)
    init = initial_guess(data)
    z0 = np.tile(init, 8)
    dist = []
    for w in (1e-4, 1.0, 1e3):
        cells, _ = identify_params(data, init, SelfCalWeights(w_zeta=w))
        dist.append(np.linalg.norm(zeta_from_cells(cells) - z0))
    assert dist[0] >= dist[1] >= dist[2]


def test_zero_correction_reduces_to_eight_cell_cop(model, rng, hetero):
    d = synth(model, STANCES[2], hetero, rng)
    cop, valid = corrected_double_cop(d.voltages, hetero, CorrectionParams.zero(), CorrectionParams.zero(), d.ds)
    assert valid.all()
    assert np.allclose(cop, d.cop_model, atol=1e-12, rtol=0)


def test_left_only_load(model, rng, hetero):
    d = synth(model, STANCES[1], hetero, rng, right_share=0.0)
    corr_l = CorrectionParams(rng.normal(0, 1e-3, 16))
    corr_r = CorrectionParams(rng.normal(0, 1e-3, 16))
    cop, _ = corrected_double_cop(d.voltages, hetero, corr_l, corr_r, d.ds)
    f = np.array([[c.force(s) for c, s in zip(hetero, row)] for row in d.voltages])
    from footcal.manual_cal import corrected_cop
    c_l = f[:, :4] @ d.ds.sensor_points[:4] / f[:, :4].sum(axis=1, keepdims=True)
    expect = corrected_cop(c_l, f[:, :4], corr_l)
    assert np.allclose(cop, expect, atol=1e-12)


def test_force_floor_marks_invalid(model, rng, hetero):
    d = synth(model, STANCES[0], hetero, rng)
    S = d.voltages.copy()
    S[0] = [-c.offset / c.scale for c in hetero]     # every cell reads zero force
    cop, valid = corrected_double_cop(S, hetero, CorrectionParams.zero(), CorrectionParams.zero(), d.ds)
    assert not valid[0] and np.isnan(cop[0]).all() and valid[1:].all()


def test_unbiased_correction_is_zero(model, rng, hetero):
    data = [synth(model, s, hetero, rng, name=str(i)) for i, s in enumerate(STANCES[:3])]
    cl, cr = fit_double_correction(data, hetero)
    scale = np.abs(np.concatenate([cl.values, cr.values]))
    assert scale.max() < 1e-8


def test_correction_duplication_invariant(model, rng, hetero):
    data = [synth(model, s, hetero, rng, name=str(i)) for i, s in enumerate(STANCES[:3])]
    for d in data:
        d.cop_model += 0.002 * np.sin(50 * d.cop_model[:, ::-1])
    twice = [CalibrationDataset(d.name, d.ds, np.tile(d.index, 2), np.tile(d.q, (2, 1)),
                                np.tile(d.voltages, (2, 1)), np.tile(d.cop_model, (2, 1)),
                                np.tile(d.grf_model, 2)) for d in data]
    a = np.concatenate([c.values for c in fit_double_correction(data, hetero)])
    b = np.concatenate([c.values for c in fit_double_correction(twice, hetero)])
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9 * np.abs(a).max())


def test_correction_underdetermined(model, rng, hetero):
    d = synth(model, STANCES[0], hetero, rng, k=80)
    rep = np.repeat(d.voltages[:5], 16, axis=0)
    small = CalibrationDataset("rep", d.ds, np.arange(80), d.q, rep, np.repeat(d.cop_model[:5], 16, axis=0),
                               d.grf_model)
    with pytest.raises(UnderdeterminedError):
        fit_double_correction([small], hetero)


def test_overlap_is_rejected(model, rng, hetero):
    data = [synth(model, s, hetero, rng, name=str(i)) for i, s in enumerate(STANCES[:3])]
    res = self_calibrate(data)
    with pytest.raises(ValueError, match="share frames"):
        evaluate(res, [data[0].with_role("test")], data)


def test_too_few_frames(model, rng, hetero):
    d = synth(model, STANCES[0], hetero, rng)
    with pytest.raises(ValueError, match="frames"):
        CalibrationDataset("x", d.ds, d.index[:10], d.q[:10], d.voltages[:10], d.cop_model[:10], d.grf_model[:10])


@pytest.mark.parametrize("kw", [dict(w_c=0.0), dict(w_n=-1.0), dict(w_zeta=-1e-3)])
def test_invalid_weights(kw):
    with pytest.raises(ValueError):
        SelfCalWeights(**kw)


@pytest.fixture(scope="module")
def pipeline_selfcal(pipeline_run, model):
    out, cfg = pipeline_run["out"], pipeline_run["cfg"]
    return load_selfcal(out), _datasets(cfg, out, model, "train"), _datasets(cfg, out, model, "test")


def test_correction_does_not_hurt_training_fit(pipeline_selfcal):
    res, train, test = pipeline_selfcal
    rep = evaluate(res, test, train, reference="model")
    assert rep["corrected"]["train"]["cop"].mean <= rep["selfcal"]["train"]["cop"].mean


def test_initial_guess_worse_than_identified(pipeline_selfcal):
    res, train, test = pipeline_selfcal
    rep = evaluate(res, test, train)
    for role in ("train", "test"):
        for metric in ("grf", "cop"):
            assert rep["init"][role][metric].mean > rep["selfcal"][role][metric].mean


def test_measure_variants_share_grf(pipeline_selfcal):
    res, train, _ = pipeline_selfcal
    g1, _ = measure(train[0], res, "selfcal")
    g2, _ = measure(train[0], res, "corrected")
    assert np.array_equal(g1, g2)
