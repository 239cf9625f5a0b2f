import itertools
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from footcal.model import DoubleSupportConfig
from footcal.sampler import (SamplerConfig, SamplerStallError, config_distance, feet_collide,
                             sample_double_supports)

SEED0 = [(0.065, 0.15, 0.05), (-0.01, 0.12, -0.35), (-0.04, 0.10, -0.25),
         (0.02, 0.14, 0.35), (0.035, 0.17, -0.15)]


def _c(dx, dy, dt):
    return SimpleNamespace(dx=dx, dy=dy, dtheta=dt)


def test_distance_examples():
    assert config_distance(_c(0.1, 0.2, 0.3), _c(0.1, 0.2, 0.3), 1.0, 0.1) == 0.0
    assert config_distance(_c(0.03, 0.04, 0.5), _c(0, 0, 0), 1.0, 0.1) == pytest.approx(0.10, abs=1e-15)


@given(*[st.floats(-1, 1)] * 6)
def test_distance_symmetric(a, b, c, d, e, f):
    assert config_distance(_c(a, b, c), _c(d, e, f), 1.0, 0.1) == config_distance(_c(d, e, f), _c(a, b, c), 1.0, 0.1)


def test_collision_examples(model):
    width = float(np.ptp(model.left_foot.support[:, 1]))
    assert not feet_collide(DoubleSupportConfig.create(model, 0, 2 * width, 0), model)
    assert feet_collide(DoubleSupportConfig.create(model, 0, 0, 0), model)
    assert feet_collide(DoubleSupportConfig.create(model, 0, width, 0), model)
    assert not feet_collide(DoubleSupportConfig.create(model, 0, width + 1e-9, 0), model)


def test_frozen_seed_zero(model):
    got = [(d.dx, d.dy, d.dtheta) for d in sample_double_supports(SamplerConfig(), model)]
    assert np.allclose(got, SEED0, atol=1e-12)


def test_count_one(model):
    (ds,) = sample_double_supports(SamplerConfig(count=1, seed=3), model)
    assert not feet_collide(ds, model)


@pytest.mark.parametrize("seed", range(5))
def test_postconditions(model, seed):
    cfg = SamplerConfig(seed=seed)
    out = sample_double_supports(cfg, model)
    assert len(out) == cfg.count
    xs, ys, ts = cfg.grid()
    for ds in out:
        assert not feet_collide(ds, model)
        assert np.isclose(xs, ds.dx).any() and np.isclose(ys, ds.dy).any() and np.isclose(ts, ds.dtheta).any()
        assert ds.dx in xs and ds.dy in ys and ds.dtheta in ts
    for a, b in itertools.combinations(out, 2):
        assert config_distance(a, b, cfg.w_d, cfg.w_o) > cfg.threshold
    again = sample_double_supports(SamplerConfig(seed=seed), model)
    assert [d.offsets.tolist() for d in again] == [d.offsets.tolist() for d in out]


def test_stall(model):
    with pytest.raises(SamplerStallError, match="smaller distance threshold"):
        sample_double_supports(SamplerConfig(threshold=1.0), model)


@pytest.mark.parametrize("kw", [dict(resolution=(1, 8, 8)), dict(threshold=0.0),
                                dict(w_d=0.0, w_o=0.0), dict(w_d=-1.0), dict(count=0),
                                dict(dx_range=(0.1, 0.0))])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        SamplerConfig(**kw)
