import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from footcal.model import default_model
from footcal.pipeline import STAGES, load_config, run_stage

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    """One full default pipeline run, shared by every test that needs real trajectories."""
    out = tmp_path_factory.mktemp("run_a")
    cfg = load_config(None, out=out)
    timings = {}
    for st in STAGES:
        t0 = time.perf_counter()
        run_stage(cfg, st)
        timings[st] = time.perf_counter() - t0
    return {"out": Path(out), "cfg": cfg, "timings": timings}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
