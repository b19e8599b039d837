import numpy as np
import pytest

from uwbvo.core import UWB, FlightPlan, Position2D, Sample
from uwbvo.config import default_pipeline_params
from uwbvo.pipeline import PipelineParams


@pytest.fixture(scope="session")
def desk_params() -> PipelineParams:
    return default_pipeline_params()


@pytest.fixture
def small_plan() -> FlightPlan:
    return FlightPlan(
        stops=(Position2D(0.0, 0.0), Position2D(1000.0, 0.0), Position2D(1000.0, 1000.0)),
        dwell_ms=15000.0,
        cruise_mm_s=500.0,
        accel_mm_s2=1000.0,
        closed=False,
    )


def make_stream(ts_ms, xy, source=UWB):
    return [
        Sample(int(t), Position2D(float(p[0]), float(p[1])), source)
        for t, p in zip(ts_ms, xy)
    ]


def constant_position_stream(sigma, n, rate_hz=27.0, seed=0, center=(1000.0, 500.0)):
    rng = np.random.default_rng(seed)
    ts = np.round(np.arange(n) * 1000.0 / rate_hz).astype(np.int64)
    xy = np.asarray(center) + rng.normal(0.0, sigma, size=(n, 2))
    return make_stream(ts, xy)


def positions(samples):
    out = np.empty((len(samples), 2))
    for i, s in enumerate(samples):
        out[i, 0] = s.pos.x
        out[i, 1] = s.pos.y
    return out


def path_length(samples) -> float:
    xy = positions(samples)
    return float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))
