import math

import numpy as np
import pytest

from conftest import constant_position_stream, make_stream, path_length, positions
from uwbvo.ekf import (
    CtraFilter,
    CtraParams,
    CtraState,
    MeasurementBuilder,
    _segment_measurements,
    ctra_jacobian,
    predict_state,
    pseudo_measurements,
    run_filter,
    wrap_angle,
)


def random_states(rng, n, yaw_rates):
    states = np.empty((n, 6))
    states[:, 0] = rng.uniform(-5000, 5000, n)
    states[:, 1] = rng.uniform(-5000, 5000, n)
    states[:, 2] = rng.uniform(0, 2000, n)
    states[:, 3] = rng.uniform(-math.pi, math.pi, n)
    states[:, 4] = rng.choice(yaw_rates, n) if yaw_rates is not None else 0.0
    states[:, 5] = rng.uniform(-1000, 1000, n)
    return states


def fd_jacobian(state, dt, step=1e-6):
    jac = np.empty((6, 6))
    for j in range(6):
        hi = state.copy()
        lo = state.copy()
        hi[j] += step
        lo[j] -= step
        f_hi = predict_state(hi, dt)
        f_lo = predict_state(lo, dt)
        diff = f_hi - f_lo
        diff[3] = wrap_angle(f_hi[3] - f_lo[3])  # heading column on the circle
        jac[:, j] = diff / (2 * step)
    return jac


class TestPredictState:
    def test_stationary_fixed_point(self):
        for psi in (-2.0, 0.0, 1.3):
            s = np.array([12.0, -7.0, 0.0, psi, 0.0, 0.0])
            out = predict_state(s, 0.1)
            assert out[0] == 12.0 and out[1] == -7.0

    def test_arc_example(self):
        # direct evaluation of the arc update with v/psi_dot = 10000 mm
        s = np.array([0.0, 0.0, 1000.0, 0.0, 0.1, 0.0])
        out = predict_state(s, 0.1)
        assert out[0] == pytest.approx(10000.0 * math.sin(0.01), rel=1e-12)
        assert out[1] == pytest.approx(10000.0 * (1.0 - math.cos(0.01)), rel=1e-12)
        assert out[0] == pytest.approx(99.9983, abs=1e-4)
        assert out[1] == pytest.approx(0.49999, abs=1e-5)
        assert out[2] == 1000.0
        assert out[3] == pytest.approx(0.01)

    def test_branch_continuity(self):
        # the residual branch gap is v * dt^2 * |psi_dot| / 2, so the bound
        # applies over the sampling envelope (dt <= 50 ms, v <= 1 m/s)
        rng = np.random.default_rng(0)
        for _ in range(200):
            s = random_states(rng, 1, None)[0]
            s[2] = rng.uniform(0.0, 1000.0)
            dt = rng.uniform(0.005, 0.05)
            base = s.copy()
            base[4] = 0.0
            straight = predict_state(base, dt)
            for eps in (1e-12, 1e-6, -1e-6):
                arc = base.copy()
                arc[4] = eps
                out = predict_state(arc, dt)
                assert abs(out[0] - straight[0]) < 1e-6
                assert abs(out[1] - straight[1]) < 1e-6

    def test_heading_normalized(self):
        s = np.array([0.0, 0.0, 0.0, 3.0, 5.0, 0.0])
        out = predict_state(s, 1.0)
        assert -math.pi < out[3] <= math.pi


class TestJacobian:
    def test_degenerate_state_structure(self):
        for psi in (0.0, 0.7, -2.1):
            s = np.array([5.0, 6.0, 0.0, psi, 0.0, 0.0])
            dt = 0.05
            jac = ctra_jacobian(s, dt)
            expected = np.eye(6)
            expected[0, 2] = dt * math.cos(psi)
            expected[1, 2] = dt * math.sin(psi)
            expected[2, 5] = dt
            expected[3, 4] = dt
            assert np.allclose(jac, expected, atol=1e-15)

    @pytest.mark.parametrize("yaw_rates", [(0.5, -1.5, 2.0), (0.0, 1e-9, -1e-7)])
    def test_matches_finite_differences(self, yaw_rates):
        rng = np.random.default_rng(42)
        states = random_states(rng, 300, yaw_rates)
        for s in states:
            dt = rng.uniform(0.005, 0.1)
            analytic = ctra_jacobian(s, dt)
            numeric = fd_jacobian(s, dt)
            scale = np.maximum(1.0, np.abs(analytic))
            assert np.all(np.abs(analytic - numeric) <= 1e-5 * scale)

    def test_reflection_symmetry(self):
        # g(Sx) = S g(x) with S flipping y, psi, psi_dot => J(Sx) = S J(x) S
        mirror = np.diag([1.0, -1.0, 1.0, -1.0, -1.0, 1.0])
        rng = np.random.default_rng(3)
        for s in random_states(rng, 50, (0.3, -0.9, 1.7)):
            dt = 0.08
            assert np.allclose(
                predict_state(mirror @ s, dt), mirror @ predict_state(s, dt)
            )
            assert np.allclose(
                ctra_jacobian(mirror @ s, dt),
                mirror @ ctra_jacobian(s, dt) @ mirror,
                atol=1e-12,
            )


class TestFilterStep:
    def test_huge_r_keeps_prediction(self):
        params = CtraParams(r_diag=(1e12,) * 6)
        filt = CtraFilter(params)
        filt.reset(0.0, 0.0)
        filt.state = np.array([0.0, 0.0, 1000.0, 0.0, 0.0, 0.0])
        predicted = predict_state(filt.state, 0.1)
        filt.step(np.array([500.0, 500.0, 0.0, 1.0, 0.0, 0.0]), 0.1)
        assert np.allclose(filt.state, predicted, atol=1e-4)

    def test_zero_q_huge_r_trace_non_increasing(self):
        # stationary with certain rates: prediction cannot spread variance
        params = CtraParams(q_diag=(0.0,) * 6, r_diag=(1e9,) * 6)
        filt = CtraFilter(params)
        filt.reset(0.0, 0.0)
        filt.P = np.diag([1000.0, 1000.0, 0.0, 1.0, 0.0, 0.0])
        traces = [np.trace(filt.P)]
        for _ in range(20):
            filt.step(np.zeros(6), 0.05)
            traces.append(np.trace(filt.P))
        assert all(b <= a + 1e-9 for a, b in zip(traces, traces[1:]))

    def test_covariance_symmetric_psd_through_noisy_run(self):
        rng = np.random.default_rng(5)
        params = CtraParams()
        filt = CtraFilter(params)
        filt.reset(0.0, 0.0)
        for _ in range(300):
            u = np.array(
                [
                    rng.normal(0, 100),
                    rng.normal(0, 100),
                    rng.uniform(0, 800),
                    rng.uniform(-math.pi, math.pi),
                    rng.normal(0, 0.5),
                    rng.normal(0, 300),
                ]
            )
            filt.step(u, 0.037)
            assert np.allclose(filt.P, filt.P.T, rtol=1e-9, atol=1e-12)
            assert np.linalg.eigvalsh(filt.P).min() >= -1e-9

    def test_fifty_step_constant_velocity_tracking(self):
        # exact straight-line measurements: terminal position error < 1 mm
        params = CtraParams()
        dt = 0.037
        filt = CtraFilter(params)
        filt.reset(0.0, 0.0)
        for k in range(1, 51):
            x = 1000.0 * k * dt
            filt.step(np.array([x, 0.0, 1000.0, 0.0, 0.0, 0.0]), dt)
        assert abs(filt.state[0] - 1000.0 * 50 * dt) < 1.0
        assert abs(filt.state[1]) < 1.0


class TestPseudoMeasurements:
    def test_uniform_straight_line(self):
        ts = [0, 37, 74]
        samples = make_stream(ts, [(1000.0 * t / 1000.0, 0.0) for t in ts])
        u = pseudo_measurements(samples)
        assert u[0] == samples[-1].pos.x and u[1] == 0.0
        assert u[2] == pytest.approx(1000.0, rel=1e-9)
        assert u[3] == pytest.approx(0.0, abs=1e-12)
        assert u[4] == pytest.approx(0.0, abs=1e-9)
        assert u[5] == pytest.approx(0.0, abs=1e-6)

    def test_circle_yaw_rate(self):
        # three samples on a circle: chord headings recover omega within 1%
        r, omega, dt = 500.0, 1.0, 0.037
        ts = [0, 37, 74]
        pts = [(r * math.cos(omega * t / 1000.0), r * math.sin(omega * t / 1000.0)) for t in ts]
        u = pseudo_measurements(make_stream(ts, pts))
        assert u[4] == pytest.approx(omega, rel=0.01)

    def test_repeated_identical_positions(self):
        samples = make_stream([0, 37, 74], [(5.0, 5.0)] * 3)
        u = pseudo_measurements(samples, prev_psi=1.25)
        assert u[2] == 0.0 and u[5] == 0.0
        assert u[3] == 1.25  # heading retained
        assert u[4] == 0.0

    def test_requires_three_samples(self):
        samples = make_stream([0, 37], [(0.0, 0.0), (1.0, 0.0)])
        with pytest.raises(ValueError, match="insufficient history"):
            pseudo_measurements(samples)

    def test_slow_drift_gated_to_stationary(self):
        ts = [0, 37, 74]
        samples = make_stream(ts, [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])  # 27 mm/s
        u = pseudo_measurements(samples, prev_psi=0.5, min_speed_mm_s=100.0)
        assert u[2] == 0.0 and u[3] == 0.5


def test_builder_matches_vectorized_derivation():
    params = CtraParams()
    for seed in range(5):
        rng = np.random.default_rng(seed)
        n = 250
        ts = np.cumsum(rng.integers(4, 60, size=n)).astype(np.int64)
        xy = np.cumsum(rng.normal(0, 30, size=(n, 2)), axis=0)
        samples = make_stream(ts, xy)
        builder = MeasurementBuilder(params.diff_span_s, params.min_speed_mm_s)
        incremental = [builder.push(s) for s in samples]
        vectorized = _segment_measurements(
            ts, xy.astype(float), params.diff_span_s, params.min_speed_mm_s
        )
        for k in range(n):
            if incremental[k] is None:
                assert np.isnan(vectorized[k]).all()
            else:
                assert np.allclose(incremental[k], vectorized[k], rtol=1e-9, atol=1e-9)


class TestRunFilter:
    def test_smooths_constant_position_noise(self):
        # Monte-Carlo over 10 seeds at sigma = 50 mm
        params = CtraParams()
        for seed in range(10):
            raw = constant_position_stream(50.0, 500, seed=seed)
            filtered = run_filter(raw, params)
            assert len(filtered) == len(raw)
            raw_std = positions(raw).std(axis=0)
            flt_std = positions(filtered).std(axis=0)
            assert np.all(flt_std < raw_std)
            assert path_length(filtered) < path_length(raw)

    def test_noiseless_input_converges_within_five_samples(self):
        ts = np.round(np.arange(60) * 37.037).astype(int)
        xy = np.stack([500.0 * ts / 1000.0, np.full(len(ts), 20.0)], axis=1)
        filtered = run_filter(make_stream(ts, xy), CtraParams())
        err = np.hypot(*(positions(filtered) - xy).T)
        assert np.all(err[5:] < 1.0)

    def test_restart_equals_fresh_run_on_suffix(self):
        raw = constant_position_stream(40.0, 200, seed=3)
        params = CtraParams()
        restart_t = raw[120].t_ms
        with_restart = run_filter(raw, params, restart_times_ms=[restart_t])
        fresh_suffix = run_filter(raw[120:], params)
        assert with_restart[120:] == fresh_suffix
        # the restart sample reseeds the state from the measurement itself
        assert with_restart[120].pos == raw[120].pos

    def test_zigzag_noise_smoothing_path_length(self):
        # noisy zig-zag oscillation around a slow traverse between two points
        rng = np.random.default_rng(11)
        n = 400
        ts = np.round(np.arange(n) * 37.037).astype(int)
        frac = np.linspace(0.0, 1.0, n)
        base = np.stack([np.zeros(n), 2000.0 - 1000.0 * frac], axis=1)
        zigzag = base.copy()
        zigzag[:, 0] += 120.0 * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        zigzag += rng.normal(0, 40.0, size=(n, 2))
        raw = make_stream(ts, zigzag)
        filtered = run_filter(raw, CtraParams())
        assert path_length(filtered) < path_length(raw)

    def test_empty_stream(self):
        assert run_filter([], CtraParams()) == []


def test_ctra_state_round_trip_and_validation():
    s = CtraState(1.0, 2.0, 3.0, 0.5, -0.1, 9.0)
    assert CtraState.from_array(s.as_array()) == s
    with pytest.raises(ValueError):
        CtraState(float("nan"), 0, 0, 0, 0, 0)


def test_params_validation():
    with pytest.raises(ValueError):
        CtraParams(q_diag=(1.0,) * 5)
    with pytest.raises(ValueError):
        CtraParams(r_diag=(1.0,) * 5 + (-1.0,))
