import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uwbvo.clustering import ClusterParams, StopClusterer, detect_stop, region_gate
from uwbvo.core import Position2D, euclidean


def brute_force_counts(points, alpha):
    """Independent recount of the pair-event counters over a prefix.

    Distinct values within alpha of an arriving sample gain one count each
    (arriving side included); a re-arrival of an already-seen value adds a
    single count to its own slot.
    """
    order: list[tuple[float, float]] = []
    counts: dict[tuple[float, float], int] = {}
    for p in points:
        key = (p.x, p.y)
        revisit = key in counts
        if not revisit:
            order.append(key)
            counts[key] = 0
        for other in order:
            if other == key:
                continue
            if math.hypot(other[0] - p.x, other[1] - p.y) <= alpha:
                counts[other] += 1
                counts[key] += 1
        if revisit:
            counts[key] += 1
    return order, counts


def brute_force_argmax(points, alpha, k1):
    """Offline winner over a consumed prefix: argmax count among values that
    reached k1 (all values if none did), earliest-seen on ties."""
    order, counts = brute_force_counts(points, alpha)
    eligible = [key for key in order if counts[key] >= k1] or order
    best = max(eligible, key=lambda key: counts[key])
    # max() keeps the first maximum in iteration order == earliest seen
    return Position2D(*best), counts[best]


def cloud_and_ray_stream(rng, n_cloud, sigma, center, ray_count, ray_length):
    cloud = rng.normal(0.0, sigma, size=(n_cloud, 2)) + center
    theta = rng.uniform(0, 2 * math.pi)
    mags = ray_length * ((np.arange(1, ray_count + 1) / ray_count) ** 2)
    ray = center + np.stack([mags * math.cos(theta), mags * math.sin(theta)], axis=1)
    # splice the ray into the middle of the dwell stream
    onset = rng.integers(n_cloud // 4, n_cloud // 2)
    merged = np.concatenate([cloud[:onset], ray, cloud[onset:]])
    is_ray = np.zeros(len(merged), dtype=bool)
    is_ray[onset : onset + ray_count] = True
    # ray points nearer the cloud than 3 sigma are effectively cloud members
    is_ray[onset : onset + ray_count] &= mags > 3 * sigma
    points = [Position2D(float(p[0]), float(p[1])) for p in merged]
    return points, is_ray


def test_params_validation():
    with pytest.raises(ValueError):
        ClusterParams(alpha_mm=0.0)
    with pytest.raises(ValueError):
        ClusterParams(k1=10, k2=10)
    with pytest.raises(ValueError):
        ClusterParams(k1=0, k2=5)
    with pytest.raises(ValueError):
        ClusterParams(alpha_mm=20.0, gamma_mm=10.0)


def test_region_gate_boundary():
    stop = Position2D(100.0, 0.0)
    assert region_gate(stop, stop, 100.0)
    assert region_gate(Position2D(200.0, 0.0), stop, 100.0)  # closed ball
    assert not region_gate(Position2D(200.1, 0.0), stop, 100.0)


def test_repeated_point_terminates_at_fifth_sample():
    params = ClusterParams(alpha_mm=5.0, k1=2, k2=4, gamma_mm=50.0)
    p = Position2D(10.0, 20.0)
    est = detect_stop([p] * 10, params)
    assert est.complete
    assert est.samples_consumed == 5  # counter reaches k2 one pair at a time
    assert est.support == 4
    assert est.pos == p


def test_incomplete_stream_flagged():
    params = ClusterParams(alpha_mm=5.0, k1=3, k2=50, gamma_mm=50.0)
    p = Position2D(0.0, 0.0)
    est = detect_stop([p] * 10, params)
    assert not est.complete
    assert est.support == 9
    assert est.pos == p
    with pytest.raises(ValueError):
        StopClusterer(params).finish()


def test_dense_cloud_with_outlier_ray_default_thresholds():
    params = ClusterParams(alpha_mm=10.0, k1=100, k2=500, gamma_mm=100.0)
    rng = np.random.default_rng(0)
    points, is_ray = cloud_and_ray_stream(
        rng, 700, 5.0, np.array([1000.0, 0.0]), 50, 500.0
    )
    est = detect_stop(points, params, stop_index=3)
    assert est.complete and est.index == 3
    winner = points.index(est.pos)
    assert not is_ray[winner]
    assert euclidean(est.pos, Position2D(1000.0, 0.0)) < 3 * 5.0


def test_online_matches_brute_force_oracle():
    params = ClusterParams(alpha_mm=10.0, k1=100, k2=500, gamma_mm=100.0)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        sigma = rng.uniform(3.0, 7.0)
        points, _ = cloud_and_ray_stream(
            rng, 800, sigma, rng.uniform(-1000, 1000, 2), 50, 500.0
        )
        est = detect_stop(points, params)
        assert est.complete
        prefix = points[: est.samples_consumed]
        expected_pos, expected_count = brute_force_argmax(
            prefix, params.alpha_mm, params.k1
        )
        assert est.pos == expected_pos
        assert est.support == expected_count


def test_online_counts_match_oracle_with_duplicates():
    params = ClusterParams(alpha_mm=2.0, k1=4, k2=1000, gamma_mm=50.0)
    rng = np.random.default_rng(42)
    grid = [Position2D(float(x), float(y)) for x in range(4) for y in range(4)]
    points = [grid[i] for i in rng.integers(0, len(grid), 200)]
    clusterer = StopClusterer(params)
    for i, p in enumerate(points):
        clusterer.push(p)
        _, expected = brute_force_counts(points[: i + 1], params.alpha_mm)
        got = {
            (clusterer._points[s, 0], clusterer._points[s, 1]): int(clusterer._counts[s])
            for s in range(clusterer._n)
        }
        assert got == expected


def test_termination_index_monotone_in_k2():
    rng = np.random.default_rng(1)
    points = [
        Position2D(float(p[0]), float(p[1]))
        for p in rng.normal(0.0, 5.0, size=(900, 2))
    ]
    consumed = []
    for k2 in (50, 100, 200, 400):
        params = ClusterParams(alpha_mm=10.0, k1=20, k2=k2, gamma_mm=50.0)
        est = detect_stop(points, params)
        assert est.complete
        consumed.append(est.samples_consumed)
    assert consumed == sorted(consumed)


def test_counters_never_decrease():
    rng = np.random.default_rng(2)
    params = ClusterParams(alpha_mm=10.0, k1=50, k2=10_000, gamma_mm=50.0)
    clusterer = StopClusterer(params)
    prev_max = 0
    for p in rng.normal(0.0, 5.0, size=(400, 2)):
        clusterer.push(Position2D(float(p[0]), float(p[1])))
        current = int(clusterer._counts[: clusterer._n].max(initial=0))
        assert current >= prev_max
        prev_max = current


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_far_outliers_never_change_estimate(seed, n_outliers):
    params = ClusterParams(alpha_mm=10.0, k1=10, k2=60, gamma_mm=10_000.0)
    rng = np.random.default_rng(seed)
    cloud = [
        Position2D(float(p[0]), float(p[1]))
        for p in rng.normal(0.0, 4.0, size=(150, 2))
    ]
    base = detect_stop(cloud, params)
    # outliers farther than alpha from every cloud point and from each other
    outliers = [Position2D(500.0 + 40.0 * i, 500.0) for i in range(n_outliers)]
    positions = rng.integers(0, len(cloud), size=n_outliers)
    spiked = list(cloud)
    for p, at in sorted(zip(outliers, positions), key=lambda t: -t[1]):
        spiked.insert(at, p)
    est = detect_stop(spiked, params)
    assert est.pos == base.pos


def test_candidate_hysteresis_requires_k1_before_k2():
    params = ClusterParams(alpha_mm=5.0, k1=3, k2=5, gamma_mm=50.0)
    clusterer = StopClusterer(params)
    p = Position2D(0.0, 0.0)
    for _ in range(3):
        assert clusterer.push(p) is None
    assert not clusterer.candidate  # count == 2 < k1
    clusterer.push(p)
    assert clusterer.candidate  # count == 3 == k1
    assert clusterer.push(p) is None  # count == 4
    est = clusterer.push(p)  # count == 5 == k2 -> terminate
    assert est is not None and est.complete
