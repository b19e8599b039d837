"""Deterministic, seedable flight simulator and sensor fault models.

Ground truth follows the flight plan exactly: a dwell at each stop and a
straight segment with a trapezoidal speed profile in between (triangular if
the segment is too short to reach cruise speed). Heading changes happen
while dwelling.

Sensor streams are synthesized from the truth:

* UWB: truth at its sample rate plus isotropic white Gaussian noise; with
  some probability per stop window, a burst of samples early in the dwell is
  displaced along a random direction with growing magnitude, imitating the
  asymmetric outlier rays seen when an anchor drops out.
* Visual odometer: truth plus small Gaussian noise, but affected segments
  report scaled-down displacements (direction preserved); the resulting
  offset persists and accumulates across segments until a reboot re-anchors
  the sensor.

Everything is a pure function of (config, seed): one seed is split into
independent child generators for UWB noise, UWB rays, VO noise, and VO
faults, in that order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple

import numpy as np

from .core import UWB, VO, FlightPlan, Position2D, Sample, StreamPair, quantize_mm


@dataclass(frozen=True)
class StopWindow:
    stop_index: int
    t0_ms: float
    t1_ms: float

    @property
    def midpoint_ms(self) -> float:
        return 0.5 * (self.t0_ms + self.t1_ms)


@dataclass(frozen=True)
class SegmentInfo:
    index: int
    from_stop: int
    to_stop: int
    t0_ms: float
    t1_ms: float
    start: Position2D
    end: Position2D
    length_mm: float


class _Phase(NamedTuple):
    t0_ms: float
    origin: tuple[float, float]
    direction: tuple[float, float]
    s0: float
    v0: float
    acc: float


@dataclass(frozen=True)
class GroundTruth:
    """Exact pose timeline for one flight."""

    plan: FlightPlan
    stop_windows: tuple[StopWindow, ...]
    segments: tuple[SegmentInfo, ...]
    duration_ms: float
    _t0s: np.ndarray
    _origins: np.ndarray
    _dirs: np.ndarray
    _profile: np.ndarray  # columns: s0, v0, acc

    def _phase_index(self, ts: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._t0s, ts, side="right") - 1
        return np.clip(idx, 0, len(self._t0s) - 1)

    def sample(self, ts_ms: np.ndarray) -> np.ndarray:
        """Vectorized pose lookup; times clamp to the flight duration."""
        ts = np.clip(np.asarray(ts_ms, dtype=np.float64), 0.0, self.duration_ms)
        idx = self._phase_index(ts)
        tau = (ts - self._t0s[idx]) / 1000.0
        s = (
            self._profile[idx, 0]
            + self._profile[idx, 1] * tau
            + 0.5 * self._profile[idx, 2] * tau * tau
        )
        return self._origins[idx] + self._dirs[idx] * s[:, None]

    def pose_at(self, t_ms: float) -> Position2D:
        xy = self.sample(np.array([t_ms]))[0]
        return Position2D(float(xy[0]), float(xy[1]))

    def state_at(self, t_ms: float) -> tuple[Position2D, float, float]:
        """Pose plus speed (mm/s) and heading (rad) at ``t_ms``."""
        t = min(max(t_ms, 0.0), self.duration_ms)
        idx = int(self._phase_index(np.array([t]))[0])
        tau = (t - self._t0s[idx]) / 1000.0
        s0, v0, acc = self._profile[idx]
        speed = v0 + acc * tau
        pos = self._origins[idx] + self._dirs[idx] * (s0 + v0 * tau + 0.5 * acc * tau * tau)
        heading = math.atan2(self._dirs[idx][1], self._dirs[idx][0])
        return Position2D(float(pos[0]), float(pos[1])), float(speed), heading


def _segment_phases(length: float, cruise: float, accel: float) -> list[tuple[float, float, float, float]]:
    """(duration_s, s0, v0, acc) pieces of one straight segment."""
    d_ramp = cruise * cruise / (2.0 * accel)
    if 2.0 * d_ramp >= length:
        peak = math.sqrt(accel * length)
        t_ramp = peak / accel
        return [
            (t_ramp, 0.0, 0.0, accel),
            (t_ramp, length / 2.0, peak, -accel),
        ]
    t_ramp = cruise / accel
    t_cruise = (length - 2.0 * d_ramp) / cruise
    return [
        (t_ramp, 0.0, 0.0, accel),
        (t_cruise, d_ramp, cruise, 0.0),
        (t_ramp, length - d_ramp, cruise, -accel),
    ]


def build_truth(plan: FlightPlan) -> GroundTruth:
    """Lay the plan out on a timeline of dwell and flight phases."""
    phases: list[_Phase] = []
    windows: list[StopWindow] = []
    segments: list[SegmentInfo] = []
    legs = plan.legs()
    t = 0.0

    def heading_dir(i: int) -> tuple[float, float]:
        a, b = legs[min(i, len(legs) - 1)]
        d = math.hypot(b.x - a.x, b.y - a.y)
        return ((b.x - a.x) / d, (b.y - a.y) / d)

    stop_order = [i % len(plan.stops) for i in range(len(legs) + 1)]
    for visit, stop_idx in enumerate(stop_order):
        stop = plan.stops[stop_idx]
        windows.append(StopWindow(stop_idx, t, t + plan.dwell_ms))
        phases.append(
            _Phase(t, (stop.x, stop.y), heading_dir(visit), 0.0, 0.0, 0.0)
        )
        t += plan.dwell_ms
        if visit == len(legs):
            break
        a, b = legs[visit]
        length = math.hypot(b.x - a.x, b.y - a.y)
        direction = ((b.x - a.x) / length, (b.y - a.y) / length)
        t_seg_start = t
        for dur_s, s0, v0, acc in _segment_phases(
            length, plan.cruise_mm_s, plan.accel_mm_s2
        ):
            phases.append(_Phase(t, (a.x, a.y), direction, s0, v0, acc))
            t += dur_s * 1000.0
        segments.append(
            SegmentInfo(
                index=visit,
                from_stop=stop_idx,
                to_stop=stop_order[visit + 1],
                t0_ms=t_seg_start,
                t1_ms=t,
                start=a,
                end=b,
                length_mm=length,
            )
        )

    return GroundTruth(
        plan=plan,
        stop_windows=tuple(windows),
        segments=tuple(segments),
        duration_ms=t,
        _t0s=np.array([p.t0_ms for p in phases]),
        _origins=np.array([p.origin for p in phases]),
        _dirs=np.array([p.direction for p in phases]),
        _profile=np.array([(p.s0, p.v0, p.acc) for p in phases]),
    )


# ---------------------------------------------------------------------------
# sensor models


@dataclass(frozen=True)
class RaySpec:
    """Outlier-ray fault of the UWB unit (anchor dropout pattern)."""

    prob_per_stop: float = 0.4
    length_mm: float = 900.0
    count: int = 54

    def __post_init__(self) -> None:
        if not 0.0 <= self.prob_per_stop <= 1.0:
            raise ValueError("prob_per_stop must be within [0, 1]")
        if self.length_mm < 0 or self.count < 0:
            raise ValueError("ray length and count must be nonnegative")


@dataclass(frozen=True)
class UwbModel:
    rate_hz: float = 27.0
    sigma_mm: float = 100.0
    ray: RaySpec = field(default_factory=RaySpec)

    def __post_init__(self) -> None:
        if self.rate_hz <= 0 or self.sigma_mm < 0:
            raise ValueError("bad UWB model parameters")


@dataclass(frozen=True)
class ScaleFaultSpec:
    """Displacement-underestimation fault of the visual odometer.

    ``forced_segments`` pins the fault to specific segment indices (used by
    the worst-case preset); other segments then fault with
    ``prob_per_segment`` independently.
    """

    prob_per_segment: float = 0.4
    scale_range: tuple[float, float] = (0.70, 0.88)
    forced_segments: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.prob_per_segment <= 1.0:
            raise ValueError("prob_per_segment must be within [0, 1]")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError("scale_range must satisfy 0 < lo <= hi <= 1")


@dataclass(frozen=True)
class VoModel:
    rate_hz: float = 200.0
    sigma_mm: float = 1.5
    underestimate: ScaleFaultSpec = field(default_factory=ScaleFaultSpec)

    def __post_init__(self) -> None:
        if self.rate_hz <= 0 or self.sigma_mm < 0:
            raise ValueError("bad VO model parameters")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    plan: FlightPlan
    uwb: UwbModel = field(default_factory=UwbModel)
    vo: VoModel = field(default_factory=VoModel)
    anchors: tuple[Position2D, ...] = ()
    seed: int = 0


class RayEvent(NamedTuple):
    window_ordinal: int
    stop_index: int
    t_onset_ms: int
    direction_rad: float


class FaultEvent(NamedTuple):
    segment_index: int
    scale: float


class UwbTrace(NamedTuple):
    samples: list[Sample]
    rays: list[RayEvent]


class VoTrace(NamedTuple):
    samples: list[Sample]
    faults: list[FaultEvent]


def _child_rngs(seed: int) -> tuple[np.random.Generator, ...]:
    children = np.random.SeedSequence(seed).spawn(4)
    return tuple(np.random.default_rng(c) for c in children)


def sample_times(rate_hz: float, duration_ms: float) -> np.ndarray:
    period = 1000.0 / rate_hz
    n = int(duration_ms // period) + 1
    return np.round(np.arange(n) * period).astype(np.int64)


def _quantized_samples(ts: np.ndarray, xy: np.ndarray, source: str) -> list[Sample]:
    snapped = np.round(xy, 1)
    return [
        Sample(int(t), Position2D(float(p[0]), float(p[1])), source)
        for t, p in zip(ts, snapped)
    ]


def synth_uwb(truth: GroundTruth, model: UwbModel, seed: int) -> UwbTrace:
    """Noisy UWB positions plus optional early-dwell outlier rays."""
    rng_noise, rng_ray, _, _ = _child_rngs(seed)
    ts = sample_times(model.rate_hz, truth.duration_ms)
    xy = truth.sample(ts) + rng_noise.normal(0.0, model.sigma_mm, size=(len(ts), 2))

    events: list[RayEvent] = []
    spec = model.ray
    for ordinal, window in enumerate(truth.stop_windows):
        # draw per-window randomness unconditionally so that one window's
        # trigger never shifts another window's pattern; rays sit late in
        # the dwell, after the platform has settled at the stop
        trigger = rng_ray.uniform() < spec.prob_per_stop
        theta = rng_ray.uniform(0.0, 2.0 * math.pi)
        onset_frac = rng_ray.uniform(0.55, 0.80)
        if not trigger or spec.count == 0 or spec.length_mm == 0.0:
            continue
        t_onset = window.t0_ms + onset_frac * (window.t1_ms - window.t0_ms)
        start = int(np.searchsorted(ts, t_onset))
        stop = min(start + spec.count, int(np.searchsorted(ts, window.t1_ms)))
        if stop <= start:
            continue
        k = np.arange(1, stop - start + 1, dtype=np.float64)
        magnitude = spec.length_mm * (k / spec.count) ** 2
        xy[start:stop, 0] += magnitude * math.cos(theta)
        xy[start:stop, 1] += magnitude * math.sin(theta)
        events.append(RayEvent(ordinal, window.stop_index, int(ts[start]), theta))

    return UwbTrace(_quantized_samples(ts, xy, UWB), events)


def _segment_scales(
    truth: GroundTruth, spec: ScaleFaultSpec, rng: np.random.Generator
) -> np.ndarray:
    scales = np.ones(len(truth.segments))
    for seg in truth.segments:
        # unconditional draws keep segment patterns independent of each other
        u = rng.uniform()
        s = rng.uniform(spec.scale_range[0], spec.scale_range[1])
        faulted = seg.index in spec.forced_segments or u < spec.prob_per_segment
        if faulted:
            scales[seg.index] = s
    return scales


def synth_vo(truth: GroundTruth, model: VoModel, seed: int) -> VoTrace:
    """VO positions with per-segment scale faults and accumulating offset."""
    _, _, rng_noise, rng_fault = _child_rngs(seed)
    ts = sample_times(model.rate_hz, truth.duration_ms)
    true_xy = truth.sample(ts)
    noise = rng_noise.normal(0.0, model.sigma_mm, size=(len(ts), 2))
    scales = _segment_scales(truth, model.underestimate, rng_fault)

    # cumulative offset entering each segment: bias_prefix[i] applies from
    # the dwell before segment i up to that segment's start
    n_seg = len(truth.segments)
    bias_prefix = np.zeros((n_seg + 1, 2))
    for seg in truth.segments:
        vec = np.array([seg.end.x - seg.start.x, seg.end.y - seg.start.y])
        bias_prefix[seg.index + 1] = (
            bias_prefix[seg.index] + (scales[seg.index] - 1.0) * vec
        )

    seg_t0 = np.array([seg.t0_ms for seg in truth.segments])
    seg_t1 = np.array([seg.t1_ms for seg in truth.segments])
    seg_start = np.array([(seg.start.x, seg.start.y) for seg in truth.segments])

    # index of the segment each sample is in, or of the next segment when
    # dwelling (so the entering bias applies)
    nxt = np.searchsorted(seg_t1, ts, side="left")
    nxt = np.clip(nxt, 0, n_seg)
    bias = bias_prefix[nxt].copy()
    for i in range(n_seg):
        in_seg = (nxt == i) & (ts >= seg_t0[i])
        if np.any(in_seg):
            bias[in_seg] += (scales[i] - 1.0) * (true_xy[in_seg] - seg_start[i])

    xy = true_xy + bias + noise
    faults = [
        FaultEvent(seg.index, float(scales[seg.index]))
        for seg in truth.segments
        if scales[seg.index] != 1.0
    ]
    return VoTrace(_quantized_samples(ts, xy, VO), faults)


class VoSensor:
    """Live VO stream with a reboot hook.

    Without reboots the emitted samples are identical to :func:`synth_vo`
    for the same seed. ``reboot`` re-anchors the sensor origin at the given
    position and cancels the active segment's scale fault from that moment
    on; later segments keep their own fault draws.
    """

    def __init__(self, truth: GroundTruth, model: VoModel, seed: int) -> None:
        _, _, rng_noise, rng_fault = _child_rngs(seed)
        self.truth = truth
        self.model = model
        self.ts = sample_times(model.rate_hz, truth.duration_ms)
        self._noise = rng_noise.normal(0.0, model.sigma_mm, size=(len(self.ts), 2))
        self._scales = _segment_scales(truth, model.underestimate, rng_fault)
        self._true_xy = truth.sample(self.ts)
        self._idx = 0
        self._seg_ptr = 0
        self._ref_pos = self._true_xy[0].copy()
        self._ref_bias = np.zeros(2)
        self._active_scale = 1.0
        self._in_segment = False
        self.reboots: list[int] = []

    def _advance_segments(self, t: float) -> None:
        segs = self.truth.segments
        while self._seg_ptr < len(segs) and t >= segs[self._seg_ptr].t1_ms:
            seg = segs[self._seg_ptr]
            end = np.array([seg.end.x, seg.end.y])
            if self._in_segment:
                scale, base = self._active_scale, self._ref_pos
            else:  # segment skipped entirely (very low sample rate)
                scale = float(self._scales[seg.index])
                base = np.array([seg.start.x, seg.start.y])
            self._ref_bias = self._ref_bias + (scale - 1.0) * (end - base)
            # a dwell follows: hold the accumulated bias, scale no longer acts
            self._ref_pos = end
            self._active_scale = 1.0
            self._in_segment = False
            self._seg_ptr += 1
        if self._seg_ptr < len(segs) and t >= segs[self._seg_ptr].t0_ms:
            if not self._in_segment:
                seg = segs[self._seg_ptr]
                self._ref_pos = np.array([seg.start.x, seg.start.y])
                self._active_scale = float(self._scales[seg.index])
                self._in_segment = True

    def __iter__(self) -> Iterator[Sample]:
        return self

    def __next__(self) -> Sample:
        if self._idx >= len(self.ts):
            raise StopIteration
        i = self._idx
        t = float(self.ts[i])
        true_pos = self._true_xy[i]
        self._advance_segments(t)
        bias = self._ref_bias + (self._active_scale - 1.0) * (true_pos - self._ref_pos)
        xy = true_pos + bias + self._noise[i]
        self._idx = i + 1
        return Sample(
            int(self.ts[i]),
            Position2D(quantize_mm(float(xy[0])), quantize_mm(float(xy[1]))),
            VO,
        )

    def reboot(self, anchor: Position2D) -> None:
        """Re-anchor at ``anchor``; the active scale fault is cleared."""
        t_now = float(self.ts[min(self._idx, len(self.ts) - 1)])
        true_now = self.truth.sample(np.array([t_now]))[0]
        self._ref_pos = true_now
        self._ref_bias = np.array([anchor.x, anchor.y]) - true_now
        self._active_scale = 1.0
        self.reboots.append(int(t_now))


def simulate_pair(scenario: ScenarioConfig, seed: int) -> tuple[StreamPair, UwbTrace, VoTrace]:
    """Generate one run's stream pair plus fault metadata."""
    truth = build_truth(scenario.plan)
    uwb = synth_uwb(truth, scenario.uwb, seed)
    vo = synth_vo(truth, scenario.vo, seed)
    return StreamPair.build(uwb.samples, vo.samples), uwb, vo


# ---------------------------------------------------------------------------
# scenario presets

# Counterclockwise loop: the vertices of an octagon inscribed in the 3 m
# anchor square plus the midpoint of every octagon edge, starting at
# (1000, 0). Stop 6 is (3000, 1500).
_LOOP_STOPS = (
    (1000.0, 0.0),
    (1500.0, 0.0),
    (2000.0, 0.0),
    (2500.0, 500.0),
    (3000.0, 1000.0),
    (3000.0, 1500.0),
    (3000.0, 2000.0),
    (2500.0, 2500.0),
    (2000.0, 3000.0),
    (1500.0, 3000.0),
    (1000.0, 3000.0),
    (500.0, 2500.0),
    (0.0, 2000.0),
    (0.0, 1500.0),
    (0.0, 1000.0),
    (500.0, 500.0),
)

_ANCHORS = (
    Position2D(3000.0, 0.0),
    Position2D(3000.0, 3000.0),
    Position2D(0.0, 3000.0),
    Position2D(0.0, 0.0),
)

# Segments are numbered by their departure stop (0-based); 4..15 are the
# legs arriving at stop 6 (3000, 1500) and onward, around to the loop
# closure.
WORST_CASE_SEGMENTS = tuple(range(4, 16))


def default_plan() -> FlightPlan:
    return FlightPlan(
        stops=tuple(Position2D(x, y) for x, y in _LOOP_STOPS),
        dwell_ms=20000.0,
        cruise_mm_s=500.0,
        accel_mm_s2=1000.0,
        closed=True,
    )


def default_scenario() -> ScenarioConfig:
    """Desk-scale replica of the 16-stop counterclockwise loop."""
    return ScenarioConfig(
        name="default",
        plan=default_plan(),
        uwb=UwbModel(),
        vo=VoModel(),
        anchors=_ANCHORS,
    )


def worst_case_scenario() -> ScenarioConfig:
    """Severe VO reference loss from the sixth stop onward, every run."""
    base = default_scenario()
    return replace(
        base,
        name="worst-case",
        vo=replace(
            base.vo,
            underestimate=ScaleFaultSpec(
                prob_per_segment=0.0,
                scale_range=(0.70, 0.88),
                forced_segments=WORST_CASE_SEGMENTS,
            ),
        ),
    )


def best_case_scenario() -> ScenarioConfig:
    """VO working correctly: no underestimation faults at all."""
    base = default_scenario()
    return replace(
        base,
        name="best-case",
        vo=replace(
            base.vo,
            underestimate=ScaleFaultSpec(
                prob_per_segment=0.0,
                scale_range=(0.70, 0.88),
                forced_segments=(),
            ),
        ),
    )


SCENARIO_PRESETS = {
    "default": default_scenario,
    "worst-case": worst_case_scenario,
    "best-case": best_case_scenario,
}
