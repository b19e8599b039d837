"""Constant turn rate and acceleration (CTRA) extended Kalman filter.

The filter runs over a single position stream. Its six-dimensional state is
``(x, y, v, psi, psi_dot, a)`` in millimetres, mm/s, radians, rad/s and
mm/s^2. Measurements are full-state vectors synthesized from the position
stream itself (see :class:`MeasurementBuilder`), so the measurement model is
the identity and the gain reduces to ``K = P (P + R)^-1``.

State prediction follows the circular-arc motion update; when the yaw rate
magnitude drops below ``eps_yaw`` the analytic straight-line limit is used,
which keeps the prediction continuous across the branch switch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Position2D, Sample

STATE_DIM = 6
TAU = 2.0 * math.pi


class FilterError(RuntimeError):
    """Numerical failure inside the filter."""


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(angle, TAU)
    if wrapped <= -math.pi:
        wrapped += TAU
    return wrapped


def _arc_chord(v: float, psi: float, psi_dot: float, dt_s: float, eps_yaw: float):
    """Shared pieces of the arc update, in cancellation-free form.

    The raw arc displacement ``(v / psi_dot) (sin(psi + dt psi_dot) - sin psi)``
    loses precision as ``psi_dot`` approaches zero; the identity
    ``sin a - sin b = 2 cos((a+b)/2) sin((a-b)/2)`` turns it into
    ``v * chord * cos(psi + h)`` with ``h = dt psi_dot / 2`` and
    ``chord = 2 sin(h) / psi_dot``, which degrades gracefully into the
    straight-line limit ``chord = dt``.
    """
    h = 0.5 * dt_s * psi_dot
    if abs(psi_dot) < eps_yaw:
        chord = dt_s
    else:
        chord = 2.0 * math.sin(h) / psi_dot
    return h, chord


def predict_state(state: np.ndarray, dt_s: float, eps_yaw: float = 1e-6) -> np.ndarray:
    """One motion-model step of length ``dt_s`` seconds.

    Heading advances by ``dt * psi_dot`` and speed by ``dt * a``; the position
    moves along a circular arc of radius ``v / psi_dot``, or along a straight
    line in the small-yaw-rate limit.
    """
    x, y, v, psi, psi_dot, a = state
    h, chord = _arc_chord(v, psi, psi_dot, dt_s, eps_yaw)
    nx = x + v * chord * math.cos(psi + h)
    ny = y + v * chord * math.sin(psi + h)
    return np.array(
        [nx, ny, v + dt_s * a, wrap_angle(psi + dt_s * psi_dot), psi_dot, a],
        dtype=np.float64,
    )


def ctra_jacobian(state: np.ndarray, dt_s: float, eps_yaw: float = 1e-6) -> np.ndarray:
    """Analytic Jacobian of :func:`predict_state` w.r.t. the state vector."""
    _, _, v, psi, psi_dot, _ = state
    jac = np.eye(STATE_DIM, dtype=np.float64)
    h, chord = _arc_chord(v, psi, psi_dot, dt_s, eps_yaw)
    cos_m = math.cos(psi + h)
    sin_m = math.sin(psi + h)
    # d(chord)/d(psi_dot); series form below |h| ~ 1e-4 where the closed
    # form cancels catastrophically
    if abs(psi_dot) < eps_yaw:
        dchord = 0.0
    elif abs(h) < 1e-4:
        dchord = -(dt_s**3) * psi_dot / 12.0
    else:
        dchord = (dt_s * math.cos(h) - chord) / psi_dot
    jac[0, 2] = chord * cos_m
    jac[0, 3] = -v * chord * sin_m
    jac[0, 4] = v * (dchord * cos_m - 0.5 * dt_s * chord * sin_m)
    jac[1, 2] = chord * sin_m
    jac[1, 3] = v * chord * cos_m
    jac[1, 4] = v * (dchord * sin_m + 0.5 * dt_s * chord * cos_m)
    jac[2, 5] = dt_s
    jac[3, 4] = dt_s
    return jac


@dataclass(frozen=True)
class CtraState:
    """Filter state snapshot; positions in mm, angles in radians."""

    x: float
    y: float
    v: float
    psi: float
    psi_dot: float
    a: float

    def __post_init__(self) -> None:
        if not all(
            math.isfinite(f)
            for f in (self.x, self.y, self.v, self.psi, self.psi_dot, self.a)
        ):
            raise ValueError("non-finite filter state")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.x, self.y, self.v, self.psi, self.psi_dot, self.a],
            dtype=np.float64,
        )

    @staticmethod
    def from_array(arr: np.ndarray) -> "CtraState":
        return CtraState(*(float(f) for f in arr))


# Default noise diagonals, in mm, radians and seconds per state slot:
# (mm^2, mm^2, (mm/s)^2, rad^2, (rad/s)^2, (mm/s^2)^2). Q is a per-second
# density; each prediction step adds Q * dt so that streams of different
# rates (and merged streams with uneven gaps) see the same noise per unit
# time.
_Q_DEFAULT = (0.0625, 0.0625, 1.44e-4, 9e-6, 9e-4, 0.25)
_R_DEFAULT = (25.0, 25.0, 0.01, 0.01, 0.01, 0.09)
_P0_DEFAULT = (1000.0, 1000.0, 100.0, 1.0, 0.1, 10.0)


@dataclass(frozen=True)
class CtraParams:
    """Noise diagonals and derivation knobs for one filter instance.

    ``diff_span_s`` is the history span used to difference positions into
    speed/heading/yaw-rate/acceleration measurements; wider spans average
    away more position noise at the cost of response lag. ``min_speed_mm_s``
    gates differenced speeds: below it the platform is treated as stationary,
    which keeps dwell-time noise out of the speed channel.
    """

    q_diag: tuple[float, ...] = _Q_DEFAULT
    r_diag: tuple[float, ...] = _R_DEFAULT
    p0_diag: tuple[float, ...] = _P0_DEFAULT
    eps_yaw: float = 1e-6
    diff_span_s: float = 3.0
    min_speed_mm_s: float = 100.0

    def __post_init__(self) -> None:
        for name, diag in (("q", self.q_diag), ("r", self.r_diag), ("p0", self.p0_diag)):
            if len(diag) != STATE_DIM:
                raise ValueError(f"{name}_diag must have {STATE_DIM} entries")
            if any(d < 0 for d in diag):
                raise ValueError(f"{name}_diag entries must be nonnegative")


def _ls_velocity(
    ts_s: np.ndarray, xy: np.ndarray
) -> tuple[float, float] | None:
    """Least-squares velocity over a window; the first difference for n=2."""
    t_centered = ts_s - ts_s.mean()
    denom = float(t_centered @ t_centered)
    if denom <= 0.0:
        return None
    # xy need not be centered: sum(t_centered) == 0 kills the offset term
    vx, vy = (t_centered @ xy) / denom
    return float(vx), float(vy)


def pseudo_measurements(
    window: Sequence[Sample],
    prev_psi: float = 0.0,
    min_speed_mm_s: float = 0.0,
) -> np.ndarray:
    """Build a full-state measurement from a position history window.

    The newest sample provides the position. Speed and heading come from the
    first difference of positions fitted over the window (a least-squares
    slope, which reduces to the plain sample difference for two points); yaw
    rate and acceleration come from second differences across the window's
    two halves. Headings are differenced on the circle. A window whose net
    motion is slower than ``min_speed_mm_s`` (or not measurable) reads as a
    stationary platform: zero speed, zero rates, heading retained from
    ``prev_psi``.
    """
    if len(window) < 3:
        raise ValueError("insufficient history: need at least 3 samples")
    ts = np.fromiter((s.t_ms for s in window), dtype=np.float64, count=len(window))
    ts /= 1000.0
    xy = np.empty((len(window), 2))
    for i, s in enumerate(window):
        xy[i, 0] = s.pos.x
        xy[i, 1] = s.pos.y
    return _pseudo_from_arrays(ts, xy, prev_psi, min_speed_mm_s)


# Window motion must exceed a multiple of the straight-line fit's own
# residual scatter to count as real; below it the platform reads stationary.
# Small windows estimate the scatter poorly, so the multiple tightens as the
# count drops (~sqrt(250/n), floored at 3).
_MOTION_SIGNIFICANCE = 3.0
_MOTION_SIGNIFICANCE_SMALL_N = 250.0


def _significance(n) -> float | np.ndarray:
    return np.maximum(_MOTION_SIGNIFICANCE, np.sqrt(_MOTION_SIGNIFICANCE_SMALL_N / n))


def _pseudo_from_arrays(
    ts: np.ndarray, xy: np.ndarray, prev_psi: float, min_speed_mm_s: float
) -> np.ndarray:
    span = ts[-1] - ts[0]
    half_dt = 0.5 * span
    if half_dt <= 0.0:
        raise ValueError("window spans no time")
    floor = max(min_speed_mm_s, 1e-9)

    def heading_speed(sl: slice) -> tuple[float, float | None]:
        vel = _ls_velocity(ts[sl], xy[sl])
        if vel is None:
            return 0.0, None
        speed = math.hypot(vel[0], vel[1])
        if speed < floor:
            return 0.0, None
        return speed, math.atan2(vel[1], vel[0])

    v_full, psi_full = heading_speed(slice(None))
    if v_full > 0.0:
        fit_t = ts - ts.mean()
        vel = _ls_velocity(ts, xy)
        fitted = xy.mean(axis=0) + np.outer(fit_t, vel)
        resid = math.sqrt(float(np.mean(np.sum((xy - fitted) ** 2, axis=1))))
        if v_full * span < _significance(len(ts)) * resid:
            v_full, psi_full = 0.0, None

    if psi_full is None:
        # stationary window: no speed, no rates, heading retained
        return np.array([xy[-1, 0], xy[-1, 1], 0.0, prev_psi, 0.0, 0.0])

    mid = len(ts) // 2
    v_old, psi_old = heading_speed(slice(0, mid + 1))
    v_new, psi_new = heading_speed(slice(mid, None))
    if psi_new is not None and psi_old is not None:
        psi_dot = wrap_angle(psi_new - psi_old) / half_dt
    else:
        psi_dot = 0.0
    accel = (v_new - v_old) / half_dt
    return np.array([xy[-1, 0], xy[-1, 1], v_full, psi_full, psi_dot, accel])


class MeasurementBuilder:
    """Incrementally derives measurement vectors from a raw position stream.

    The history window lives in preallocated arrays (compacted when the
    buffer fills) so a push costs a few vector operations regardless of
    stream length.
    """

    _CAPACITY = 4096

    def __init__(self, diff_span_s: float, min_speed_mm_s: float) -> None:
        self.diff_span_ms = diff_span_s * 1000.0
        self.min_speed_mm_s = min_speed_mm_s
        self._t_ms = np.empty(self._CAPACITY, dtype=np.int64)
        self._xy = np.empty((self._CAPACITY, 2))
        self._lo = 0
        self._hi = 0
        self.prev_psi = 0.0

    def reset(self, prev_psi: float = 0.0) -> None:
        self._lo = 0
        self._hi = 0
        self.prev_psi = prev_psi

    def push(self, sample: Sample) -> np.ndarray | None:
        """Add a sample; returns a measurement once three samples are held."""
        if self._hi == self._CAPACITY:
            if self._lo == 0:
                self._lo = 1  # window outgrew the buffer; drop the oldest
            n = self._hi - self._lo
            self._t_ms[:n] = self._t_ms[self._lo : self._hi]
            self._xy[:n] = self._xy[self._lo : self._hi]
            self._lo, self._hi = 0, n
        self._t_ms[self._hi] = sample.t_ms
        self._xy[self._hi, 0] = sample.pos.x
        self._xy[self._hi, 1] = sample.pos.y
        self._hi += 1
        # keep at least 3 samples even if the span budget is tighter; span
        # bounds compare in exact integer milliseconds
        while (
            self._hi - self._lo > 3
            and self._t_ms[self._hi - 1] - self._t_ms[self._lo + 1]
            >= self.diff_span_ms
        ):
            self._lo += 1
        if self._hi - self._lo < 3:
            return None
        window_t = self._t_ms[self._lo : self._hi]
        u = _pseudo_from_arrays(
            (window_t - window_t[0]) / 1000.0,
            self._xy[self._lo : self._hi],
            prev_psi=self.prev_psi,
            min_speed_mm_s=self.min_speed_mm_s,
        )
        self.prev_psi = float(u[3])
        return u


class CtraFilter:
    """Sequential EKF over one stream; independent instances share nothing."""

    def __init__(self, params: CtraParams) -> None:
        self.params = params
        self._q = np.diag(params.q_diag).astype(np.float64)
        self._r = np.diag(params.r_diag).astype(np.float64)
        self._eye = np.eye(STATE_DIM)
        self.state = np.zeros(STATE_DIM)
        self.P = np.diag(params.p0_diag).astype(np.float64)

    def reset(self, x: float, y: float, psi: float = 0.0) -> None:
        """Reseed from a position measurement with the rest of the state at zero."""
        self.state = np.array([x, y, 0.0, psi, 0.0, 0.0])
        self.P = np.diag(self.params.p0_diag).astype(np.float64)

    def predict(self, dt_s: float) -> None:
        jac = ctra_jacobian(self.state, dt_s, self.params.eps_yaw)
        self.state = predict_state(self.state, dt_s, self.params.eps_yaw)
        self.P = jac @ self.P @ jac.T + self._q * dt_s

    def update(self, u: np.ndarray) -> None:
        innovation_cov = self.P + self._r
        try:
            gain = np.linalg.solve(innovation_cov.T, self.P.T).T
        except np.linalg.LinAlgError:
            raise FilterError("degenerate innovation covariance") from None
        innovation = u - self.state
        innovation[3] = wrap_angle(innovation[3])
        self.state = self.state + gain @ innovation
        self.state[3] = wrap_angle(self.state[3])
        self.P = (self._eye - gain) @ self.P
        self.P = 0.5 * (self.P + self.P.T)

    def step(self, u: np.ndarray, dt_s: float) -> "CtraFilter":
        """Predict over ``dt_s`` then update with measurement ``u``."""
        self.predict(dt_s)
        self.update(np.asarray(u, dtype=np.float64))
        return self


def _forward_fill(values: np.ndarray, initial: float) -> np.ndarray:
    """Replace NaNs with the latest preceding value (``initial`` before any)."""
    filled = np.concatenate([[initial], values])
    defined = ~np.isnan(filled)
    idx = np.maximum.accumulate(np.where(defined, np.arange(len(filled)), 0))
    return filled[idx][1:]


def _segment_measurements(
    t_ms: np.ndarray, xy: np.ndarray, span_s: float, min_speed_mm_s: float
) -> np.ndarray:
    """Vectorized :func:`pseudo_measurements` over one restart segment.

    Row ``k`` holds the measurement derived from the trailing window ending
    at sample ``k`` (NaN for the first two rows, where no window exists yet).
    Matches the incremental :class:`MeasurementBuilder` output; window
    bounds compare in exact integer milliseconds like the builder's.
    """
    n = len(t_ms)
    u = np.full((n, STATE_DIM), np.nan)
    if n < 3:
        return u
    rel_ms = t_ms - t_ms[0]
    rel = rel_ms / 1000.0
    zeros = np.zeros(1)
    p_t = np.concatenate([zeros, np.cumsum(rel)])
    p_tt = np.concatenate([zeros, np.cumsum(rel * rel)])
    p_x = np.concatenate([zeros, np.cumsum(xy[:, 0])])
    p_y = np.concatenate([zeros, np.cumsum(xy[:, 1])])
    p_tx = np.concatenate([zeros, np.cumsum(rel * xy[:, 0])])
    p_ty = np.concatenate([zeros, np.cumsum(rel * xy[:, 1])])
    p_xx = np.concatenate([zeros, np.cumsum(xy[:, 0] * xy[:, 0])])
    p_yy = np.concatenate([zeros, np.cumsum(xy[:, 1] * xy[:, 1])])

    k = np.arange(2, n)
    a = np.searchsorted(rel_ms, rel_ms[k] - span_s * 1000.0, side="right")
    lo = np.clip(np.minimum(a - 1, k - 2), 0, None)
    mid = lo + (k - lo + 1) // 2

    floor = max(min_speed_mm_s, 1e-9)

    def gated_speed(i: np.ndarray, j: np.ndarray):
        cnt = (j - i + 1).astype(np.float64)
        s_t = p_t[j + 1] - p_t[i]
        s_tt = p_tt[j + 1] - p_tt[i]
        denom = s_tt - s_t * s_t / cnt
        safe = np.where(denom > 0.0, denom, 1.0)
        vx = (p_tx[j + 1] - p_tx[i] - s_t * (p_x[j + 1] - p_x[i]) / cnt) / safe
        vy = (p_ty[j + 1] - p_ty[i] - s_t * (p_y[j + 1] - p_y[i]) / cnt) / safe
        speed = np.hypot(vx, vy)
        moving = (denom > 0.0) & (speed >= floor)
        return np.where(moving, speed, 0.0), vx, vy, moving, denom, cnt

    v_full, vx_f, vy_f, mov_f, denom_f, cnt_f = gated_speed(lo, k)
    v_old, vx_o, vy_o, mov_o, _, _ = gated_speed(lo, mid)
    v_new, vx_n, vy_n, mov_n, _, _ = gated_speed(mid, k)
    psi_old = np.arctan2(vy_o, vx_o)
    psi_new = np.arctan2(vy_n, vx_n)

    # motion-significance gate on the full window: residual scatter of the
    # straight-line fit vs fitted displacement
    sum_x = p_x[k + 1] - p_x[lo]
    sum_y = p_y[k + 1] - p_y[lo]
    rss = (
        (p_xx[k + 1] - p_xx[lo] - sum_x * sum_x / cnt_f)
        - vx_f * vx_f * denom_f
        + (p_yy[k + 1] - p_yy[lo] - sum_y * sum_y / cnt_f)
        - vy_f * vy_f * denom_f
    )
    resid = np.sqrt(np.maximum(rss, 0.0) / cnt_f)
    span = rel[k] - rel[lo]
    mov_f &= v_full * span >= _significance(cnt_f) * resid
    v_full = np.where(mov_f, v_full, 0.0)

    half_dt = 0.5 * span
    dpsi = psi_new - psi_old
    dpsi -= TAU * np.round(dpsi / TAU)
    psi_dot = np.where(mov_f & mov_o & mov_n, dpsi / half_dt, 0.0)
    accel = np.where(mov_f, (v_new - v_old) / half_dt, 0.0)
    psi = _forward_fill(
        np.where(mov_f, np.arctan2(vy_f, vx_f), np.nan), initial=0.0
    )

    u[2:, 0] = xy[2:, 0]
    u[2:, 1] = xy[2:, 1]
    u[2:, 2] = v_full
    u[2:, 3] = psi
    u[2:, 4] = psi_dot
    u[2:, 5] = accel
    return u


def run_filter(
    samples: Sequence[Sample],
    params: CtraParams,
    restart_times_ms: Sequence[float] = (),
) -> list[Sample]:
    """Filter a stream, producing one output sample per input sample.

    The filter (re)starts at the first sample and again at the first sample
    at or after each entry of ``restart_times_ms``: covariance back to its
    initial diagonal, state reseeded from that measurement. Each restart
    segment is processed exactly like a fresh run; the two samples after a
    (re)start run prediction-only while the differencing window refills.
    """
    if not samples:
        return []
    n = len(samples)
    ts_ms = np.fromiter((s.t_ms for s in samples), dtype=np.int64, count=n)
    xy = np.empty((n, 2))
    for i, s in enumerate(samples):
        xy[i, 0] = s.pos.x
        xy[i, 1] = s.pos.y
    ts_s = ts_ms / 1000.0

    start_idx = {0}
    for t in restart_times_ms:
        i = int(np.searchsorted(ts_ms, t, side="left"))
        if i < n:
            start_idx.add(i)
    starts = sorted(start_idx)

    u_all = np.full((n, STATE_DIM), np.nan)
    for s0, s1 in zip(starts, starts[1:] + [n]):
        u_all[s0:s1] = _segment_measurements(
            ts_ms[s0:s1], xy[s0:s1], params.diff_span_s, params.min_speed_mm_s
        )

    filt = CtraFilter(params)
    out_xy = np.empty((n, 2))
    restart_set = frozenset(starts)
    for k in range(n):
        if k in restart_set:
            filt.reset(xy[k, 0], xy[k, 1])
        else:
            dt_s = ts_s[k] - ts_s[k - 1]
            if np.isnan(u_all[k, 2]):
                filt.predict(dt_s)
            else:
                filt.step(u_all[k], dt_s)
        out_xy[k] = filt.state[:2]
    return [
        Sample(int(t), Position2D(float(p[0]), float(p[1])), s.source)
        for t, p, s in zip(ts_ms, out_xy, samples)
    ]
