"""Centre-of-mass trajectories of the two interferometer arms.

Positions are vertical coordinates ``z`` in m. :func:`integrate_com` works in
chip coordinates (the field model needs the absolute position), while
:func:`analytic_trajectory` works relative to the holding point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qgi.core import CONSTANTS, SpinState, Timings
from qgi.errors import AlignmentError, ConfigError, NumericalError
from qgi.fieldmap import FieldModel
from qgi.pulses import ARMS, BALLISTIC, REFERENCE, QgiSchedule

US = 1e-6
DEFAULT_STEP = 0.5 * US
MAX_ACCELERATION = 1e4
BREAKPOINT_MERGE = 1e-12
EDGE_GUARD = 1e-13  # s; forcing is sampled strictly inside each segment


@dataclass(frozen=True)
class Segment:
    """Stretch of a trajectory with a fixed spin state and smooth forcing."""

    t: np.ndarray
    z: np.ndarray
    v: np.ndarray
    a: np.ndarray
    state: SpinState | None


@dataclass(frozen=True)
class Trajectory:
    """Sampled path of one arm.

    Segment boundaries are shared: the last sample of one segment and the
    first of the next have the same time. The flattened views drop the
    duplicate so that ``t`` is strictly increasing.
    """

    segments: tuple[Segment, ...]
    arm: str

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ConfigError("trajectory has no segments")

    def _cat(self, name):
        parts = [getattr(self.segments[0], name)]
        parts += [getattr(s, name)[1:] for s in self.segments[1:]]
        return np.concatenate(parts)

    @property
    def t(self) -> np.ndarray:
        return self._cat("t")

    @property
    def z(self) -> np.ndarray:
        return self._cat("z")

    @property
    def v(self) -> np.ndarray:
        return self._cat("v")

    @property
    def a(self) -> np.ndarray:
        return self._cat("a")

    @property
    def states(self) -> list[SpinState | None]:
        out = [self.segments[0].state] * len(self.segments[0].t)
        for s in self.segments[1:]:
            out += [s.state] * (len(s.t) - 1)
        return out

    @property
    def t_start(self) -> float:
        return float(self.segments[0].t[0])

    @property
    def t_end(self) -> float:
        return float(self.segments[-1].t[-1])

    def final(self) -> tuple[float, float]:
        s = self.segments[-1]
        return float(s.z[-1]), float(s.v[-1])

    def shifted(self, dz: float) -> "Trajectory":
        segs = tuple(Segment(s.t, s.z + dz, s.v, s.a, s.state) for s in self.segments)
        return Trajectory(segs, self.arm)

    def rows(self):
        """``(t, z, v, a, state_label)`` tuples for export."""
        for t, z, v, a, st in zip(self.t, self.z, self.v, self.a, self.states):
            yield t, z, v, a, "" if st is None else str(st)


@dataclass(frozen=True)
class ClosureMetrics:
    dz_final: float
    dv_final: float
    max_split: float


def merged_breakpoints(points: Sequence[float], tol: float = BREAKPOINT_MERGE) -> list[float]:
    """Sort and merge points closer than ``tol``."""
    out: list[float] = []
    for p in sorted(points):
        if not out or p - out[-1] > tol:
            out.append(float(p))
        else:
            out[-1] = max(out[-1], float(p))
    return out


def segment_steps(duration: float, dt: float) -> int:
    """Number of equal steps (a multiple of 4) needed to keep steps below ``dt``."""
    n = max(4, math.ceil(duration / dt - 1e-9))
    return n + (-n) % 4


def initial_conditions(timings: Timings, g: float) -> tuple[float, float]:
    """``(z0, v0)`` relative to the holding point such that v = 0 when the hold starts."""
    tau = timings.T_kick + timings.T_d
    return -0.5 * g * tau**2, g * tau


def integrate_com(
    schedule: QgiSchedule,
    arm: str,
    fieldmodel: FieldModel,
    z0: float | None = None,
    v0: float | None = None,
    *,
    z_hold: float = -113e-6,
    y: float = 0.0,
    dt: float = DEFAULT_STEP,
    g: float | None = None,
    t_span: tuple[float, float] | None = None,
) -> Trajectory:
    """Fixed-step RK4 integration of one arm through the full schedule.

    Parameters
    ----------
    schedule : QgiSchedule
        Current program and spin timelines.
    arm : {"ballistic", "reference"}
    fieldmodel : FieldModel
        Supplies the Zeeman potential gradient.
    z0, v0 : float, optional
        Absolute initial position and velocity. Default: launched from below
        so that a free-falling atom comes to rest at ``z_hold`` when the hold
        pulse starts.
    dt : float
        Maximum step; each segment between breakpoints uses equal steps.
    g : float, optional
        Gravity; defaults to the field model's constants.

    Raises
    ------
    NumericalError
        If the acceleration exceeds a sanity bound (field singularity).
    """
    if arm not in ARMS:
        raise ConfigError(f"unknown arm {arm!r}")
    g = fieldmodel.constants.g_earth if g is None else g
    dz0, dv0 = initial_conditions(schedule.timings, g)
    z = z_hold + dz0 if z0 is None else z0
    v = dv0 if v0 is None else v0
    m = fieldmodel.species.mass_kg
    t_lo, t_hi = (0.0, schedule.t_total) if t_span is None else t_span
    pts = [p for p in schedule.breakpoints() if t_lo < p < t_hi] + [t_lo, t_hi]
    bps = merged_breakpoints(pts)

    def accel(state, t, zz, ta, tb):
        I = schedule.current(min(max(t, ta + EDGE_GUARD), tb - EDGE_GUARD))
        a = -fieldmodel.expansion(state, (0.0, y, zz), I).grad[2] / m - g
        if not abs(a) < MAX_ACCELERATION:
            raise NumericalError(f"acceleration {a:.3g} m/s^2 at t={t:.6e} s, z={zz:.6e} m exceeds sanity bound")
        return a

    segments = []
    for ta, tb in zip(bps[:-1], bps[1:]):
        state = schedule.state(arm, 0.5 * (ta + tb))
        n = segment_steps(tb - ta, dt)
        h = (tb - ta) / n
        ts = ta + h * np.arange(n + 1)
        ts[-1] = tb
        zs, vs, as_ = np.empty(n + 1), np.empty(n + 1), np.empty(n + 1)
        zs[0], vs[0] = z, v
        for i in range(n):
            t = ts[i]
            k1z, k1v = v, accel(state, t, z, ta, tb)
            as_[i] = k1v
            k2z, k2v = v + 0.5 * h * k1v, accel(state, t + 0.5 * h, z + 0.5 * h * k1z, ta, tb)
            k3z, k3v = v + 0.5 * h * k2v, accel(state, t + 0.5 * h, z + 0.5 * h * k2z, ta, tb)
            k4z, k4v = v + h * k3v, accel(state, t + h, z + h * k3z, ta, tb)
            z = z + h / 6 * (k1z + 2 * k2z + 2 * k3z + k4z)
            v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
            zs[i + 1], vs[i + 1] = z, v
        as_[-1] = accel(state, tb, z, ta, tb)
        segments.append(Segment(ts, zs, vs, as_, state))
    return Trajectory(tuple(segments), arm)


def analytic_accelerations(timings: Timings, g: float, a_hold: float | None = None) -> dict[str, tuple[float, ...]]:
    """Piecewise-constant net accelerations of both arms.

    Segments are ``(T_kick, T_d, T_h, T_d, T_kick)``; the kick acceleration
    ``a_hold T_h / (2 T_kick)`` enforces the closing condition.
    """
    a_hold = g if a_hold is None else a_hold
    a_kick = a_hold * timings.T_h / (2 * timings.T_kick) if timings.T_kick > 0 else 0.0
    return {
        BALLISTIC: (a_kick - g, -g, -g, -g, a_kick - g),
        REFERENCE: (-g, -g, a_hold - g, -g, -g),
    }


def segment_durations(timings: Timings) -> tuple[float, ...]:
    return (timings.T_kick, timings.T_d, timings.T_h, timings.T_d, timings.T_kick)


def analytic_trajectory(
    timings: Timings,
    accelerations: Sequence[float],
    z0: float | None = None,
    v0: float | None = None,
    *,
    g: float = CONSTANTS.g_earth,
    n_per_segment: int = 64,
    arm: str = "",
    states: Sequence[SpinState | None] | None = None,
) -> Trajectory:
    """Closed-form piecewise-parabolic path, sampled for quadrature.

    ``z`` is measured from the holding point. Zero-length segments are
    skipped. ``n_per_segment`` is rounded up to a multiple of 4.
    """
    durations = segment_durations(timings)
    if len(accelerations) != len(durations):
        raise ConfigError("need one acceleration per segment (5)")
    dz0, dv0 = initial_conditions(timings, g)
    z = dz0 if z0 is None else z0
    v = dv0 if v0 is None else v0
    n = n_per_segment + (-n_per_segment) % 4
    states = states or [None] * len(durations)
    segs, t = [], 0.0
    for dur, a, st in zip(durations, accelerations, states):
        if dur <= 0:
            continue
        s = np.linspace(0.0, dur, n + 1)
        zs = z + v * s + 0.5 * a * s**2
        vs = v + a * s
        segs.append(Segment(t + s, zs, vs, np.full_like(s, a), st))
        z, v, t = float(zs[-1]), float(vs[-1]), t + dur
    return Trajectory(tuple(segs), arm)


def analytic_arms(timings: Timings, g: float, a_hold: float | None = None, **kw) -> dict[str, Trajectory]:
    acc = analytic_accelerations(timings, g, a_hold)
    return {arm: analytic_trajectory(timings, acc[arm], g=g, arm=arm, **kw) for arm in ARMS}


def _interp(traj: Trajectory, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.interp(t, traj.t, traj.z), np.interp(t, traj.t, traj.v)


def closure_metrics(traj_a: Trajectory, traj_b: Trajectory) -> ClosureMetrics:
    """Final position / velocity gaps (a minus b) and maximum separation.

    Raises
    ------
    AlignmentError
        If the time ranges do not overlap.
    """
    lo = max(traj_a.t_start, traj_b.t_start)
    hi = min(traj_a.t_end, traj_b.t_end)
    if not hi > lo:
        raise AlignmentError("trajectories do not overlap in time")
    grid = np.union1d(traj_a.t, traj_b.t)
    grid = grid[(grid >= lo) & (grid <= hi)]
    za, va = _interp(traj_a, grid)
    zb, vb = _interp(traj_b, grid)
    return ClosureMetrics(float(za[-1] - zb[-1]), float(va[-1] - vb[-1]), float(np.max(np.abs(za - zb))))


def effective_ballistic_time(two_T: float, T_kick: float) -> float:
    """``T_eff`` with ``2 T_eff = 2T + T_kick`` (one kick added as the average of two)."""
    return 0.5 * (two_T + T_kick)


def apex_height_estimate(two_T: float, T_kick: float, g_eff: float) -> float:
    """Rise of the ballistic arm above the holding point, ``g_eff T_eff^2 / 2``."""
    return 0.5 * g_eff * effective_ballistic_time(two_T, T_kick) ** 2


def reference_rise_estimate(T_kick: float, T_d: float, g_eff: float) -> float:
    """Rise of the reference arm during ``T_kick + T_d``."""
    return 0.5 * g_eff * (T_kick + T_d) ** 2


def analytic_state_at(timings: Timings, accelerations: Sequence[float], t, z0: float | None = None,
                      v0: float | None = None, *, g: float = CONSTANTS.g_earth) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(z, v)`` of the piecewise-parabolic path at arbitrary times."""
    dz0, dv0 = initial_conditions(timings, g)
    z = dz0 if z0 is None else z0
    v = dv0 if v0 is None else v0
    t = np.asarray(t, dtype=float)
    zs, vs = np.full_like(t, np.nan), np.full_like(t, np.nan)
    start = 0.0
    durations = segment_durations(timings)
    for k, (dur, a) in enumerate(zip(durations, accelerations)):
        last = k == len(durations) - 1
        mask = (t >= start) & (True if last else (t < start + dur))
        s = t[mask] - start
        zs[mask] = z + v * s + 0.5 * a * s**2
        vs[mask] = v + a * s
        z, v, start = z + v * dur + 0.5 * a * dur**2, v + a * dur, start + dur
    return zs, vs
