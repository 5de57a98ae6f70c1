"""Current waveforms, the interferometer schedule and levitation calibration."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from qgi.core import CONSTANTS, RB87, STATE_0, STATE_1, Constants, SpinState, Species, Timings
from qgi.errors import CalibrationError, HardwareEnvelopeError, ScheduleError
from qgi.fieldmap import DEFAULT_BIAS, DEFAULT_GEOMETRY, BiasField, WireGeometry, acceleration_of

US = 1e-6
SOURCE_MAX_CURRENT = 1.0  # A
SOURCE_MAX_SLEW = 30e-3 / US  # A/s

BALLISTIC = "ballistic"
REFERENCE = "reference"
ARMS = (BALLISTIC, REFERENCE)


class EnvelopeWarning(UserWarning):
    """A waveform exceeds the current-source envelope."""


@dataclass(frozen=True)
class CosinePulse:
    """Smooth pulse: cosine rise over ``tau``, flat top ``w``, cosine fall over ``tau``.

    ``tau = 0`` degenerates to a square pulse of length ``w``. Currents are
    absolute; the floor between pulses is set by the enclosing program.
    """

    t0: float
    tau: float
    w: float
    I_max: float

    def __post_init__(self):
        if self.tau < 0 or self.w < 0:
            raise ScheduleError("pulse ramp and flat-top durations must be non-negative")
        if self.tau == 0 and self.w == 0:
            raise ScheduleError("pulse has zero duration")

    @property
    def t_end(self) -> float:
        return self.t0 + 2 * self.tau + self.w

    def shape(self, t) -> np.ndarray:
        """Normalized profile in ``[0, 1]``."""
        t = np.asarray(t, dtype=float)
        s = np.zeros_like(t)
        rise_end = self.t0 + self.tau
        fall_start = rise_end + self.w
        if self.tau > 0:
            rise = (t > self.t0) & (t <= rise_end)
            s[rise] = 0.5 * (1 - np.cos(np.pi * (t[rise] - self.t0) / self.tau))
            fall = (t > fall_start) & (t < self.t_end)
            s[fall] = 0.5 * (1 - np.cos(np.pi * (t[fall] - self.t0 - self.w) / self.tau))
        flat = (t > rise_end) & (t <= fall_start) if self.tau > 0 else (t >= self.t0) & (t < self.t_end)
        s[flat] = 1.0
        return s

    def shape_derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        d = np.zeros_like(t)
        if self.tau == 0:
            return d
        rise = (t > self.t0) & (t <= self.t0 + self.tau)
        fall = (t > self.t0 + self.tau + self.w) & (t < self.t_end)
        k = np.pi / self.tau
        d[rise] = 0.5 * k * np.sin(k * (t[rise] - self.t0))
        d[fall] = 0.5 * k * np.sin(k * (t[fall] - self.t0 - self.w))
        return d

    def area_above(self, floor: float) -> float:
        return (self.I_max - floor) * (self.tau + self.w)

    def breakpoints(self) -> tuple[float, ...]:
        pts = (self.t0, self.t0 + self.tau, self.t0 + self.tau + self.w, self.t_end)
        return tuple(sorted(set(pts)))


@dataclass(frozen=True)
class CurrentProgram:
    """Time-ordered pulses on top of a constant idle current."""

    pulses: tuple[CosinePulse, ...]
    I_idle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        if self.I_idle < 0:
            raise ScheduleError("idle current must be non-negative")
        for a, b in zip(self.pulses, self.pulses[1:]):
            if b.t0 < a.t_end - 1e-15:
                raise ScheduleError("pulses overlap or are out of order")
        for p in self.pulses:
            if p.I_max < 0:
                raise ScheduleError("pulse current must be non-negative")

    def breakpoints(self) -> tuple[float, ...]:
        return tuple(sorted({b for p in self.pulses for b in p.breakpoints()}))

    def check_envelope(self, max_current: float = SOURCE_MAX_CURRENT, max_slew: float = SOURCE_MAX_SLEW) -> list[str]:
        """Return (and warn about) envelope violations."""
        issues = []
        for i, p in enumerate(self.pulses):
            if p.I_max > max_current:
                issues.append(f"pulse {i}: current {p.I_max:.4g} A exceeds {max_current:.4g} A")
            if p.tau > 0:
                slew = np.pi * abs(p.I_max - self.I_idle) / (2 * p.tau)
                if slew > max_slew:
                    issues.append(f"pulse {i}: slew {slew * US * 1e3:.3g} mA/us "
                                  f"exceeds {max_slew * US * 1e3:.3g} mA/us")
        for msg in issues:
            warnings.warn(msg, EnvelopeWarning, stacklevel=2)
        return issues


def current_at(program: CurrentProgram, t) -> np.ndarray | float:
    """Current (A) of ``program`` at time(s) ``t``."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.full_like(t, program.I_idle)
    for p in program.pulses:
        out += (p.I_max - program.I_idle) * p.shape(t)
    return float(out[0]) if scalar else out


def current_derivative(program: CurrentProgram, t) -> np.ndarray | float:
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros_like(t)
    for p in program.pulses:
        out += (p.I_max - program.I_idle) * p.shape_derivative(t)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class SpinTimeline:
    """Initial state plus instantaneous flips ``(time, new_state)``."""

    initial: SpinState
    flips: tuple[tuple[float, SpinState], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "flips", tuple(self.flips))
        times = [t for t, _ in self.flips]
        if times != sorted(times):
            raise ScheduleError("spin flips must be time-ordered")

    def state_at(self, t: float) -> SpinState:
        """State in force at ``t``; a flip at ``t_f`` applies for ``t >= t_f``."""
        s = self.initial
        for tf, new in self.flips:
            if t >= tf:
                s = new
        return s

    def flip_times(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.flips)


@dataclass(frozen=True)
class QgiSchedule:
    """Complete current program and spin timelines of one interferometer run."""

    timings: Timings
    I_hold: float
    I_kick: float
    I_idle: float
    program: CurrentProgram
    spin_timeline: dict = field(hash=False)
    square: bool = False

    @property
    def t_total(self) -> float:
        return self.timings.total

    @property
    def hold_pulse(self) -> CosinePulse:
        return self.program.pulses[1]

    @property
    def kick_pulses(self) -> tuple[CosinePulse, CosinePulse]:
        return self.program.pulses[0], self.program.pulses[2]

    def current(self, t):
        return current_at(self.program, t)

    def state(self, arm: str, t: float) -> SpinState:
        return self.spin_timeline[arm].state_at(t)

    def breakpoints(self) -> tuple[float, ...]:
        """Pulse edges and spin flips within ``[0, t_total]``."""
        pts = set(self.program.breakpoints())
        for tl in self.spin_timeline.values():
            pts.update(tl.flip_times())
        pts.update((0.0, self.t_total))
        return tuple(sorted(p for p in pts if 0.0 <= p <= self.t_total))

    def kick_area(self) -> float:
        return sum(p.area_above(self.I_idle) for p in self.kick_pulses)

    def hold_area(self) -> float:
        return self.hold_pulse.area_above(self.I_idle)

    def perturbed(self, eps: float) -> "QgiSchedule":
        """Copy with the kick current scaled by ``1 + eps`` (closing condition broken)."""
        I_kick = self.I_kick * (1 + eps)
        pulses = list(self.program.pulses)
        pulses[0] = replace(pulses[0], I_max=I_kick)
        pulses[2] = replace(pulses[2], I_max=I_kick)
        return replace(self, I_kick=I_kick, program=CurrentProgram(tuple(pulses), self.I_idle))

    def sample(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """``(t, I)`` on a uniform grid, for export."""
        n = int(round(self.t_total / dt))
        t = np.linspace(0.0, self.t_total, n + 1)
        return t, current_at(self.program, t)


def kick_current(timings: Timings, I_hold: float, I_idle: float) -> float:
    """Kick amplitude satisfying the equal-area condition for cosine kicks."""
    w_kick = timings.T_kick - 2 * timings.tau_kick
    return (I_hold - I_idle) * timings.T_h / (2 * (timings.tau_kick + w_kick)) + I_idle


def _spin_timelines(t_flip1: float, t_total: float) -> dict[str, SpinTimeline]:
    t_flip2 = t_total - t_flip1
    return {
        BALLISTIC: SpinTimeline(STATE_1, ((t_flip1, STATE_0), (t_flip2, STATE_1))),
        REFERENCE: SpinTimeline(STATE_0, ((t_flip1, STATE_1), (t_flip2, STATE_0))),
    }


def build_schedule(
    timings: Timings,
    I_hold: float,
    I_idle: float = 0.0,
    *,
    source_limit: float | None = SOURCE_MAX_CURRENT,
    pi_delay: float = 50 * US,
    pi_duration: float = 16 * US,
    square: bool = False,
) -> QgiSchedule:
    """Build the kick / hold / kick program and the two spin timelines.

    Parameters
    ----------
    timings : Timings
        Schedule durations. The hold pulse starts ``T_d_raw`` after the first
        kick ends.
    I_hold, I_idle : float
        Holding and idle currents in A.
    source_limit : float or None
        Maximum source current; exceeding it raises
        :class:`HardwareEnvelopeError`. ``None`` disables the check.
    pi_delay, pi_duration : float
        The first spin flip is placed at the centre of a pi pulse starting
        ``pi_delay`` after the first kick. If that would fall after the hold
        pulse starts, the flip moves to the middle of the gap.
    square : bool
        Use square pulses (kicks of length ``T_kick``, hold of length ``T_h``
        starting ``T_d`` after the kick), matching the piecewise-constant
        analytic model.

    Returns
    -------
    QgiSchedule
    """
    if not I_hold > I_idle >= 0:
        raise ScheduleError("need I_hold > I_idle >= 0")
    if timings.T_h <= 0:
        raise ScheduleError("hold time T_h must be positive")
    T_k, T_h = timings.T_kick, timings.T_h
    t_total = timings.total
    if square:
        if T_k <= 0:
            raise ScheduleError("square kicks need T_kick > 0")
        I_kick = (I_hold - I_idle) * T_h / (2 * T_k) + I_idle
        kick1 = CosinePulse(0.0, 0.0, T_k, I_kick)
        hold = CosinePulse(T_k + timings.T_d, 0.0, T_h, I_hold)
        kick2 = CosinePulse(t_total - T_k, 0.0, T_k, I_kick)
    else:
        w_kick = T_k - 2 * timings.tau_kick
        if w_kick < -1e-15 or timings.tau_kick + max(w_kick, 0.0) <= 0:
            raise ScheduleError("T_kick must be at least 2 tau_kick and positive")
        w_kick = max(w_kick, 0.0)
        if T_h < timings.tau_hold:
            raise ScheduleError("hold time shorter than its ramp")
        if timings.T_d_raw < 0:
            raise ScheduleError("T_d smaller than half the hold ramp")
        I_kick = kick_current(timings, I_hold, I_idle)
        kick1 = CosinePulse(0.0, timings.tau_kick, w_kick, I_kick)
        hold = CosinePulse(T_k + timings.T_d_raw, timings.tau_hold, T_h - timings.tau_hold, I_hold)
        kick2 = CosinePulse(t_total - T_k, timings.tau_kick, w_kick, I_kick)
    if source_limit is not None and I_kick > source_limit:
        raise HardwareEnvelopeError(f"kick current {I_kick * 1e3:.1f} mA exceeds "
                                    f"source limit {source_limit * 1e3:.1f} mA")
    program = CurrentProgram((kick1, hold, kick2), I_idle)
    program.check_envelope(max_current=np.inf if source_limit is None else source_limit)

    t_flip = T_k + pi_delay + pi_duration / 2
    if t_flip > hold.t0:
        t_flip = 0.5 * (T_k + hold.t0)
    return QgiSchedule(timings, I_hold, I_kick, I_idle, program, _spin_timelines(t_flip, t_total), square)


@dataclass(frozen=True)
class LevitationCalibration:
    I_hold: float
    residual_a: float
    method: str
    currents: tuple[float, ...] = ()
    accelerations: tuple[float, ...] = ()


def _a_z(I, z_atom, y_atom, geometry, bias, species, constants, state):
    return float(acceleration_of(state, (0.0, y_atom, z_atom), I, geometry, bias, species, constants)[2])


def calibrate_levitation(
    geometry: WireGeometry = DEFAULT_GEOMETRY,
    bias: BiasField = DEFAULT_BIAS,
    species: Species = RB87,
    z_atom: float = -113e-6,
    I_range: Sequence[float] = (1e-3, 0.1),
    *,
    y_atom: float = 0.0,
    state: SpinState = STATE_1,
    constants: Constants = CONSTANTS,
) -> LevitationCalibration:
    """Holding current that zeroes the vertical acceleration of ``state`` at ``z_atom``.

    Raises
    ------
    CalibrationError
        If the net acceleration has no sign change over ``I_range``.
    """
    lo, hi = map(float, I_range)
    args = (z_atom, y_atom, geometry, bias, species, constants, state)
    f_lo, f_hi = _a_z(lo, *args), _a_z(hi, *args)
    if np.sign(f_lo) == np.sign(f_hi):
        raise CalibrationError(f"no sign change of a_z over I in [{lo:.4g}, {hi:.4g}] A")
    I = brentq(_a_z, lo, hi, args=args, xtol=1e-15, rtol=1e-14)
    return LevitationCalibration(I, _a_z(I, *args), "root")


def calibrate_levitation_by_fits(
    currents: Sequence[float],
    geometry: WireGeometry = DEFAULT_GEOMETRY,
    bias: BiasField = DEFAULT_BIAS,
    species: Species = RB87,
    z_atom: float = -113e-6,
    *,
    duration: float = 2e-3,
    n_samples: int = 41,
    y_atom: float = 0.0,
    state: SpinState = STATE_1,
    constants: Constants = CONSTANTS,
) -> LevitationCalibration:
    """Experimental-style calibration from simulated held trajectories.

    Each current is held constant while an atom starting at rest at
    ``z_atom`` is integrated; ``z(t) = z0 + v0 t + a t^2 / 2`` is fitted, and
    the zero crossing of a linear fit of ``a`` versus current gives ``I_hold``.
    """
    currents = np.asarray(currents, dtype=float)
    if currents.size < 2:
        raise CalibrationError("need at least two currents")
    t_eval = np.linspace(0.0, duration, n_samples)
    accs = []
    for I in currents:
        def rhs(_t, y, I=I):
            return (y[1], _a_z(I, y[0], y_atom, geometry, bias, species, constants, state))

        sol = solve_ivp(rhs, (0.0, duration), (z_atom, 0.0), t_eval=t_eval, rtol=1e-11, atol=1e-16, method="DOP853")
        if not sol.success:
            raise CalibrationError(f"trajectory integration failed at I = {I:.4g} A")
        c2 = np.polyfit(t_eval, sol.y[0], 2)[0]
        accs.append(2 * c2)
    slope, intercept = np.polyfit(currents, accs, 1)
    if slope == 0:
        raise CalibrationError("acceleration does not depend on current")
    I = -intercept / slope
    return LevitationCalibration(I, _a_z(I, z_atom, y_atom, geometry, bias, species, constants, state),
                                 "parabola-fit", tuple(currents), tuple(accs))

