"""Interferometer phase by four independent routes.

Sign convention
---------------
Unless stated otherwise, a phase difference is ``phi_reference -
phi_ballistic``, which grows positively with the free-fall time
(``POSITIVE_CONVENTION``). The gauge-route bookkeeping naturally produces the
opposite sign (``BALLISTIC_MINUS_REFERENCE``); :func:`gauge_route_phase`
flips it and says so in its docstring.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import least_squares

from qgi.core import CONSTANTS, RB87, Constants, MassPair, Species, Timings
from qgi.dynamics import Trajectory, analytic_arms, initial_conditions, segment_durations
from qgi.errors import ConfigError
from qgi.pulses import BALLISTIC, REFERENCE

POSITIVE_CONVENTION = "reference-minus-ballistic"
BALLISTIC_MINUS_REFERENCE = "ballistic-minus-reference"
NEWTONIAN = "Newtonian"
EINSTEINIAN = "Einsteinian"


class QuadratureAccuracyWarning(UserWarning):
    """Estimated quadrature error exceeds the requested tolerance."""


@dataclass(frozen=True)
class PhaseBreakdown:
    """Action phase of one arm split into kinetic, potential and pulse parts (rad)."""

    kinetic: float
    potential: float
    pulses: float
    arm: str
    frame: str = NEWTONIAN
    error_estimate: float = 0.0

    @property
    def total(self) -> float:
        return self.kinetic + self.potential + self.pulses


@dataclass(frozen=True)
class ActionContext:
    """Reference data for the action integral.

    ``z0_potential_zero`` is where the applied potential ``-m a(t) (z - z0)``
    vanishes; a closed interferometer does not depend on it.
    """

    z0_potential_zero: float = 0.0
    frame: str = NEWTONIAN
    mass_pair: MassPair = field(default_factory=lambda: MassPair.equal(RB87))
    tolerance: float = 1e-6

    def __post_init__(self):
        if not np.isfinite(self.z0_potential_zero):
            raise ConfigError("z0 must be finite")


def _k(species: Species, constants: Constants) -> float:
    return species.mass_kg / constants.hbar


def gauge_phase(z, t, a, species: Species = RB87, constants: Constants = CONSTANTS):
    """Phase ``(m/hbar)(-a^2 t^3 / 6 + a z t)`` linking a force-free frame to one accelerating at ``a``.

    With ``a = -g`` this is the free-fall gauge phase.
    """
    return _k(species, constants) * (-(a**2) * t**3 / 6 + a * z * t)


def gedanken_phase(T_half: float, g: float, species: Species = RB87, constants: Constants = CONSTANTS) -> float:
    """Instantaneous-kick limit ``m g^2 T^3 / (3 hbar)``."""
    return _k(species, constants) * g**2 * T_half**3 / 3


def analytic_qgi_phase(timings: Timings, g: float, species: Species = RB87, constants: Constants = CONSTANTS) -> float:
    """Closed-form phase of the square-pulse model, positive convention.

    ``(m g^2 / 3 hbar) [T^3 + T^2 Tk + T (Tk^2 + Tk Td) - Td (Tk + Td)^2]``
    """
    T, Tk, Td = timings.T_half, timings.T_kick, timings.T_d
    poly = T**3 + T**2 * Tk + T * (Tk**2 + Tk * Td) - Td * (Tk + Td) ** 2
    return _k(species, constants) * g**2 * poly / 3


def analytic_qgi_phase_derivative(timings: Timings, g: float, species: Species = RB87,
                                  constants: Constants = CONSTANTS) -> float:
    """``d(phase)/d(2T)`` of :func:`analytic_qgi_phase` at fixed ``T_kick``, ``T_d``."""
    T, Tk, Td = timings.T_half, timings.T_kick, timings.T_d
    return _k(species, constants) * g**2 * (3 * T**2 + 2 * T * Tk + Tk**2 + Tk * Td) / 6


def ballistic_arm_phase_closed_form(timings: Timings, g: float, species: Species = RB87,
                                    constants: Constants = CONSTANTS) -> float:
    """Action phase of the ballistic arm (potential zero at the holding point)."""
    T, Tk, Td = timings.T_half, timings.T_kick, timings.T_d
    poly = (-T**3 - T**2 * Tk - T * Tk**2 - T * Tk * Td + 2 * Tk**3 + 7 * Tk**2 * Td
            + 8 * Tk * Td**2 + 3 * Td**3)
    return _k(species, constants) * g**2 * poly / 3


def reference_arm_phase(T_kick: float, T_d: float, g: float, species: Species = RB87,
                        constants: Constants = CONSTANTS) -> float:
    """Phase of the reference arm, ``(2m/3hbar) g^2 (T_kick + T_d)^3``; independent of the hold time."""
    return 2 * _k(species, constants) * g**2 * (T_kick + T_d) ** 3 / 3


def mismatch_phase(a_hold: float, g: float, T_half: float, species: Species = RB87,
                   constants: Constants = CONSTANTS) -> float:
    """Instantaneous-kick phase when the hold acceleration ``a`` differs from ``g``.

    ``m a (a - 2g) T^3 / (3 hbar)``; its magnitude is maximal at ``a = g``.
    """
    return _k(species, constants) * a_hold * (a_hold - 2 * g) * T_half**3 / 3


def mismatch_quadratic_deviation(a_hold: float, g: float, T_half: float, species: Species = RB87,
                                 constants: Constants = CONSTANTS) -> float:
    """``m (a - g)^2 T^3 / (3 hbar)``, the change of :func:`mismatch_phase` relative to ``a = g``."""
    return _k(species, constants) * (a_hold - g) ** 2 * T_half**3 / 3


def ambient_t3_phase(tau_dd: float, a_ambient, g: float, species: Species = RB87,
                     constants: Constants = CONSTANTS):
    """Spin-echo phase from a residual gradient, ``(m/hbar) tau^3 (a^2 + 2 g a)``."""
    a_ambient = np.asarray(a_ambient, dtype=float)
    out = _k(species, constants) * np.asarray(tau_dd, dtype=float) ** 3 * (a_ambient**2 + 2 * g * a_ambient)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class AmbientFit:
    a_ambient: float
    sigma: float
    mean: float
    amplitude: float


def fit_ambient_gradient(tau_dd: Sequence[float], population: Sequence[float], g: float = CONSTANTS.g_earth,
                         *, a_grid: Sequence[float] | None = None, species: Species = RB87,
                         constants: Constants = CONSTANTS) -> AmbientFit:
    """Fit ``P = c + A cos(dphi(tau; a))`` to a spin-echo scan and return ``a``.

    A coarse scan over ``a_grid`` picks the basin; ``least_squares`` refines
    ``(a, c, A)``. The uncertainty comes from the Jacobian at the optimum.
    """
    tau = np.asarray(tau_dd, dtype=float)
    p = np.asarray(population, dtype=float)
    if tau.size < 4:
        raise ConfigError("need at least four points")
    a_grid = np.linspace(0.0, 1.0, 2001) if a_grid is None else np.asarray(a_grid, dtype=float)

    def linear_fit(a):
        c = np.cos(ambient_t3_phase(tau, a, g, species, constants))
        X = np.column_stack([np.ones_like(c), c])
        coef, *_ = np.linalg.lstsq(X, p, rcond=None)
        return coef, float(np.sum((X @ coef - p) ** 2))

    best = min(a_grid, key=lambda a: linear_fit(a)[1])
    (c0, A0), _ = linear_fit(best)

    def resid(x):
        return x[1] + x[2] * np.cos(ambient_t3_phase(tau, x[0], g, species, constants)) - p

    sol = least_squares(resid, [best, c0, A0], x_scale=[1e-2, 1.0, 1.0])
    dof = max(tau.size - 3, 1)
    s2 = 2 * sol.cost / dof
    try:
        cov = np.linalg.inv(sol.jac.T @ sol.jac) * s2
        sigma = float(np.sqrt(cov[0, 0]))
    except np.linalg.LinAlgError:
        sigma = float("nan")
    return AmbientFit(float(sol.x[0]), sigma, float(sol.x[1]), float(sol.x[2]))


# -- action route -------------------------------------------------------------

def _simpson(y: np.ndarray, h: float) -> float:
    return h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())


def _integrate_segment(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Composite Simpson with a Richardson correction; returns ``(value, error)``."""
    n = len(t) - 1
    h = (t[-1] - t[0]) / n
    if n % 2:
        return float(np.trapezoid(y, t)), float("inf")
    fine = _simpson(y, h)
    if n % 4:
        return fine, float("inf")
    coarse = _simpson(y[::2], 2 * h)
    corr = (fine - coarse) / 15
    return fine + corr, abs(corr)


def action_phase(traj: Trajectory, ctx: ActionContext = ActionContext(), *,
                 constants: Constants = CONSTANTS) -> PhaseBreakdown:
    """Action phase ``(1/hbar) int [m v^2 / 2 + m a(t) (z - z0)] dt`` of one arm.

    ``a(t)`` is the net acceleration stored in the trajectory. Velocity jumps
    between segments are treated as impulsive kicks contributing
    ``m dv (z - z0) / hbar``.

    Warns
    -----
    QuadratureAccuracyWarning
        If the Richardson error estimate exceeds ``ctx.tolerance``.
    """
    m = ctx.mass_pair.m_i
    z0 = ctx.z0_potential_zero
    kin = pot = err = 0.0
    for seg in traj.segments:
        k, ek = _integrate_segment(seg.t, 0.5 * m * seg.v**2)
        p, ep = _integrate_segment(seg.t, m * seg.a * (seg.z - z0))
        kin, pot, err = kin + k, pot + p, err + ek + ep
    pulses = 0.0
    for s0, s1 in zip(traj.segments, traj.segments[1:]):
        dv = s1.v[0] - s0.v[-1]
        if dv != 0.0:
            pulses += m * dv * (s1.z[0] - z0)
    hbar = constants.hbar
    err /= hbar
    if err > ctx.tolerance:
        warnings.warn(f"action quadrature error estimate {err:.2e} rad exceeds {ctx.tolerance:.1e} rad",
                      QuadratureAccuracyWarning, stacklevel=2)
    return PhaseBreakdown(kin / hbar, pot / hbar, pulses / hbar, traj.arm, ctx.frame, err)


def phase_difference(breakdowns: dict[str, PhaseBreakdown]) -> float:
    """Reference minus ballistic total phase (positive convention)."""
    return breakdowns[REFERENCE].total - breakdowns[BALLISTIC].total


def action_route_phase(timings: Timings, g: float, species: Species = RB87, constants: Constants = CONSTANTS,
                       *, z0: float = 0.0, n_per_segment: int = 64) -> float:
    """Phase from numerical quadrature over the square-pulse trajectories."""
    arms = analytic_arms(timings, g, n_per_segment=n_per_segment)
    ctx = ActionContext(z0, NEWTONIAN, MassPair.equal(species))
    return phase_difference({arm: action_phase(tr, ctx, constants=constants) for arm, tr in arms.items()})


# -- gauge route --------------------------------------------------------------

def gauge_route_terms(timings: Timings, g: float, species: Species = RB87,
                      constants: Constants = CONSTANTS) -> dict[str, float]:
    """Pieces of the gauge-transformation derivation (ballistic-minus-reference sign).

    Keys: ``kick`` (one kick, taken in the frame accelerating with the
    net kick acceleration), ``ballistic_free``, ``reference`` and ``total``.
    """
    T, Tk, Td = timings.T_half, timings.T_kick, timings.T_d
    if Tk <= 0:
        raise ConfigError("gauge route needs T_kick > 0")
    a = g * (T - Td) / Tk - g
    z0, v0 = initial_conditions(timings, g)
    z1 = z0 + v0 * Tk + 0.5 * a * Tk**2
    if a == 0:
        raise ConfigError("kick exactly cancels gravity; gauge frame undefined")
    t0 = v0 / a
    kick = gauge_phase(z1, t0 + Tk, a, species, constants) - gauge_phase(z0, t0, a, species, constants)
    k = _k(species, constants)
    ball_free = 2 * k * (-(g**2) * T**3 / 6 - g * z1 * T)
    ref = reference_arm_phase(Tk, Td, g, species, constants)
    return {"kick": kick, "ballistic_free": ball_free, "reference": ref, "total": 2 * kick + ball_free - ref}


def gauge_route_phase(timings: Timings, g: float, species: Species = RB87, constants: Constants = CONSTANTS) -> float:
    """Phase from gauge transformations, returned in the positive convention.

    The natural bookkeeping ``2 phi_kick + phi_free - phi_ref`` yields the
    negative of the positive-convention phase; this function returns its
    negation.
    """
    return -gauge_route_terms(timings, g, species, constants)["total"]


# -- Galilean route -----------------------------------------------------------

@dataclass(frozen=True)
class GalileanPhase:
    chi0: float
    chi1: float


def galilean_transform_phase(t: float, z: float, v0: float, mass_pair: MassPair, g: float,
                             constants: Constants = CONSTANTS) -> GalileanPhase:
    """Transformation phase ``chi0(t) + chi1(t) z`` between the lab and the falling frame.

    ``chi1`` is returned in rad/m; ``z`` is accepted for symmetry with
    :func:`gauge_phase` and does not enter ``chi0`` or ``chi1``.
    """
    mi, mg, hb = mass_pair.m_i, mass_pair.m_g, constants.hbar
    chi0 = -(mi**2 * v0**2 * t - mi * mg * v0 * g * t**2 + mg**2 * g**2 * t**3 / 3) / (2 * hb * mi)
    chi1 = (mi * v0 - mg * g * t) / hb
    return GalileanPhase(chi0, chi1)


def _chi0_force(t: float, p0: float, force: float, m_i: float, hbar: float) -> float:
    """``-(1/2 hbar m_i) int_0^t (p0 + F s)^2 ds``."""
    return -(p0**2 * t + p0 * force * t**2 + force**2 * t**3 / 3) / (2 * hbar * m_i)


def galilean_route_phase(timings: Timings, g: float, mass_pair: MassPair | None = None,
                         constants: Constants = CONSTANTS, *, z0: float = 0.0) -> float:
    """Phase composed segment-by-segment from Galilean transformation phases.

    Each constant-force segment contributes ``chi0 + p_end dz / hbar +
    F_applied (z_start - z0) tau / hbar``. Gravity acts on ``m_g``, the
    magnetic levitation force is ``m_g g`` and the kicks satisfy equal area,
    so ``m_i != m_g`` can be explored.
    """
    if timings.T_kick <= 0:
        raise ConfigError("Galilean route needs T_kick > 0; use galilean_gedanken_phase for instantaneous kicks")
    mp = MassPair.equal(RB87) if mass_pair is None else mass_pair
    mi, mg, hb = mp.m_i, mp.m_g, constants.hbar
    F_hold = mg * g
    F_kick = F_hold * timings.T_h / (2 * timings.T_kick)
    applied = {BALLISTIC: (F_kick, 0, 0, 0, F_kick), REFERENCE: (0, 0, F_hold, 0, 0)}
    tau0 = timings.T_kick + timings.T_d
    g_i = g * mg / mi
    durations = segment_durations(timings)
    phases = {}
    for arm, forces in applied.items():
        z, p, phi = -0.5 * g_i * tau0**2, mi * g_i * tau0, 0.0
        for dur, Fa in zip(durations, forces):
            if dur <= 0:
                continue
            F = Fa - mg * g
            z_end = z + p / mi * dur + 0.5 * F / mi * dur**2
            p_end = p + F * dur
            phi += _chi0_force(dur, p, F, mi, hb) + p_end * (z_end - z) / hb + F * (z - z0) * dur / hb
            z, p = z_end, p_end
        phases[arm] = phi
    return phases[REFERENCE] - phases[BALLISTIC]


def galilean_gedanken_phase(T_half: float, mass_pair: MassPair, g: float, constants: Constants = CONSTANTS) -> float:
    """``chi0(2T)`` under the closing condition ``T = m_i v0 / (m_g g)``."""
    v0 = mass_pair.m_g * g * T_half / mass_pair.m_i
    return galilean_transform_phase(2 * T_half, 0.0, v0, mass_pair, g, constants).chi0


# -- two-frame ledger ---------------------------------------------------------

def _path_breakdown(v0: float, acc: float, duration: float, m: float, hbar: float, arm: str, frame: str,
                    kicked: bool) -> PhaseBreakdown:
    """Exact action pieces of ``z = v0 t + acc t^2 / 2`` from ``z = 0`` (potential zero at 0)."""
    zp = Polynomial([0.0, v0, 0.5 * acc])
    vp = zp.deriv()
    kin = (0.5 * m * vp**2).integ()
    pot = (m * acc * zp).integ()
    kinetic = (kin(duration) - kin(0.0)) / hbar
    potential = (pot(duration) - pot(0.0)) / hbar
    pulses = 0.0
    if kicked:
        # launch at z(0) = 0, stop at z(duration)
        pulses = (m * v0 * zp(0.0) - m * vp(duration) * zp(duration)) / hbar
    return PhaseBreakdown(kinetic, potential, pulses, arm, frame)


def frame_ledger(T_half: float, v0: float, g: float, a: float, species: Species = RB87,
                 constants: Constants = CONSTANTS, *, closing: bool = False,
                 levitation: bool = False) -> dict[tuple[str, str], PhaseBreakdown]:
    """Actions of both arms in the laboratory and the freely falling frame (rad).

    Instantaneous kicks, duration ``2T``, both paths start at the origin.
    In the laboratory (Newtonian) frame the ballistic path is
    ``v0 t - g t^2 / 2`` and the reference stays at rest. In the falling
    (Einsteinian) frame the roles swap and the reference path is
    ``-v0 t + a t^2 / 2`` under the applied acceleration ``a``.

    Parameters
    ----------
    closing : bool
        Substitute ``v0 = g T`` (Newtonian) and ``v0 = a T`` (Einsteinian).
    levitation : bool
        Substitute ``a = -g``.
    """
    m, hb, dur = species.mass_kg, constants.hbar, 2 * T_half
    if levitation:
        a = -g
    vN = g * T_half if closing else v0
    vE = a * T_half if closing else v0
    zero = lambda arm, frame: PhaseBreakdown(0.0, 0.0, 0.0, arm, frame)  # noqa: E731
    return {
        (REFERENCE, NEWTONIAN): zero(REFERENCE, NEWTONIAN),
        (BALLISTIC, NEWTONIAN): _path_breakdown(vN, -g, dur, m, hb, BALLISTIC, NEWTONIAN, kicked=True),
        (REFERENCE, EINSTEINIAN): _path_breakdown(-vE, a, dur, m, hb, REFERENCE, EINSTEINIAN, kicked=True),
        (BALLISTIC, EINSTEINIAN): zero(BALLISTIC, EINSTEINIAN),
    }


def ledger_difference(ledger: dict[tuple[str, str], PhaseBreakdown], frame: str) -> float:
    """Ballistic minus reference total, the orientation used by the ledger."""
    return ledger[(BALLISTIC, frame)].total - ledger[(REFERENCE, frame)].total


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseRow:
    two_T: float
    phi_analytic: float
    phi_action: float
    phi_gauge: float
    phi_gedanken: float
    dphi_d2T: float


def phase_table(two_Ts: Sequence[float], template: Timings, g: float, species: Species = RB87,
                constants: Constants = CONSTANTS) -> list[PhaseRow]:
    """Phase-versus-``2T`` rows by the closed form, action and gauge routes."""
    rows = []
    for x in two_Ts:
        tm = Timings(T_half=x / 2, T_kick=template.T_kick, T_d=template.T_d,
                     tau_kick=template.tau_kick, tau_hold=template.tau_hold)
        rows.append(PhaseRow(
            two_T=float(x),
            phi_analytic=analytic_qgi_phase(tm, g, species, constants),
            phi_action=action_route_phase(tm, g, species, constants),
            phi_gauge=gauge_route_phase(tm, g, species, constants),
            phi_gedanken=gedanken_phase(tm.T_half, g, species, constants),
            dphi_d2T=analytic_qgi_phase_derivative(tm, g, species, constants),
        ))
    return rows

