"""Gaussian wave packets in locally quadratic potentials.

A packet is described by its mean position and momentum, the 6x6 phase-space
covariance ``sigma`` (ordering ``x, y, z, px, py, pz``) and a global phase.
For a pure Gaussian

    psi(r) = N exp{(i/hbar)[(r-q)^T Z (r-q)/2 + p.(r-q)] + i phase},

``Z = X + iY`` with ``Y = (hbar/2) sigma_xx^-1`` and ``X = sigma_xx^-1 sigma_xp``.

Between steps the mean follows RK4 and the covariance is transported by the
exact symplectic flow ``expm(A h)`` of the quadratic Hamiltonian whose
curvature is evaluated at the step midpoint. The global phase accumulates the
Lagrangian of the mean plus ``-(hbar/4m) tr(sigma_xx^-1)``, the width
(Gouy-type) contribution.

Energies entering the phase are measured from the holding point
``r_ref``: ``V(r) - V(r_ref) + m g (z - z_ref)``. This drops the uniform
Zeeman offsets, which the symmetric spin-echo pulse sequence cancels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from qgi.core import CONSTANTS, RB87, STATE_1, SpinState, Timings
from qgi.dynamics import initial_conditions, merged_breakpoints, segment_steps
from qgi.errors import ConfigError, NumericalError
from qgi.fieldmap import FieldModel
from qgi.phases import _integrate_segment
from qgi.pulses import ARMS, BALLISTIC, REFERENCE, QgiSchedule

US = 1e-6
UM = 1e-6
DEFAULT_STEP = 0.5 * US
EDGE_GUARD = 1e-13

DEFAULT_WIDTHS = (3.13 * UM, 1.31 * UM, 1.31 * UM)
FREE_EXPANSION_RATE = 3.1e-3  # m/s
DKC_EXPANSION_RATE = 0.4e-3  # m/s
DKC_TIME = 1030 * US + 55 * US  # trap release to lens centre
HOLD_START_TIME = 2930 * US  # trap release to start of the hold pulse
WAIST_DELAY = 1000 * US  # first kick to collimated waist

SYMPLECTIC_FORM = np.block([[np.zeros((3, 3)), np.eye(3)], [-np.eye(3), np.zeros((3, 3))]])


@dataclass(frozen=True)
class GaussianState:
    """Phase-space Gaussian with spin label and accumulated phases.

    ``phase`` is the total global phase; ``path_phase`` is the part due to the
    classical action of the mean alone.
    """

    mean_r: np.ndarray
    mean_p: np.ndarray
    sigma: np.ndarray
    phase: float = 0.0
    state: SpinState = STATE_1
    path_phase: float = 0.0
    t: float = 0.0
    mass: float = RB87.mass_kg

    def __post_init__(self):
        r = np.asarray(self.mean_r, dtype=float).reshape(3)
        p = np.asarray(self.mean_p, dtype=float).reshape(3)
        s = np.asarray(self.sigma, dtype=float).reshape(6, 6)
        if not np.allclose(s, s.T, rtol=1e-9, atol=0):
            raise ConfigError("covariance must be symmetric")
        object.__setattr__(self, "mean_r", r)
        object.__setattr__(self, "mean_p", p)
        object.__setattr__(self, "sigma", 0.5 * (s + s.T))

    @classmethod
    def minimal(cls, widths: Sequence[float], mean_r=(0.0, 0.0, 0.0), mean_p=(0.0, 0.0, 0.0), *,
                state: SpinState = STATE_1, mass: float = RB87.mass_kg, hbar: float = CONSTANTS.hbar,
                t: float = 0.0) -> "GaussianState":
        """Minimum-uncertainty packet with position widths ``widths``."""
        w = np.asarray(widths, dtype=float)
        if w.shape != (3,) or np.any(w <= 0):
            raise ConfigError("need three positive widths")
        sxx = np.diag(w**2)
        spp = np.diag(hbar**2 / (4 * w**2))
        sigma = np.block([[sxx, np.zeros((3, 3))], [np.zeros((3, 3)), spp]])
        return cls(mean_r, mean_p, sigma, state=state, mass=mass, t=t)

    @property
    def widths(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma)[:3])

    @property
    def velocity_widths(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma)[3:]) / self.mass

    def tilt_yz(self) -> float:
        """Orientation of the position ellipse in the y-z plane (rad)."""
        s = self.sigma
        return 0.5 * float(np.arctan2(2 * s[1, 2], s[1, 1] - s[2, 2]))

    def uncertainty_product(self) -> float:
        """``det(sigma)``; at least ``(hbar/2)^6`` for a physical state."""
        return float(np.linalg.det(self.sigma))

    def z_matrix(self, hbar: float = CONSTANTS.hbar) -> np.ndarray:
        sxx, sxp = self.sigma[:3, :3], self.sigma[:3, 3:]
        inv = np.linalg.inv(sxx)
        return inv @ sxp + 0.5j * hbar * inv


@dataclass(frozen=True)
class OverlapResult:
    visibility: float
    phase: float
    path_phase: float
    shape_phase: float
    amplitude: complex
    separation_phase: float = 0.0


def _wrap(x: float) -> float:
    return float((x + np.pi) % (2 * np.pi) - np.pi)


def overlap(a: GaussianState, b: GaussianState, hbar: float = CONSTANTS.hbar, *,
            require_same_spin: bool = False) -> OverlapResult:
    """Closed-form ``<a|b>`` of the spatial parts of two pure Gaussians.

    Spin labels are ignored unless ``require_same_spin``; the arms of the
    interferometer end in different states that the closing beam splitter
    maps onto each other.

    ``path_phase`` is the classical part: the difference of accumulated
    mean-path phases plus the separation phase ``-pbar.(q_b - q_a)/hbar`` of
    imperfectly closed arms. The total phase is unwrapped around it and
    ``shape_phase`` is the remainder.
    """
    if require_same_spin and a.state != b.state:
        raise ConfigError("overlap needs both packets in the same spin state")
    Za, Zb = a.z_matrix(hbar), b.z_matrix(hbar)
    qa, qb, pa, pb = a.mean_r, b.mean_r, a.mean_p, b.mean_p
    M = -(1j / hbar) * (Zb - np.conj(Za))
    J = (1j / hbar) * (pb - pa - Zb @ qb + np.conj(Za) @ qa)
    c = (1j / hbar) * (0.5 * qb @ Zb @ qb - pb @ qb - 0.5 * qa @ np.conj(Za) @ qa + pa @ qa)
    eig = np.linalg.eigvals(M)
    if np.any(eig.real <= 0):
        raise NumericalError("overlap Gaussian not integrable")
    Ya, Yb = Za.imag, Zb.imag
    log_norm = 0.25 * (np.linalg.slogdet(Ya / (np.pi * hbar))[1] + np.linalg.slogdet(Yb / (np.pi * hbar))[1])
    log_int = 1.5 * np.log(2 * np.pi) - 0.5 * np.sum(np.log(eig)) + 0.5 * J @ np.linalg.solve(M, J) + c
    log_amp = log_norm + log_int + 1j * (b.phase - a.phase)
    amp = complex(np.exp(log_amp))
    sep = -0.5 * float((pa + pb) @ (qb - qa)) / hbar
    path = b.path_phase - a.path_phase + sep
    total = path + _wrap(float(np.angle(amp)) - path)
    return OverlapResult(min(abs(amp), 1.0), total, path, total - path, amp, sep)


def apply_lens(state: GaussianState, focal_strength: float, axis: int | Sequence[int] = 2, *,
               center: Sequence[float] | None = None, hbar: float = CONSTANTS.hbar) -> GaussianState:
    """Thin lens ``p -> p - m k (r - c)`` along the given axes.

    With ``center=None`` the lens is centred on the packet, so only the shape
    changes. ``k > 0`` focuses.
    """
    if not np.isfinite(focal_strength):
        raise ConfigError("focal strength must be finite")
    axes = [axis] if np.ndim(axis) == 0 else list(axis)
    P = np.zeros((3, 3))
    for ax in axes:
        P[ax, ax] = 1.0
    mk = state.mass * focal_strength
    S = np.block([[np.eye(3), np.zeros((3, 3))], [-mk * P, np.eye(3)]])
    c = state.mean_r if center is None else np.asarray(center, dtype=float)
    d = P @ (state.mean_r - c)
    mean_p = state.mean_p - mk * d
    dphase = -0.5 * mk * float(d @ d) / hbar
    return replace(state, mean_p=mean_p, sigma=S @ state.sigma @ S.T,
                   phase=state.phase + dphase, path_phase=state.path_phase + dphase)


def free_flight(state: GaussianState, duration: float, g: float = 0.0) -> GaussianState:
    """Exact force-free (or uniform-gravity) covariance transport; phases untouched."""
    m = state.mass
    S = np.block([[np.eye(3), duration / m * np.eye(3)], [np.zeros((3, 3)), np.eye(3)]])
    acc = np.array([0.0, 0.0, -g])
    r = state.mean_r + state.mean_p / m * duration + 0.5 * acc * duration**2
    p = state.mean_p + m * acc * duration
    return replace(state, mean_r=r, mean_p=p, sigma=S @ state.sigma @ S.T, t=state.t + duration)


def lens_for_rate(state: GaussianState, target_rate: float, axis: int = 2, *, converging: bool = True,
                  hbar: float = CONSTANTS.hbar) -> float:
    """Lens strength after which the asymptotic velocity width along ``axis`` equals ``target_rate``.

    Solves ``(s_pp - m k s_xp)... = (m v)^2`` for ``k``; two roots exist when
    the target is above the minimum-uncertainty floor. ``converging`` selects
    the one leaving a focusing (negative) position-momentum correlation.
    """
    m = state.mass
    sxx, sxp, spp = state.sigma[axis, axis], state.sigma[axis, axis + 3], state.sigma[axis + 3, axis + 3]
    # after the lens: spp' = spp - 2 m k sxp + (m k)^2 sxx
    a, b, c = sxx, -2 * sxp, spp - (m * target_rate) ** 2
    disc = b * b - 4 * a * c
    if disc < 0:
        raise ConfigError("target expansion rate below the minimum-uncertainty floor")
    roots = sorted(((-b - np.sqrt(disc)) / (2 * a), (-b + np.sqrt(disc)) / (2 * a)))
    mk = roots[1] if converging else roots[0]
    return mk / m


def release_chirp(widths: Sequence[float], rate: float, mass: float = RB87.mass_kg,
                  hbar: float = CONSTANTS.hbar) -> float:
    """Diverging lens strength giving a minimum-uncertainty packet of width ``w`` the velocity width ``rate``."""
    w = float(widths)
    extra = (mass * rate) ** 2 - hbar**2 / (4 * w**2)
    if extra < 0:
        raise ConfigError("rate below the minimum-uncertainty floor")
    return -np.sqrt(extra) / (mass * w)


def collimated_state(widths: Sequence[float] = DEFAULT_WIDTHS, rate: float = DKC_EXPANSION_RATE,
                     waist_delay: float = WAIST_DELAY, *, state: SpinState = STATE_1,
                     mass: float = RB87.mass_kg, hbar: float = CONSTANTS.hbar) -> GaussianState:
    """Minimum-uncertainty packet whose y/z waist lies ``waist_delay`` in the future.

    The y and z velocity widths equal ``rate``; the x width is kept from
    ``widths`` (the dynamics do not depend on x).
    """
    w0 = hbar / (2 * mass * rate)
    g0 = GaussianState.minimal((widths[0], w0, w0), state=state, mass=mass, hbar=hbar)
    return free_flight(g0, -waist_delay)


def lensed_state(widths: Sequence[float] = DEFAULT_WIDTHS, *, free_rate: float = FREE_EXPANSION_RATE,
                 dkc_rate: float = DKC_EXPANSION_RATE, dkc_time: float = DKC_TIME, flight: float,
                 converging: bool = True, state: SpinState = STATE_1, mass: float = RB87.mass_kg,
                 hbar: float = CONSTANTS.hbar) -> GaussianState:
    """Release, chirped expansion, thin-lens collimation and free flight of a pure Gaussian.

    The interaction-driven expansion is represented by a diverging chirp on
    ``y`` and ``z`` reproducing ``free_rate``; a lens at ``dkc_time`` sets the
    velocity width to ``dkc_rate``; the packet then flies for ``flight``.
    """
    g0 = GaussianState.minimal(widths, state=state, mass=mass, hbar=hbar)
    for ax in (1, 2):
        g0 = apply_lens(g0, release_chirp(widths[ax], free_rate, mass, hbar), ax, hbar=hbar)
    g1 = free_flight(g0, dkc_time)
    for ax in (1, 2):
        g1 = apply_lens(g1, lens_for_rate(g1, dkc_rate, ax, converging=converging, hbar=hbar), ax, hbar=hbar)
    return free_flight(g1, flight)


def prepared_state(timings: Timings, *, z_hold: float = -113e-6, y: float = 0.0, g: float = CONSTANTS.g_earth,
                   model: str = "waist", widths: Sequence[float] = DEFAULT_WIDTHS,
                   waist_delay: float = WAIST_DELAY, dkc_rate: float = DKC_EXPANSION_RATE,
                   dkc_time: float = DKC_TIME, hold_start: float = HOLD_START_TIME,
                   state: SpinState = STATE_1, mass: float = RB87.mass_kg,
                   hbar: float = CONSTANTS.hbar) -> GaussianState:
    """Packet at the start of the first kick, placed on the interferometer's initial conditions.

    ``model="waist"`` uses :func:`collimated_state`: a pure packet at the
    collimated velocity width whose waist falls ``waist_delay`` after the first
    kick starts. ``model="lens"`` uses :func:`lensed_state`, the literal
    release-chirp-lens sequence, which for a pure state leaves the packet far
    wider (a few micrometres) because the waist of a 0.4 um/ms packet lies
    several milliseconds after the lens.
    """
    if model == "waist":
        shape = collimated_state(widths, dkc_rate, waist_delay, state=state, mass=mass, hbar=hbar)
    elif model == "lens":
        t_start = hold_start - (timings.T_kick + timings.T_d)
        if not 0 < dkc_time < t_start:
            raise ConfigError("lens must act between release and the first kick")
        shape = lensed_state(widths, dkc_rate=dkc_rate, dkc_time=dkc_time, flight=t_start - dkc_time,
                             state=state, mass=mass, hbar=hbar)
    else:
        raise ConfigError(f"unknown preparation model {model!r}")
    dz0, dv0 = initial_conditions(timings, g)
    return GaussianState((0.0, y, z_hold + dz0), (0.0, 0.0, mass * dv0), shape.sigma, state=state, mass=mass, t=0.0)


@dataclass
class WidthHistory:
    t: list = field(default_factory=list)
    widths: list = field(default_factory=list)
    tilt: list = field(default_factory=list)

    def append(self, t: float, s: GaussianState) -> None:
        self.t.append(t)
        self.widths.append(s.widths.copy())
        self.tilt.append(s.tilt_yz())

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.asarray(self.t), np.asarray(self.widths), np.asarray(self.tilt)

    def rows(self) -> list[tuple[float, float, float, float, float]]:
        """``(t, sigma_x, sigma_y, sigma_z, tilt_yz)`` rows for CSV export."""
        return [(t, *map(float, w), float(a)) for t, w, a in zip(self.t, self.widths, self.tilt)]

    def widths_at(self, t: float) -> np.ndarray:
        tt, w, _ = self.as_arrays()
        return np.array([np.interp(t, tt, w[:, k]) for k in range(3)])


def propagate_gaussian(state: GaussianState, schedule: QgiSchedule | None, fieldmodel: FieldModel,
                       t0: float, t1: float, *, arm: str | None = None, dt: float = DEFAULT_STEP,
                       g: float | None = None, r_ref: Sequence[float] | None = None,
                       history: WidthHistory | None = None) -> GaussianState:
    """Evolve ``state`` from ``t0`` to ``t1``.

    Parameters
    ----------
    schedule : QgiSchedule or None
        Supplies currents and, with ``arm``, spin flips. ``None`` means zero
        current and a fixed spin state.
    r_ref : sequence, optional
        Energy reference point for the phase; defaults to the initial mean.
    history : WidthHistory, optional
        Filled with widths and tilt at every step.

    Raises
    ------
    NumericalError
        If the covariance loses positive-definiteness.
    """
    if t1 < t0:
        raise ConfigError("t1 must not precede t0")
    constants = fieldmodel.constants
    hbar = constants.hbar
    g = constants.g_earth if g is None else g
    m = state.mass
    r_ref = np.array(state.mean_r if r_ref is None else r_ref, dtype=float)
    if schedule is not None and arm is not None and arm not in ARMS:
        raise ConfigError(f"unknown arm {arm!r}")

    def current(t, ta, tb):
        if schedule is None:
            return 0.0
        return schedule.current(min(max(t, ta + EDGE_GUARD), tb - EDGE_GUARD))

    def spin(t, default):
        if schedule is None or arm is None:
            return default
        return schedule.state(arm, t)

    pts = [t0, t1]
    if schedule is not None:
        pts += [p for p in schedule.breakpoints() if t0 < p < t1]
    bps = merged_breakpoints(pts)

    gvec = np.array([0.0, 0.0, g])
    r, p, sigma = state.mean_r.copy(), state.mean_p.copy(), state.sigma.copy()
    phase, path = state.phase, state.path_phase
    spin_state = state.state
    if history is not None:
        history.append(t0, state)

    def force(spn, rr, I):
        e = fieldmodel.expansion(spn, rr, I)
        return -e.grad - m * gvec, e

    def lagrangian(spn, rr, pp, I):
        v_here = fieldmodel.expansion(spn, rr, I).V0
        v_ref = fieldmodel.expansion(spn, r_ref, I).V0
        return float(pp @ pp) / (2 * m) - (v_here - v_ref + m * g * (rr[2] - r_ref[2]))

    for ta, tb in zip(bps[:-1], bps[1:]):
        spin_state = spin(0.5 * (ta + tb), spin_state)
        n = segment_steps(tb - ta, dt)
        h = (tb - ta) / n
        ts = ta + h * np.arange(n + 1)
        ts[-1] = tb
        L = np.empty(n + 1)
        W = np.empty(n + 1)
        L[0] = lagrangian(spin_state, r, p, current(ta, ta, tb))
        W[0] = np.trace(np.linalg.inv(sigma[:3, :3]))
        for i in range(n):
            t = ts[i]
            I0, Im, I1 = current(t, ta, tb), current(t + 0.5 * h, ta, tb), current(t + h, ta, tb)
            f1, _ = force(spin_state, r, I0)
            k1r, k1p = p / m, f1
            f2, _ = force(spin_state, r + 0.5 * h * k1r, Im)
            k2r, k2p = (p + 0.5 * h * k1p) / m, f2
            f3, _ = force(spin_state, r + 0.5 * h * k2r, Im)
            k3r, k3p = (p + 0.5 * h * k2p) / m, f3
            f4, _ = force(spin_state, r + h * k3r, I1)
            k4r, k4p = (p + h * k3p) / m, f4
            r_new = r + h / 6 * (k1r + 2 * k2r + 2 * k3r + k4r)
            p_new = p + h / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
            K = fieldmodel.expansion(spin_state, 0.5 * (r + r_new), Im).hess
            S = symplectic_step_matrix(K, m, h)
            sigma = S @ sigma @ S.T
            sigma = 0.5 * (sigma + sigma.T)
            r, p = r_new, p_new
            L[i + 1] = lagrangian(spin_state, r, p, I1)
            sxx = sigma[:3, :3]
            try:
                np.linalg.cholesky(sxx)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"position covariance lost positive-definiteness at t={ts[i + 1]:.6e} s") from exc
            W[i + 1] = np.trace(np.linalg.inv(sxx))
            if history is not None:
                history.append(ts[i + 1], GaussianState(r, p, sigma, state=spin_state, mass=m))
        dpath, _ = _integrate_segment(ts, L)
        dwidth, _ = _integrate_segment(ts, W)
        path += dpath / hbar
        phase += dpath / hbar - hbar / (4 * m) * dwidth
    return GaussianState(r, p, sigma, phase, spin_state, path, t1, m)


def symplectic_step_matrix(K: np.ndarray, m: float, h: float) -> np.ndarray:
    """Covariance transport matrix for one step of a quadratic Hamiltonian with curvature ``K``."""
    A = np.block([[np.zeros((3, 3)), np.eye(3) / m], [-np.asarray(K), np.zeros((3, 3))]])
    return expm(A * h)


@dataclass(frozen=True)
class InterferometerRun:
    """Final packets, their overlap and width histories of both arms."""

    final: dict
    overlap: OverlapResult
    histories: dict
    t_mid: float

    def mid_widths(self, axis: int = 2) -> dict[str, float]:
        return {arm: float(h.widths_at(self.t_mid)[axis]) for arm, h in self.histories.items()}


def run_interferometer(schedule: QgiSchedule, fieldmodel: FieldModel, initial: GaussianState, *,
                       z_hold: float = -113e-6, dt: float = DEFAULT_STEP,
                       g: float | None = None) -> InterferometerRun:
    """Propagate both arms from the first kick to the end of the second and overlap them."""
    r_ref = np.array([initial.mean_r[0], initial.mean_r[1], z_hold])
    final, hist = {}, {}
    for arm in ARMS:
        start = replace(initial, state=schedule.state(arm, 0.0), phase=0.0, path_phase=0.0)
        hist[arm] = WidthHistory()
        final[arm] = propagate_gaussian(start, schedule, fieldmodel, 0.0, schedule.t_total, arm=arm, dt=dt,
                                        g=g, r_ref=r_ref, history=hist[arm])
    ov = overlap(final[BALLISTIC], final[REFERENCE], fieldmodel.constants.hbar)
    return InterferometerRun(final, ov, hist, 0.5 * schedule.t_total)

