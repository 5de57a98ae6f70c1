"""Fringe synthesis and chirped-fringe phase extraction.

The population model is ``P = P_mean(2T) + V(2T)/2 cos(phi(2T))``. Extraction
runs: local extrema, straight-line envelopes smoothed by a polynomial, a
discrete analytic signal of the normalised fringe, phase unwrapping, a cubic
initial guess and a final direct least-squares fit of ``P`` with a cubic
phase, excluding the first and last oscillation.

Durations are in seconds throughout; polynomial coefficients are stored with
respect to ``2T`` in milliseconds for conditioning.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq, least_squares
from scipy.signal import find_peaks, hilbert

from qgi.core import CONSTANTS, RB87
from qgi.errors import ConfigError, ExtractionError, IllConditionedFitError, NumericalError

MS = 1e-3
DEFAULT_ENVELOPE_ORDER = 7
DEFAULT_SMOOTHING = 3
MIN_OSCILLATIONS = 4
MIN_POINTS_PER_OSCILLATION = 6
PROMINENCE_SEM_FACTOR = 3.0


class ClippingWarning(UserWarning):
    """Synthesised populations left ``[0, 1]`` and were clipped."""


@dataclass(frozen=True)
class FringeScan:
    """Population versus ``2T`` with per-point standard error."""

    two_T: np.ndarray
    population: np.ndarray
    sem: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.two_T, dtype=float)
        p = np.asarray(self.population, dtype=float)
        s = np.broadcast_to(np.asarray(self.sem, dtype=float), x.shape).copy()
        if x.ndim != 1 or p.shape != x.shape:
            raise ConfigError("two_T and population must be 1-D arrays of equal length")
        if np.any(np.diff(x) <= 0):
            raise ConfigError("two_T must be strictly increasing")
        if np.any(p < 0) or np.any(p > 1):
            raise ConfigError("populations must lie in [0, 1]")
        if np.any(s < 0):
            raise ConfigError("sem must be non-negative")
        object.__setattr__(self, "two_T", x)
        object.__setattr__(self, "population", p)
        object.__setattr__(self, "sem", s)

    def __len__(self) -> int:
        return self.two_T.size

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.two_T.tolist(), self.population.tolist(), self.sem.tolist()))

    def replace_population(self, population: np.ndarray) -> "FringeScan":
        return FringeScan(self.two_T, population, self.sem, dict(self.meta))


@dataclass(frozen=True)
class PhaseFit:
    """Result of :func:`extract_phase`.

    Polynomials take ``2T`` in milliseconds. ``phase_poly`` holds the four
    cubic coefficients, lowest order first.
    """

    envelope_mean: np.ndarray
    envelope_vis: np.ndarray
    phase_poly: np.ndarray
    residuals: np.ndarray
    phase_sigma: np.ndarray
    fit_mask: np.ndarray
    initial_guess: np.ndarray
    hilbert_phase: np.ndarray
    extrema: np.ndarray
    meta: dict = field(default_factory=dict)

    def mean(self, two_T) -> np.ndarray:
        return P.polyval(np.asarray(two_T) / MS, self.envelope_mean)

    def visibility(self, two_T) -> np.ndarray:
        return P.polyval(np.asarray(two_T) / MS, self.envelope_vis)

    def phase(self, two_T) -> np.ndarray:
        return P.polyval(np.asarray(two_T) / MS, self.phase_poly)

    def phase_derivative(self, two_T) -> np.ndarray:
        """``d phi / d(2T)`` in rad/s from the analytic derivative of the cubic."""
        return P.polyval(np.asarray(two_T) / MS, P.polyder(self.phase_poly)) / MS

    def model(self, two_T) -> np.ndarray:
        return self.mean(two_T) + 0.5 * self.visibility(two_T) * np.cos(self.phase(two_T))

    @property
    def cubic_coefficient(self) -> float:
        """Coefficient of ``(2T)^3`` in rad/s^3."""
        return float(self.phase_poly[3]) / MS**3

    @property
    def exclusion_windows(self) -> tuple[tuple[float, float], ...]:
        return tuple(self.meta.get("exclusion_windows", ()))

    def to_json(self) -> str:
        d = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}
        d["cubic_coefficient_rad_per_s3"] = self.cubic_coefficient
        d["exclusion_windows"] = [list(w) for w in self.exclusion_windows]
        d["seed"] = self.meta.get("seed")
        d["units"] = "polynomials in 2T [ms]"
        return json.dumps(d, indent=2, sort_keys=True)


@dataclass(frozen=True)
class DeviationModel:
    """Exponent perturbation ``alpha`` of the cubic law and an overall prefactor scale."""

    alpha: float = 0.0
    prefactor_scale: float = 1.0

    def __post_init__(self):
        if not -1.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [-1, 1]")


@dataclass(frozen=True)
class DeviationFit:
    alpha: float
    prefactor_scale: float
    alpha_sigma: float
    scale_sigma: float
    covariance: np.ndarray
    residuals: np.ndarray

    @property
    def model(self) -> DeviationModel:
        return DeviationModel(float(np.clip(self.alpha, -1, 1)), self.prefactor_scale)


# synthesis

def synthesize_scan(phase_fn: Callable, vis_fn: Callable, mean_fn: Callable, grid: Sequence[float], *,
                    phase_sigma: float = 0.0, amp_sigma: float = 0.0, seed: int | None = 0) -> FringeScan:
    """Sample ``P = mean + vis/2 cos(phi)`` with Gaussian phase and population noise.

    Noise is drawn from ``numpy.random.default_rng(seed)``: first the phase
    noise for every point, then the population noise. ``sem`` is set to
    ``amp_sigma``.
    """
    x = np.asarray(grid, dtype=float)
    vis = np.broadcast_to(np.asarray(vis_fn(x), dtype=float), x.shape)
    mean = np.broadcast_to(np.asarray(mean_fn(x), dtype=float), x.shape)
    if np.any(vis < 0) or np.any(vis > 1):
        raise ConfigError("visibility must lie in [0, 1]")
    if np.any(mean - vis / 2 < -1e-12) or np.any(mean + vis / 2 > 1 + 1e-12):
        raise ConfigError("mean +- vis/2 must lie in [0, 1]")
    if phase_sigma < 0 or amp_sigma < 0:
        raise ConfigError("noise levels must be non-negative")
    rng = np.random.default_rng(seed)
    phi = np.asarray(phase_fn(x), dtype=float) + phase_sigma * rng.standard_normal(x.size)
    pop = mean + 0.5 * vis * np.cos(phi) + amp_sigma * rng.standard_normal(x.size)
    n_clip = int(np.count_nonzero((pop < 0) | (pop > 1)))
    if n_clip:
        warnings.warn(f"{n_clip} populations clipped to [0, 1]", ClippingWarning, stacklevel=2)
    meta = {"seed": seed, "noise_model": "gaussian phase + population",
            "phase_sigma": phase_sigma, "amp_sigma": amp_sigma, "clipped": n_clip}
    return FringeScan(x, np.clip(pop, 0.0, 1.0), np.full(x.size, amp_sigma), meta)


def typical_chirped_scan(*, seed: int | None = 0, noisy: bool = True, step: float = 10e-6,
                    span: tuple[float, float] = (0.2e-3, 2.4e-3), g: float = 9.91,
                    sem: float = 0.018, phase_sigma: float = 0.0) -> FringeScan:
    """Chirped scan resembling the measured one.

    Phase from the analytic model at ``g``; visibility decays exponentially
    from 0.8 at the start of the span to 0.2 at ``2T = 2 ms``; mean 0.5.
    """
    from qgi.core import Timings
    from qgi.phases import analytic_qgi_phase

    def phase_fn(x):
        return np.array([analytic_qgi_phase(Timings.from_two_T(v), g) for v in np.atleast_1d(x)])

    def vis_fn(x):
        return 0.8 * np.exp(-np.log(4.0) * (x - span[0]) / (2.0e-3 - span[0]))

    grid = np.arange(span[0], span[1] + 0.5 * step, step)
    return synthesize_scan(phase_fn, vis_fn, lambda x: 0.5 + 0 * x, grid,
                           phase_sigma=phase_sigma if noisy else 0.0,
                           amp_sigma=sem if noisy else 0.0, seed=seed)


def count_upcrossings(scan: FringeScan, mean: np.ndarray | float | None = None) -> int:
    """Number of upward zero crossings of ``P - mean``."""
    m = np.mean(scan.population) if mean is None else mean
    d = scan.population - m
    return int(np.count_nonzero((d[:-1] < 0) & (d[1:] >= 0)))


# extraction

def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return y.copy()
    k = np.ones(window) / window
    pad = window // 2
    return np.convolve(np.pad(y, pad, mode="edge"), k, mode="valid")


def find_extrema(x: np.ndarray, y: np.ndarray, smoothing: int = DEFAULT_SMOOTHING, prominence: float = 0.0):
    """Interior local extrema by slope sign change on a smoothed copy.

    Parameters
    ----------
    smoothing : int
        Moving-average window for locating candidates.
    prominence : float
        Minimum prominence of accepted extrema; rejects noise wiggles.

    Returns
    -------
    positions, values, kinds, indices
        ``kinds`` is +1 for maxima and -1 for minima; positions and values are
        refined by a parabola through the three raw samples around each hit.
    """
    ys = _smooth(y, smoothing)
    hits = [(i, 1) for i in find_peaks(ys, prominence=prominence)[0]]
    hits += [(i, -1) for i in find_peaks(-ys, prominence=prominence)[0]]
    hits.sort()
    pos, val, keep_k, keep_i = [], [], [], []
    for i, k in hits:
        lo = max(i - 2, 0)
        hi = min(i + 3, y.size)
        j = lo + (np.argmax(y[lo:hi]) if k > 0 else np.argmin(y[lo:hi]))
        j = min(max(j, 1), y.size - 2)
        y0, y1, y2 = y[j - 1], y[j], y[j + 1]
        denom = y0 - 2 * y1 + y2
        h = x[j + 1] - x[j]
        delta = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        delta = float(np.clip(delta, -1.0, 1.0))
        pos.append(x[j] + delta * h)
        val.append(y1 - 0.25 * (y0 - y2) * delta)
        keep_k.append(k)
        keep_i.append(j)
    # enforce alternation, keeping the more extreme of repeated kinds
    out = []
    for item in zip(pos, val, keep_k, keep_i):
        if out and out[-1][2] == item[2]:
            if (item[1] - out[-1][1]) * item[2] > 0:
                out[-1] = item
            continue
        out.append(item)
    if not out:
        return np.empty(0), np.empty(0), np.empty(0, dtype=int), np.empty(0, dtype=int)
    cols = list(zip(*out))
    return np.array(cols[0]), np.array(cols[1]), np.array(cols[2], dtype=int), np.array(cols[3], dtype=int)


def _refine_sinusoid(x: np.ndarray, y: np.ndarray, pos: np.ndarray, val: np.ndarray, kinds: np.ndarray,
                     idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Re-estimate extremum values by a local three-parameter sinusoid fit.

    The local angular frequency comes from the spacing of neighbouring
    extrema (half a period apart); five samples around each extremum are fit
    with ``A + B cos(w x) + C sin(w x)``.
    """
    if pos.size < 2:
        return pos, val
    half = np.empty_like(pos)
    half[1:-1] = 0.5 * (pos[2:] - pos[:-2])
    half[0] = pos[1] - pos[0]
    half[-1] = pos[-1] - pos[-2]
    new_pos, new_val = pos.copy(), val.copy()
    for n, (j, k) in enumerate(zip(idx, kinds)):
        lo, hi = max(j - 2, 0), min(j + 3, x.size)
        if hi - lo < 4:
            continue
        w = np.pi / half[n]
        xs = x[lo:hi] - pos[n]
        A = np.column_stack([np.ones_like(xs), np.cos(w * xs), np.sin(w * xs)])
        coef, *_ = np.linalg.lstsq(A, y[lo:hi], rcond=None)
        amp = np.hypot(coef[1], coef[2])
        shift = np.arctan2(-coef[2], coef[1]) if k > 0 else np.arctan2(coef[2], -coef[1])
        if abs(shift / w) <= x[min(j + 1, x.size - 1)] - x[max(j - 1, 0)]:
            new_pos[n] = pos[n] - shift / w
            new_val[n] = coef[0] + k * amp
    return new_pos, new_val


def _line_envelope(x: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation through ``(px, py)``, extended linearly past the ends."""
    out = np.interp(x, px, py)
    left, right = x < px[0], x > px[-1]
    out[left] = py[0] + (py[1] - py[0]) / (px[1] - px[0]) * (x[left] - px[0])
    out[right] = py[-1] + (py[-1] - py[-2]) / (px[-1] - px[-2]) * (x[right] - px[-1])
    return out


def fit_envelopes(x: np.ndarray, y: np.ndarray, order: int = DEFAULT_ENVELOPE_ORDER,
                  smoothing: int = DEFAULT_SMOOTHING, prominence: float = 0.0):
    """Straight-line upper and lower envelopes through the extrema, smoothed by a polynomial.

    Returns ``(mean_coef, vis_coef, extrema)`` with coefficients in ``2T`` [ms]
    and ``extrema`` rows ``(position, value, kind)``.
    """
    pos, val, kinds, idx = find_extrema(x, y, smoothing, prominence)
    pos, val = _refine_sinusoid(x, y, pos, val, kinds, idx)
    up, lo = kinds > 0, kinds < 0
    if up.sum() < 2 or lo.sum() < 2:
        raise ExtractionError("too few extrema to build envelopes")
    upper = _line_envelope(x, pos[up], val[up])
    lower = _line_envelope(x, pos[lo], val[lo])
    xm = x / MS
    cu = Polynomial.fit(xm, upper, order).convert().coef
    cl = Polynomial.fit(xm, lower, order).convert().coef
    mean = 0.5 * (cu + cl)
    vis = cu - cl
    return mean, vis, np.column_stack([pos, val, kinds])


def analytic_signal_phase(signal: np.ndarray) -> np.ndarray:
    """Unwrapped argument of the discrete analytic signal, with mirror padding at both ends."""
    s = np.asarray(signal, dtype=float)
    n = s.size
    padded = np.pad(s, n // 2, mode="reflect")
    z = hilbert(padded)[n // 2: n // 2 + n]
    return np.unwrap(np.angle(z))


def _check_sampling(x: np.ndarray, extrema_pos: np.ndarray) -> None:
    """Require ``MIN_POINTS_PER_OSCILLATION`` samples per period where the fringe is densest."""
    half = np.min(np.diff(extrema_pos))
    step = np.median(np.diff(x))
    if 2 * half / step < MIN_POINTS_PER_OSCILLATION - 0.5:
        raise ExtractionError("fewer than six samples per oscillation; phase cannot be unwrapped reliably")


def extract_phase(scan: FringeScan, *, envelope_order: int = DEFAULT_ENVELOPE_ORDER,
                  smoothing: int = DEFAULT_SMOOTHING, exclude_edges: bool = True,
                  amp_sigma: float = 0.0, prominence: float | None = None,
                  refine_envelopes: bool = True) -> PhaseFit:
    """Recover ``P_mean``, ``V`` and a cubic phase from a chirped scan.

    Parameters
    ----------
    scan : FringeScan
    envelope_order : int
        Polynomial order of the envelope fits.
    smoothing : int
        Moving-average window used only for locating extrema.
    exclude_edges : bool
        Drop the first and last oscillation from the final fit.
    amp_sigma : float
        Amplitude uncertainty used when converting ``scan.sem`` into
        per-point phase uncertainties.
    prominence : float, optional
        Minimum extremum prominence; defaults to three times the median SEM.
    refine_envelopes : bool
        After the phase-only fit against the straight-line envelopes, refit the
        phase and both envelope polynomials jointly. The joint result is kept
        only if its visibility stays positive over the fit window; otherwise
        the frozen-envelope fit is returned. ``meta["envelopes_refined"]``
        records which one was used.

    Raises
    ------
    ExtractionError
        Fewer than four oscillations, or sampling too sparse to unwrap.
    """
    x, y = scan.two_T, scan.population
    if prominence is None:
        prominence = PROMINENCE_SEM_FACTOR * float(np.median(scan.sem))
    mean_c, vis_c, extrema = fit_envelopes(x, y, envelope_order, smoothing, prominence)
    n_osc = extrema.shape[0] / 2
    if n_osc < MIN_OSCILLATIONS:
        raise ExtractionError(f"only {n_osc:.1f} oscillations present; need {MIN_OSCILLATIONS}")
    _check_sampling(x, extrema[:, 0])
    xm = x / MS
    mean = P.polyval(xm, mean_c)
    amp = 0.5 * P.polyval(xm, vis_c)
    if np.any(amp <= 0):
        raise ExtractionError("fitted visibility not positive over the scan")
    norm = np.clip((y - mean) / amp, -1.5, 1.5)
    raw = analytic_signal_phase(norm)
    if raw[-1] < raw[0]:
        raw = -raw
    pos = extrema[:, 0]
    if exclude_edges:
        lo, hi = pos[1], pos[-2]
    else:
        lo, hi = x[0], x[-1]
    mask = (x >= lo) & (x <= hi)
    if mask.sum() < 8:
        raise ExtractionError("too few points left after excluding edge oscillations")
    guess_region = (x >= pos[0]) & (x <= pos[-1])
    guess = P.polyfit(xm[guess_region], raw[guess_region], 3)

    lsq = dict(method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    xc = xm[mask]

    def resid_frozen(c):
        return mean[mask] + amp[mask] * np.cos(P.polyval(xc, c)) - y[mask]

    sol = least_squares(resid_frozen, guess, **lsq)
    if not sol.success:
        raise ExtractionError(f"final fit failed: {sol.message}")
    coef, nfev, refined = sol.x, sol.nfev, False
    if refine_envelopes:
        n = mean_c.size

        def resid_joint(c):
            return (P.polyval(xc, c[4:4 + n]) + 0.5 * P.polyval(xc, c[4 + n:]) * np.cos(P.polyval(xc, c[:4]))
                    - y[mask])

        joint = least_squares(resid_joint, np.concatenate([coef, mean_c, vis_c]), x_scale="jac", **lsq)
        vis_j = P.polyval(xc, joint.x[4 + n:])
        m_pts = xc.size
        bic_frozen = m_pts * np.log(np.sum(sol.fun**2) + 1e-300) + 4 * np.log(m_pts)
        bic_joint = m_pts * np.log(np.sum(joint.fun**2) + 1e-300) + (4 + 2 * n) * np.log(m_pts)
        # on noisy scans the free envelopes mostly fit noise; keep them only when the data demand it
        if joint.success and np.all(vis_j > 0) and bic_joint < bic_frozen:
            coef, mean_c, vis_c = joint.x[:4], joint.x[4:4 + n], joint.x[4 + n:]
            mean = P.polyval(xm, mean_c)
            amp = 0.5 * P.polyval(xm, vis_c)
            nfev, refined = nfev + joint.nfev, True
    if P.polyval(xm[-1], coef) < P.polyval(xm[0], coef):
        coef = -coef
    phi = P.polyval(xm, coef)
    full_resid = mean + amp * np.cos(phi) - y
    # envelopes extrapolated past the fit window may dip below zero
    amp_s = np.maximum(amp, np.min(amp[mask]))
    sig = np.array([phase_sigma_from_signal(a, p, s, amp_sigma) if s > 0 else 0.0
                    for a, p, s in zip(amp_s, phi, scan.sem)])
    meta = {"envelope_order": envelope_order, "smoothing": smoothing, "prominence": prominence,
            "exclude_edges": exclude_edges, "refine_envelopes": refine_envelopes, "envelopes_refined": refined,
            "exclusion_windows": [(float(x[0]), float(lo)), (float(hi), float(x[-1]))] if exclude_edges else [],
            "seed": scan.meta.get("seed"), "n_extrema": int(extrema.shape[0]), "nfev": int(nfev)}
    return PhaseFit(mean_c, vis_c, coef, full_resid, sig, mask, guess, raw, extrema, meta)


# uncertainty

def propagate_uncertainty(a: float, phi: float, dphi: float, da: float) -> float:
    """Signal standard deviation of ``a cos(phi)`` with the trigonometric factors averaged over ``dphi``."""
    if dphi < 0 or da < 0:
        raise ConfigError("uncertainties must be non-negative")
    c = np.cos(2 * phi) * np.exp(-2 * dphi**2)
    return float(np.sqrt(0.5 * (1 + c) * da**2 + 0.5 * a**2 * (1 - c) * dphi**2))


def phase_sigma_from_signal(a: float, phi: float, dS: float, da: float = 0.0) -> float:
    """Invert :func:`propagate_uncertainty` for ``dphi`` given the signal spread ``dS``.

    Raises
    ------
    NumericalError
        If ``dS`` is below the amplitude-noise floor.
    """
    if dS < 0 or da < 0 or a <= 0:
        raise ConfigError("need dS, da >= 0 and a > 0")

    def f(x):
        return propagate_uncertainty(a, phi, x, da) ** 2 - dS**2

    if f(0.0) > 0:
        raise NumericalError("signal spread below the amplitude-noise floor")
    if f(0.0) == 0:
        return 0.0
    hi = max(dS / a, 1e-6)
    while f(hi) < 0:
        hi *= 2
        if hi > 1e6:
            raise NumericalError("no phase uncertainty reproduces the signal spread")
    return float(brentq(f, 0.0, hi, xtol=1e-15, rtol=1e-13))


def monte_carlo_signal_sigma(a: float, phi: float, dphi: float, da: float, n: int = 1_000_000,
                             seed: int | None = 0, *, mode: str = "averaged") -> float:
    """Sampling estimate of the signal spread for Gaussian phase draws.

    ``mode="averaged"`` averages the linear propagation law over the phase
    draws, the reading under which the closed form holds exactly.
    ``mode="direct"`` returns the sample standard deviation of
    ``(a + da*n1) cos(phi + dphi*n2)``, which departs from the closed form
    once ``dphi`` is no longer small.
    """
    rng = np.random.default_rng(seed)
    ph = phi + dphi * rng.standard_normal(n)
    if mode == "averaged":
        return float(np.sqrt(np.mean(da**2 * np.cos(ph) ** 2 + a**2 * np.sin(ph) ** 2 * dphi**2)))
    if mode == "direct":
        amp = a + da * rng.standard_normal(n)
        return float(np.std(amp * np.cos(ph)))
    raise ConfigError(f"unknown mode {mode!r}")


def fit_std_polynomial(two_T: Sequence[float], sigma: Sequence[float], degree: int = 3) -> np.ndarray:
    """Least-squares polynomial of the per-point phase spread versus ``2T`` [ms], lowest order first."""
    x = np.asarray(two_T, dtype=float) / MS
    s = np.asarray(sigma, dtype=float)
    if x.size < 8:
        raise ConfigError("need at least 8 points")
    return P.polyfit(x, s, degree)


# deviation exponent

def deviation_phase(two_T, alpha: float, scale: float, *, T_kick: float = 0.0, T_d: float = 0.0,
                    g: float = CONSTANTS.g_earth, mass: float = RB87.mass_kg,
                    hbar: float = CONSTANTS.hbar) -> np.ndarray:
    """Cubic law with a perturbed exponent plus the finite-pulse terms.

    ``scale * k [k^(alpha/3) T^(3+alpha) + T^2 Tk + T (Tk^2 + Tk Td) - Td (Tk+Td)^2]``
    with ``k = m g^2 / 3 hbar`` and ``T`` the half duration.
    """
    T = 0.5 * np.asarray(two_T, dtype=float)
    k = mass * g**2 / (3 * hbar)
    core = k ** (alpha / 3) * T ** (3 + alpha)
    finite = T**2 * T_kick + T * (T_kick**2 + T_kick * T_d) - T_d * (T_kick + T_d) ** 2
    return scale * k * (core + finite)


def fit_deviation(two_T: Sequence[float], phase: Sequence[float], model: DeviationModel = DeviationModel(), *,
                  sigma: Sequence[float] | None = None, T_kick: float = 0.0, T_d: float = 0.0,
                  g: float = CONSTANTS.g_earth, mass: float = RB87.mass_kg,
                  hbar: float = CONSTANTS.hbar) -> DeviationFit:
    """Fit ``alpha`` and the prefactor scale to phase-versus-duration data.

    ``model`` supplies the starting point.

    Raises
    ------
    IllConditionedFitError
        If the phase data span less than a decade or the normal matrix is singular.
    """
    x = np.asarray(two_T, dtype=float)
    y = np.asarray(phase, dtype=float)
    if x.size < 3 or x.shape != y.shape:
        raise ConfigError("need matching arrays of at least three points")
    ay = np.abs(y[np.abs(y) > 0])
    if ay.size < 3 or ay.max() / ay.min() < 10:
        raise IllConditionedFitError("phase data must span at least a decade")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    kw = dict(T_kick=T_kick, T_d=T_d, g=g, mass=mass, hbar=hbar)

    def resid(p):
        return (deviation_phase(x, p[0], p[1], **kw) - y) * w

    sol = least_squares(resid, [model.alpha, model.prefactor_scale], bounds=([-1, 0], [1, np.inf]),
                        xtol=1e-14, ftol=1e-14, gtol=1e-14)
    J = sol.jac
    jtj = J.T @ J
    if np.linalg.cond(jtj) > 1e14:
        raise IllConditionedFitError("deviation fit is ill-conditioned")
    dof = max(x.size - 2, 1)
    s2 = float(sol.fun @ sol.fun) / dof if sigma is None else 1.0
    cov = np.linalg.inv(jtj) * s2
    return DeviationFit(float(sol.x[0]), float(sol.x[1]), float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1])),
                        cov, sol.fun / w)


# IO and plots

def write_scan_csv(scan: FringeScan, path: str | Path, header: Sequence[str] = ()) -> None:
    lines = [f"# {h}" for h in header]
    lines += [f"# {k}: {scan.meta[k]}" for k in sorted(scan.meta)]
    lines.append("two_T_us,population,sem")
    lines += [f"{x / 1e-6:.6f},{p:.10f},{s:.10f}" for x, p, s in scan.rows()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_scan_csv(path: str | Path) -> FringeScan:
    """Read a scan CSV (``two_T_us,population,sem``); comment lines start with ``#``."""
    text = Path(path).read_text().splitlines()
    body = [ln for ln in text if ln.strip() and not ln.startswith("#")]
    if not body or body[0].replace(" ", "") != "two_T_us,population,sem":
        raise ConfigError(f"{path}: expected header two_T_us,population,sem")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in body[1:]])
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed row") from exc
    if data.ndim != 2 or data.shape[1] != 3:
        raise ConfigError(f"{path}: expected three columns")
    return FringeScan(data[:, 0] * 1e-6, data[:, 1], data[:, 2], {"source": str(path)})


def plot_fringes(scan: FringeScan, fit: PhaseFit | None, path: str | Path) -> None:
    """Population with error bars, the fitted model and envelopes."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = scan.two_T / 1e-6
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.errorbar(x, scan.population, yerr=scan.sem, fmt="o", ms=2.5, lw=0.6, label="data")
    if fit is not None:
        xf = np.linspace(scan.two_T[0], scan.two_T[-1], 2000)
        ax.plot(xf / 1e-6, fit.model(xf), "r-", lw=0.8, label="fit")
        m, v = fit.mean(xf), fit.visibility(xf)
        ax.plot(xf / 1e-6, m + v / 2, "k--", lw=0.6)
        ax.plot(xf / 1e-6, m - v / 2, "k--", lw=0.6)
    ax.set_xlabel("2T [us]")
    ax.set_ylabel("population")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_phase(two_T: np.ndarray, curves: dict[str, np.ndarray], path: str | Path,
               residual: tuple[np.ndarray, np.ndarray] | None = None) -> None:
    """Phase curves versus ``2T``, optionally with a residual panel ``(values, sigma)``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = np.asarray(two_T) / 1e-6
    rows = 2 if residual is not None else 1
    fig, axes = plt.subplots(rows, 1, figsize=(7, 3 * rows), sharex=True, squeeze=False)
    for label, y in curves.items():
        axes[0, 0].plot(x, y, label=label)
    axes[0, 0].set_ylabel("phase [rad]")
    axes[0, 0].legend()
    if residual is not None:
        r, s = residual
        axes[1, 0].plot(x, r, "k-")
        axes[1, 0].fill_between(x, -s, s, alpha=0.3)
        axes[1, 0].set_ylabel("residual [rad]")
    axes[-1, 0].set_xlabel("2T [us]")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
