"""Chip-wire magnetic fields, Zeeman potentials and state-dependent accelerations.

Geometry
--------
Wires are infinitely long along ``x`` and lie on the chip surface ``z = 0``;
their centers sit at transverse positions along ``y``. Atoms live at
``z < 0`` and gravity points along ``-z``. Each wire is a flat current sheet of
finite width, which admits a closed-form complex potential in ``zeta = y + i z``::

    B_y - i B_z = -i (mu0 K / 2 pi) log((zeta - a) / (zeta - b))

with ``K = I / w`` and ``[a, b]`` the wire edges. Field derivatives follow from
the analytic derivative of this expression, so gradients and Hessians of
``|B|`` are exact up to round-off.

Units: positions in m, currents in A, fields in G, gradients in G/m.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from qgi.core import CONSTANTS, GAUSS, RB87, Constants, SpinState, Species
from qgi.errors import ConfigError, SingularFieldError

UM = 1e-6
MIN_ADIABATIC_FIELD_G = 5.0


class AdiabaticityWarning(UserWarning):
    """|B| fell below the level where adiabatic spin following is trusted."""


@dataclass(frozen=True)
class Wire:
    """One flat wire running along ``x``.

    Parameters
    ----------
    center : float
        Transverse (``y``) position of the wire axis, m.
    width : float
        Extent along ``y``, m. ``0`` gives a line current.
    thickness : float
        Extent along ``z``, m. Only used for the singularity check.
    polarity : int
        ``+1`` or ``-1``; the wire carries ``polarity * I``.
    """

    center: float
    width: float = 40 * UM
    thickness: float = 2 * UM
    polarity: int = 1

    def __post_init__(self):
        if self.width < 0 or self.thickness < 0:
            raise ConfigError("wire width and thickness must be non-negative")
        if self.polarity not in (-1, 1):
            raise ConfigError("wire polarity must be +1 or -1")


@dataclass(frozen=True)
class WireGeometry:
    wires: tuple[Wire, ...]

    def __post_init__(self):
        object.__setattr__(self, "wires", tuple(self.wires))
        if not self.wires:
            raise ConfigError("geometry needs at least one wire")

    @classmethod
    def three_wire(cls, pitch: float = 100 * UM, width: float = 40 * UM, thickness: float = 2 * UM) -> "WireGeometry":
        """Default Stern-Gerlach wire set: three wires, alternating polarity."""
        return cls(tuple(Wire(c, width, thickness, p) for c, p in ((-pitch, 1), (0.0, -1), (pitch, 1))))

    @classmethod
    def trap_wires(cls, separation: float = 100 * UM, width: float = 50 * UM,
                   thickness: float = 2 * UM) -> "WireGeometry":
        """Pair of co-propagating straight trap wires used for the initial chip trap."""
        h = separation / 2
        return cls((Wire(-h, width, thickness, -1), Wire(h, width, thickness, -1)))


@dataclass(frozen=True)
class BiasField:
    """Homogeneous bias plus a uniform ambient gradient of ``|B|`` along ``z``.

    Parameters
    ----------
    B0 : sequence of 3 floats
        Bias vector in G.
    ambient_gradient : float
        ``d|B|/dz`` in G/m, applied as a linear term ``ambient_gradient * z``
        added to ``|B|`` (zero at the chip surface).
    """

    B0: tuple[float, float, float] = (0.0, 12.6, 0.0)
    ambient_gradient: float = 0.0

    def __post_init__(self):
        b = tuple(float(v) for v in self.B0)
        if len(b) != 3:
            raise ConfigError("B0 must have three components")
        object.__setattr__(self, "B0", b)
        if not np.isfinite(self.ambient_gradient):
            raise ConfigError("ambient gradient must be finite")

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.B0))


DEFAULT_GEOMETRY = WireGeometry.three_wire()
DEFAULT_BIAS = BiasField((0.0, 12.6, 0.0), 0.0)
AMBIENT_BIAS = BiasField((0.0, 12.6, 0.0), 68.0)
# Chip-trap preset. The x component stands in for the coil bias plus the
# end segments of the U-wires and is set to the 0.825 G trap-bottom field.
TRAP_BIAS = BiasField((-0.825, 13.05, 0.33), 0.0)
TRAP_CURRENT = 0.5


@dataclass(frozen=True)
class FieldSample:
    """Field vector and the first two derivatives of its magnitude.

    ``absB`` includes the ambient linear term, so it can differ slightly from
    ``norm(B)``.
    """

    B: np.ndarray
    absB: float
    grad_absB: np.ndarray
    hess_absB: np.ndarray


def _check_outside(y: float, z: float, wire: Wire) -> None:
    half = wire.width / 2
    if abs(y - wire.center) <= half and -wire.thickness <= z <= wire.thickness:
        raise SingularFieldError(
            f"point (y={y:.3e}, z={z:.3e}) lies inside the wire at y={wire.center:.3e}"
        )


def _complex_terms(y: float, z: float, I: float, geometry: WireGeometry, mu0_over_2pi: float):
    """Sum over wires of ``F = By - i Bz`` and its first two zeta derivatives, in T."""
    zeta = complex(y, z)
    F = F1 = F2 = 0j
    for wire in geometry.wires:
        _check_outside(y, z, wire)
        current = wire.polarity * I
        if current == 0:
            continue
        if wire.width == 0:
            k = mu0_over_2pi * current
            u = zeta - wire.center
            F += -1j * k / u
            F1 += 1j * k / u**2
            F2 += -2j * k / u**3
        else:
            c = mu0_over_2pi * current / wire.width
            ua = zeta - (wire.center - wire.width / 2)
            ub = zeta - (wire.center + wire.width / 2)
            F += -1j * c * np.log(ua / ub)
            F1 += -1j * c * (1 / ua - 1 / ub)
            F2 += -1j * c * (-1 / ua**2 + 1 / ub**2)
    return F, F1, F2


def _wire_jets(r, I, geometry, constants):
    """Wire field (G), Jacobian ``J[i, j] = dB_i/dr_j`` and ``H[i, j, k]``."""
    _, y, z = (float(v) for v in r)
    F, F1, F2 = _complex_terms(y, z, I, geometry, constants.mu0_over_2pi)
    B = np.array([0.0, F.real, -F.imag])
    J = np.zeros((3, 3))
    # d/dy F = F', d/dz F = i F'
    dFy, dFz = F1, 1j * F1
    J[1, 1], J[2, 1] = dFy.real, -dFy.imag
    J[1, 2], J[2, 2] = dFz.real, -dFz.imag
    H = np.zeros((3, 3, 3))
    for (j, k), d2 in {(1, 1): F2, (1, 2): 1j * F2, (2, 2): -F2}.items():
        H[1, j, k] = H[1, k, j] = d2.real
        H[2, j, k] = H[2, k, j] = -d2.imag
    return B / GAUSS, J / GAUSS, H / GAUSS


def wire_field(r: Sequence[float], I: float, geometry: WireGeometry = DEFAULT_GEOMETRY,
               constants: Constants = CONSTANTS) -> np.ndarray:
    """Magnetic field of the wire array at ``r`` in G.

    Raises
    ------
    SingularFieldError
        If ``r`` lies inside a wire cross-section.
    """
    _, y, z = (float(v) for v in r)
    F, _, _ = _complex_terms(y, z, I, geometry, constants.mu0_over_2pi)
    return np.array([0.0, F.real, -F.imag]) / GAUSS


def total_field(r: Sequence[float], I: float, geometry: WireGeometry = DEFAULT_GEOMETRY,
                bias: BiasField = DEFAULT_BIAS, constants: Constants = CONSTANTS) -> FieldSample:
    """Wire plus bias field with analytic gradient and Hessian of ``|B|``."""
    Bw, J, H = _wire_jets(r, I, geometry, constants)
    B = Bw + np.asarray(bias.B0)
    mag = float(np.linalg.norm(B))
    if mag == 0:
        raise SingularFieldError("|B| vanishes; gradient of |B| undefined")
    grad = J.T @ B / mag
    hess = (J.T @ J + np.einsum("i,ijk->jk", B, H)) / mag - np.outer(grad, grad) / mag
    hess = 0.5 * (hess + hess.T)
    z = float(r[2])
    grad = grad + np.array([0.0, 0.0, bias.ambient_gradient])
    return FieldSample(B=B, absB=mag + bias.ambient_gradient * z, grad_absB=grad, hess_absB=hess)


def total_field_fd(r: Sequence[float], I: float, geometry: WireGeometry = DEFAULT_GEOMETRY,
                   bias: BiasField = DEFAULT_BIAS, step: float = 1e-8,
                   constants: Constants = CONSTANTS) -> FieldSample:
    """Central-difference version of :func:`total_field` (reference implementation)."""
    r = np.asarray(r, dtype=float)

    def absb(p):
        B = wire_field(p, I, geometry, constants) + np.asarray(bias.B0)
        return float(np.linalg.norm(B)) + bias.ambient_gradient * p[2]

    eye = np.eye(3) * step
    grad = np.array([(absb(r + e) - absb(r - e)) / (2 * step) for e in eye])
    hess = np.empty((3, 3))
    for j in range(3):
        for k in range(3):
            ej, ek = eye[j], eye[k]
            hess[j, k] = (absb(r + ej + ek) - absb(r + ej - ek) - absb(r - ej + ek) + absb(r - ej - ek)) / (4 * step**2)
    B = wire_field(r, I, geometry, constants) + np.asarray(bias.B0)
    return FieldSample(B=B, absB=absb(r), grad_absB=grad, hess_absB=0.5 * (hess + hess.T))


@dataclass(frozen=True)
class QuadraticExpansion:
    """Second-order Taylor data of a potential around ``r0`` (J, J/m, J/m^2)."""

    r0: np.ndarray
    V0: float
    grad: np.ndarray
    hess: np.ndarray


def zeeman_potential(sample: FieldSample, state: SpinState, species: Species = RB87,
                     constants: Constants = CONSTANTS) -> float:
    """Zeeman energy ``h (lin |B| + alpha |B|^2)`` in J."""
    lin, quad = species.linear_rate(state), species.quadratic_rate(state)
    b = sample.absB
    return constants.h * (lin * b + quad * b * b)


def expansion_from_sample(sample: FieldSample, state: SpinState, species: Species = RB87,
                          constants: Constants = CONSTANTS, r0=(0.0, 0.0, 0.0)) -> QuadraticExpansion:
    """Value, gradient and Hessian of the Zeeman potential from field derivatives."""
    lin, quad = species.linear_rate(state), species.quadratic_rate(state)
    b = sample.absB
    dVdB = constants.h * (lin + 2 * quad * b)
    g = np.asarray(sample.grad_absB)
    grad = dVdB * g
    hess = dVdB * np.asarray(sample.hess_absB) + 2 * constants.h * quad * np.outer(g, g)
    return QuadraticExpansion(np.asarray(r0, float), zeeman_potential(sample, state, species, constants), grad, hess)


def quadratic_expansion(r0: Sequence[float], I: float, geometry: WireGeometry = DEFAULT_GEOMETRY,
                        bias: BiasField = DEFAULT_BIAS, state: SpinState | None = None,
                        species: Species = RB87, constants: Constants = CONSTANTS) -> QuadraticExpansion:
    """Local quadratic model of the Zeeman potential of ``state`` about ``r0``."""
    if state is None:
        raise ConfigError("state is required")
    sample = total_field(r0, I, geometry, bias, constants)
    return expansion_from_sample(sample, state, species, constants, r0)


def acceleration_of(state: SpinState, r: Sequence[float], I: float,
                    geometry: WireGeometry = DEFAULT_GEOMETRY, bias: BiasField = DEFAULT_BIAS,
                    species: Species = RB87, constants: Constants = CONSTANTS) -> np.ndarray:
    """Net acceleration ``-grad V / m - g z_hat`` in m/s^2."""
    exp = quadratic_expansion(r, I, geometry, bias, state, species, constants)
    return -exp.grad / species.mass_kg - np.array([0.0, 0.0, constants.g_earth])


def soz_acceleration(state: SpinState, sample: FieldSample, species: Species = RB87,
                     constants: Constants = CONSTANTS) -> float:
    """Magnitude of the quadratic-Zeeman acceleration, signed by ``-alpha``.

    Positive values point towards increasing ``|B|`` (the case ``alpha < 0``).
    """
    quad = species.quadratic_rate(state)
    gnorm = float(np.linalg.norm(sample.grad_absB))
    return -2 * constants.h * quad * sample.absB * gnorm / species.mass_kg


def levitation_gradient(state: SpinState, species: Species = RB87, constants: Constants = CONSTANTS,
                        g: float | None = None) -> float:
    """``|B|`` gradient (G/m) whose linear Zeeman force balances gravity."""
    g = constants.g_earth if g is None else g
    return species.mass_kg * g / (constants.h * abs(species.linear_rate(state)))


def field_for_transition(freq_hz: float, lower: SpinState, upper: SpinState,
                         species: Species = RB87) -> float:
    """Solve ``E(upper) - E(lower) = h freq`` for ``|B|`` in G (smallest positive root)."""
    a = species.quadratic_rate(upper) - species.quadratic_rate(lower)
    b = species.linear_rate(upper) - species.linear_rate(lower)
    if a == 0:
        return freq_hz / b
    roots = np.roots([a, b, -freq_hz])
    real = sorted(float(x.real) for x in roots if abs(x.imag) < 1e-12 and x.real > 0)
    if not real:
        raise ConfigError("no positive field reproduces the transition frequency")
    return real[0]


class FieldModel(Protocol):
    """Anything that yields the local Zeeman potential of a state."""

    species: Species
    constants: Constants

    def expansion(self, state: SpinState, r: Sequence[float], I: float) -> QuadraticExpansion: ...


@dataclass(frozen=True)
class ChipFieldModel:
    """Full wire-array model used by the dynamics and wave-packet modules."""

    geometry: WireGeometry = DEFAULT_GEOMETRY
    bias: BiasField = DEFAULT_BIAS
    species: Species = RB87
    constants: Constants = CONSTANTS
    min_field_G: float | None = MIN_ADIABATIC_FIELD_G

    def sample(self, r, I) -> FieldSample:
        s = total_field(r, I, self.geometry, self.bias, self.constants)
        if self.min_field_G is not None and s.absB < self.min_field_G:
            warnings.warn(f"|B| = {s.absB:.3g} G below {self.min_field_G} G; adiabatic following doubtful",
                          AdiabaticityWarning, stacklevel=3)
        return s

    def expansion(self, state, r, I) -> QuadraticExpansion:
        return expansion_from_sample(self.sample(r, I), state, self.species, self.constants, r)


@dataclass(frozen=True)
class HomogeneousGradientModel:
    """``|B| = B0 + gradient_per_amp * I * z``: uniform gradient proportional to current.

    With ``quadratic=False`` only the linear Zeeman term acts, which gives
    exactly piecewise-constant accelerations for square current pulses.
    """

    B0: float = 12.6
    gradient_per_amp: float = -1.0
    species: Species = RB87
    constants: Constants = CONSTANTS
    quadratic: bool = False

    @classmethod
    def levitating(cls, I_hold: float, state: SpinState, g: float | None = None, **kw) -> "HomogeneousGradientModel":
        """Model in which ``state`` is exactly levitated at current ``I_hold``."""
        species = kw.get("species", RB87)
        constants = kw.get("constants", CONSTANTS)
        g = constants.g_earth if g is None else g
        grad = -species.mass_kg * g / (constants.h * species.linear_rate(state))
        return cls(gradient_per_amp=grad / I_hold, **kw)

    def sample(self, r, I) -> FieldSample:
        gz = self.gradient_per_amp * I
        z = float(r[2])
        return FieldSample(B=np.array([0.0, 0.0, 0.0]), absB=self.B0 + gz * z,
                           grad_absB=np.array([0.0, 0.0, gz]), hess_absB=np.zeros((3, 3)))

    def expansion(self, state, r, I) -> QuadraticExpansion:
        s = self.sample(r, I)
        if self.quadratic:
            return expansion_from_sample(s, state, self.species, self.constants, r)
        lin = self.constants.h * self.species.linear_rate(state)
        return QuadraticExpansion(np.asarray(r, float), lin * s.absB, lin * s.grad_absB, np.zeros((3, 3)))


def export_field_grid(path, I: float, ys: Sequence[float], zs: Sequence[float],
                      geometry: WireGeometry = DEFAULT_GEOMETRY, bias: BiasField = DEFAULT_BIAS,
                      header: Sequence[str] = ()) -> None:
    """Write ``y_um, z_um, absB_G, dabsB_dz_G_per_m`` rows for a rectangular grid."""
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["y_um", "z_um", "absB_G", "dabsB_dz_G_per_m"])
        for y in ys:
            for z in zs:
                try:
                    s = total_field((0.0, y, z), I, geometry, bias)
                    w.writerow([f"{y / UM:.6f}", f"{z / UM:.6f}", f"{s.absB:.9e}", f"{s.grad_absB[2]:.9e}"])
                except SingularFieldError:
                    w.writerow([f"{y / UM:.6f}", f"{z / UM:.6f}", "nan", "nan"])
