"""Physical constants, species data, spin states and interferometer timings.

All quantities are SI internally. Gauss appear only in the Zeeman tables
(``Hz/G`` and ``Hz/G^2``) and are converted with :data:`GAUSS`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping

from qgi.errors import ConfigError

GAUSS = 1e-4  # T per G
US = 1e-6
MA = 1e-3


@dataclass(frozen=True)
class Constants:
    """Fundamental constants (CODATA 2018) plus the local gravity."""

    hbar: float = 1.054571817e-34
    h: float = 6.62607015e-34
    g_earth: float = 9.81
    mu0_over_2pi: float = 2.0e-7  # T m / A
    kB: float = 1.380649e-23
    muB: float = 9.2740100783e-24

    def __post_init__(self):
        for name in ("hbar", "h", "mu0_over_2pi", "kB", "muB"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"constant {name} must be positive")
        # zero gravity is a valid test scenario
        if not self.g_earth >= 0:
            raise ConfigError("constant g_earth must be non-negative")

    def with_gravity(self, g: float) -> "Constants":
        return replace(self, g_earth=g)


CONSTANTS = Constants()


@dataclass(frozen=True)
class SpinState:
    """Hyperfine ground state ``|F, m_F>`` with a short label."""

    F: int
    mF: int
    label: str = ""

    def __post_init__(self):
        if abs(self.mF) > self.F:
            raise ConfigError(f"|mF| > F for state ({self.F}, {self.mF})")

    @property
    def key(self) -> tuple[int, int]:
        return (self.F, self.mF)

    def __str__(self):
        return self.label or f"|F={self.F},mF={self.mF}>"


STATE_0 = SpinState(1, 0, "|0>")
STATE_1 = SpinState(2, 1, "|1>")
STATE_2 = SpinState(2, 2, "|2>")

STATES_BY_LABEL = {"0": STATE_0, "1": STATE_1, "2": STATE_2}


def _expand_table(cells: Mapping[tuple[int, int], float]) -> dict[tuple[int, int], float]:
    out = {}
    for (F, abs_mF), value in cells.items():
        out[(F, abs_mF)] = value
        out[(F, -abs_mF)] = value
    return out


# Quadratic Zeeman coefficients alpha_{F,mF}/h in Hz/G^2, keyed by (F, |mF|).
# The (F=1, |mF|=2) cell does not exist.
RB87_QUADRATIC_ZEEMAN_TABLE = MappingProxyType({
    (1, 0): -287.6,
    (1, 1): -215.7,
    (2, 0): 287.6,
    (2, 1): 215.7,
    (2, 2): 0.0,
})


@dataclass(frozen=True)
class Species:
    """Atomic species data needed by the Zeeman potential.

    Parameters
    ----------
    mass_kg : float
        Atomic mass.
    gF_muB_over_h : float
        Magnitude of the linear Zeeman rate ``|g_F| mu_B / h`` in Hz/G.
    alpha_over_h : mapping
        ``(F, mF) -> alpha_{F,mF}/h`` in Hz/G^2.
    gF_sign : mapping
        Sign of the Lande factor for each hyperfine manifold ``F``.
    """

    name: str
    mass_kg: float
    gF_muB_over_h: float
    alpha_over_h: Mapping[tuple[int, int], float]
    gF_sign: Mapping[int, int] = field(default_factory=lambda: MappingProxyType({1: -1, 2: 1}))

    def __post_init__(self):
        if not self.mass_kg > 0:
            raise ConfigError("mass_kg must be positive")
        if not self.gF_muB_over_h > 0:
            raise ConfigError("gF_muB_over_h must be positive")
        object.__setattr__(self, "alpha_over_h", MappingProxyType(dict(self.alpha_over_h)))
        object.__setattr__(self, "gF_sign", MappingProxyType(dict(self.gF_sign)))

    def check_state(self, state: SpinState) -> None:
        if state.key not in self.alpha_over_h or state.F not in self.gF_sign:
            raise ConfigError(f"state {state.key} is not tabulated for {self.name}")

    def linear_rate(self, state: SpinState) -> float:
        """``m_F g_F mu_B / h`` in Hz/G."""
        self.check_state(state)
        return state.mF * self.gF_sign[state.F] * self.gF_muB_over_h

    def quadratic_rate(self, state: SpinState) -> float:
        """``alpha_{F,mF} / h`` in Hz/G^2."""
        self.check_state(state)
        return self.alpha_over_h[state.key]


# 86.909180527 u; CODATA atomic mass unit.
RB87 = Species(
    name="87Rb",
    mass_kg=86.909180527 * 1.66053906660e-27,
    gF_muB_over_h=0.70e6,
    alpha_over_h=_expand_table(RB87_QUADRATIC_ZEEMAN_TABLE),
)


@dataclass(frozen=True)
class MassPair:
    """Inertial and gravitational mass, allowed to differ for EP tests."""

    m_i: float
    m_g: float

    def __post_init__(self):
        if not (self.m_i > 0 and self.m_g > 0):
            raise ConfigError("masses must be positive")

    @classmethod
    def equal(cls, species: Species = RB87) -> "MassPair":
        return cls(species.mass_kg, species.mass_kg)

    @property
    def eta(self) -> float:
        """Ratio ``m_g / m_i``."""
        return self.m_g / self.m_i


@dataclass(frozen=True)
class Timings:
    """Interferometer schedule in seconds.

    ``T_half`` is half the ballistic free-fall time, ``T_d`` is the analytic
    delay (raw delay plus half the hold ramp) and ``T_h = 2 T_half - 2 T_d``
    is the hold duration.
    """

    T_half: float
    T_kick: float = 80 * US
    T_d: float = 77 * US
    tau_kick: float = 40 * US
    tau_hold: float = 12 * US

    def __post_init__(self):
        for name in ("T_half", "T_kick", "T_d", "tau_kick", "tau_hold"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.T_h < -1e-15:
            raise ConfigError(f"hold time T_h = {self.T_h:.3e} s is negative")

    @classmethod
    def from_hold(cls, T_h: float, T_d: float = 77 * US, **kw) -> "Timings":
        return cls(T_half=T_h / 2 + T_d, T_d=T_d, **kw)

    @classmethod
    def from_two_T(cls, two_T: float, **kw) -> "Timings":
        return cls(T_half=two_T / 2, **kw)

    @property
    def T_h(self) -> float:
        return 2 * self.T_half - 2 * self.T_d

    @property
    def two_T(self) -> float:
        return 2 * self.T_half

    @property
    def T_d_raw(self) -> float:
        """Delay between kick end and hold-pulse start (without the ramp half)."""
        return self.T_d - self.tau_hold / 2

    @property
    def total(self) -> float:
        """Duration from the start of the first kick to the end of the second."""
        return 2 * self.T_kick + 2 * self.T_half

    def scaled(self, **changes) -> "Timings":
        return replace(self, **changes)


def effective_gravity(g: float, a_soz: float) -> float:
    """Gravity seen by the ballistic arm including the second-order Zeeman pull."""
    if not g > 0:
        raise ConfigError("g must be positive")
    if a_soz < 0:
        raise ConfigError("a_soz must be non-negative")
    return g + a_soz


# Anchor used to calibrate the expansion-rate / temperature convention.
EXPANSION_ANCHOR_RATE = 3.1e-3  # m/s
EXPANSION_ANCHOR_TEMPERATURE = 108e-9  # K


def expansion_convention_factor(species: Species = RB87, constants: Constants = CONSTANTS) -> float:
    """Factor ``c`` in ``T = c m v^2 / kB`` reproducing the 3.1 um/ms <-> 108 nK anchor."""
    return EXPANSION_ANCHOR_TEMPERATURE * constants.kB / (species.mass_kg * EXPANSION_ANCHOR_RATE**2)


@dataclass(frozen=True)
class TemperatureEstimate:
    kelvin: float
    convention_factor: float
    convention: str = "T = c * m * rate^2 / kB, c calibrated on 3.1 um/ms -> 108 nK"


def temperature_from_expansion(
    rate: float,
    species: Species = RB87,
    convention_factor: float | None = None,
    constants: Constants = CONSTANTS,
) -> TemperatureEstimate:
    """Effective temperature of a cloud expanding at ``rate`` (m/s).

    The convention factor defaults to the value calibrated on the 108 nK
    free-expansion measurement; pass ``convention_factor=1`` for the plain
    ``m sigma_v^2 / kB`` definition.
    """
    if rate < 0:
        raise ConfigError("expansion rate must be non-negative")
    c = expansion_convention_factor(species, constants) if convention_factor is None else convention_factor
    return TemperatureEstimate(c * species.mass_kg * rate**2 / constants.kB, c)
