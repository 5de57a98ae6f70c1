"""Simulation and analysis toolkit for a free-fall / levitated-arm atom interferometer."""

from qgi.core import (
    CONSTANTS,
    RB87,
    STATE_0,
    STATE_1,
    STATE_2,
    Constants,
    MassPair,
    SpinState,
    Species,
    Timings,
    effective_gravity,
    temperature_from_expansion,
)

__version__ = "0.1.0"

__all__ = [
    "CONSTANTS",
    "RB87",
    "STATE_0",
    "STATE_1",
    "STATE_2",
    "Constants",
    "MassPair",
    "SpinState",
    "Species",
    "Timings",
    "effective_gravity",
    "temperature_from_expansion",
]
