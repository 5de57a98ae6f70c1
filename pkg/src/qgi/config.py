"""INI run configuration with unit-suffixed keys.

Every key carries its unit in the name (``t_kick_us``, ``i_hold_ma``). Unknown
sections or keys are rejected. The canonical form (sorted, fully resolved)
is hashed so output files can record exactly which configuration made them.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from qgi.core import RB87, Species, Timings
from qgi.errors import ConfigError
from qgi.fieldmap import BiasField, WireGeometry

US = 1e-6
UM = 1e-6
MA = 1e-3

# section -> key -> default (as text); "auto" marks values derived at run time
SCHEMA: dict[str, dict[str, str]] = {
    "species": {"name": "rb87"},
    "geometry": {"wire_pitch_um": "100", "wire_width_um": "40", "wire_thickness_um": "2"},
    "bias": {"b0_x_g": "0", "b0_y_g": "12.6", "b0_z_g": "0", "ambient_gradient_g_per_cm": "0"},
    "timings": {
        "t_kick_us": "80", "t_d_us": "77", "tau_kick_us": "40", "tau_hold_us": "12",
        "two_t_start_us": "200", "two_t_stop_us": "2400", "two_t_step_us": "200", "two_t_list_us": "",
    },
    "currents": {"i_hold_ma": "auto", "i_idle_ma": "0.47", "square_pulses": "false"},
    "atom": {"z_hold_um": "-113", "y_um": "0"},
    "physics": {"g_m_per_s2": "9.81", "g_analytic_m_per_s2": "9.91"},
    "integration": {"dt_us": "0.5", "wavepacket_dt_us": "2"},
    "wavepacket": {"sigma_x_um": "3.13", "sigma_y_um": "1.31", "sigma_z_um": "1.31",
                   "dkc_rate_um_per_ms": "0.4", "waist_delay_us": "1000", "model": "waist"},
    "noise": {"population_sem": "0.018", "phase_sigma_rad": "0", "scan_step_us": "10",
              "scan_start_us": "200", "scan_stop_us": "2400"},
    "analysis": {"envelope_order": "7", "smoothing_window": "3", "kick_perturbation_ppm": "5000"},
    "run": {"seed": "0"},
}

SPECIES = {"rb87": RB87}


def _float(section: str, key: str, text: str) -> float:
    try:
        v = float(text)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: not a number: {text!r}") from exc
    if not np.isfinite(v):
        raise ConfigError(f"[{section}] {key}: must be finite")
    return v


def _bool(section: str, key: str, text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; build with :meth:`from_file` or :meth:`from_mapping`."""

    values: dict[str, dict[str, str]]

    # construction

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls.from_mapping({})

    @classmethod
    def from_file(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls.defaults()
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        return cls.from_mapping({s: dict(parser.items(s)) for s in parser.sections()})

    @classmethod
    def from_mapping(cls, mapping: dict[str, dict[str, object]]) -> "RunConfig":
        values = {s: dict(keys) for s, keys in SCHEMA.items()}
        for section, keys in mapping.items():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key, val in keys.items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                values[section][key] = str(val).strip()
        cfg = cls(values)
        cfg.validate()
        return cfg

    def with_overrides(self, **sections: dict[str, object]) -> "RunConfig":
        merged = {s: dict(k) for s, k in self.values.items()}
        for s, keys in sections.items():
            merged.setdefault(s, {}).update({k: str(v) for k, v in keys.items()})
        return RunConfig.from_mapping(merged)

    # access

    def text(self, section: str, key: str) -> str:
        return self.values[section][key]

    def num(self, section: str, key: str) -> float:
        return _float(section, key, self.values[section][key])

    def flag(self, section: str, key: str) -> bool:
        return _bool(section, key, self.values[section][key])

    # typed views

    @property
    def species(self) -> Species:
        name = self.text("species", "name").lower()
        if name not in SPECIES:
            raise ConfigError(f"[species] name: unsupported species {name!r}")
        return SPECIES[name]

    @property
    def geometry(self) -> WireGeometry:
        return WireGeometry.three_wire(self.num("geometry", "wire_pitch_um") * UM,
                                       self.num("geometry", "wire_width_um") * UM,
                                       self.num("geometry", "wire_thickness_um") * UM)

    @property
    def bias(self) -> BiasField:
        b0 = tuple(self.num("bias", k) for k in ("b0_x_g", "b0_y_g", "b0_z_g"))
        return BiasField(b0, self.num("bias", "ambient_gradient_g_per_cm") * 100.0)

    @property
    def seed(self) -> int:
        try:
            return int(self.text("run", "seed"))
        except ValueError as exc:
            raise ConfigError("[run] seed: not an integer") from exc

    @property
    def g(self) -> float:
        return self.num("physics", "g_m_per_s2")

    @property
    def g_analytic(self) -> float:
        return self.num("physics", "g_analytic_m_per_s2")

    @property
    def z_hold(self) -> float:
        return self.num("atom", "z_hold_um") * UM

    @property
    def y_atom(self) -> float:
        return self.num("atom", "y_um") * UM

    @property
    def i_idle(self) -> float:
        return self.num("currents", "i_idle_ma") * MA

    @property
    def i_hold(self) -> float | None:
        t = self.text("currents", "i_hold_ma").lower()
        return None if t == "auto" else self.num("currents", "i_hold_ma") * MA

    @property
    def square(self) -> bool:
        return self.flag("currents", "square_pulses")

    @property
    def dt(self) -> float:
        return self.num("integration", "dt_us") * US

    @property
    def wavepacket_dt(self) -> float:
        return self.num("integration", "wavepacket_dt_us") * US

    def timings(self, two_T: float) -> Timings:
        return Timings.from_two_T(two_T, T_kick=self.num("timings", "t_kick_us") * US,
                                  T_d=self.num("timings", "t_d_us") * US,
                                  tau_kick=self.num("timings", "tau_kick_us") * US,
                                  tau_hold=self.num("timings", "tau_hold_us") * US)

    @property
    def two_T_values(self) -> np.ndarray:
        lst = self.text("timings", "two_t_list_us")
        if lst:
            vals = np.array([_float("timings", "two_t_list_us", v) for v in lst.replace(",", " ").split()])
        else:
            a, b, step = (self.num("timings", k) for k in ("two_t_start_us", "two_t_stop_us", "two_t_step_us"))
            if step <= 0 or b < a:
                raise ConfigError("[timings] need two_t_step_us > 0 and stop >= start")
            n = int(np.floor((b - a) / step + 1e-9)) + 1
            vals = a + step * np.arange(n)
        if vals.size == 0 or np.any(vals <= 0):
            raise ConfigError("[timings] durations must be positive")
        return np.unique(np.round(vals, 9)) * US

    @property
    def scan_grid(self) -> np.ndarray:
        a, b, step = (self.num("noise", k) for k in ("scan_start_us", "scan_stop_us", "scan_step_us"))
        if step <= 0 or b <= a:
            raise ConfigError("[noise] need scan_step_us > 0 and scan_stop_us > scan_start_us")
        n = int(np.floor((b - a) / step + 1e-9)) + 1
        return (a + step * np.arange(n)) * US

    # checks

    def validate(self) -> None:
        for section, keys in self.values.items():
            for key, text in keys.items():
                if key in ("name", "model", "two_t_list_us", "seed") or text.lower() == "auto":
                    continue
                if key == "square_pulses":
                    _bool(section, key, text)
                else:
                    _float(section, key, text)
        self.species
        if self.wavepacket_model not in ("waist", "lens"):
            raise ConfigError("[wavepacket] model must be 'waist' or 'lens'")
        self.seed
        if self.dt <= 0 or self.wavepacket_dt <= 0:
            raise ConfigError("[integration] steps must be positive")
        if self.i_idle < 0 or (self.i_hold is not None and self.i_hold <= 0):
            raise ConfigError("[currents] currents must be positive")
        if self.z_hold >= 0:
            raise ConfigError("[atom] z_hold_um must be below the chip surface (negative)")
        for k in ("population_sem", "phase_sigma_rad"):
            if self.num("noise", k) < 0:
                raise ConfigError(f"[noise] {k} must be non-negative")
        self.two_T_values
        self.scan_grid
        for tw in self.two_T_values:
            self.timings(tw)

    @property
    def wavepacket_model(self) -> str:
        return self.text("wavepacket", "model").lower()

    # hashing

    def canonical(self) -> str:
        lines = []
        for s in sorted(self.values):
            lines.append(f"[{s}]")
            lines += [f"{k} = {self.values[s][k]}" for k in sorted(self.values[s])]
        return "\n".join(lines) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()
