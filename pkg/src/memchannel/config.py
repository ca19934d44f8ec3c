"""Run configuration: flat YAML schema, defaults and validation.

Every key is optional; an empty file yields the driven two-level waveguide
benchmark.  See README.md for the full key table.
"""

from __future__ import annotations

import dataclasses
import io
import math
from dataclasses import dataclass, fields
from typing import Any

import yaml


class ConfigError(ValueError):
    """Invalid or unknown configuration entries."""


SOLVERS = ("hierarchy", "modes")
BATHS = ("waveguide", "ohmic")
WEIGHTINGS = ("normalized", "unit")
INITIAL_STATES = ("ground", "excited")


@dataclass(frozen=True)
class RunConfig:
    # bath
    bath: str = "waveguide"
    band_center: float = 1.0
    h: float = 0.05
    kernel_scale: float | None = None       # None -> h**2, the chain-coupling normalization
    ohmic_alpha: float = 0.1
    ohmic_s: float = 1.0
    ohmic_omega_c: float = 1.0
    # system
    epsilon: float = 1.0
    drive_amplitude: float = 0.1
    drive_frequency: float = 1.0
    initial_state: str = "ground"
    # solver
    solver: str = "hierarchy"
    max_quanta: int = 2
    grid_mode: str = "jets"
    n_modes: int = 40
    # delay grid
    grid_a: float = 0.5
    grid_b: float = 0.1
    grid_c: float = 0.9
    grid_sigma_max: float = 2.8525
    grid_nodes: int = 7
    # noise
    recurrence_factor: float = 2.0
    # run
    t_total: float = 100.0
    dt: float = 0.05
    output_stride: int = 20
    n_traj: int = 100
    base_seed: int = 0
    chunk_size: int = 32
    weighting: str = "normalized"
    output: str = "run.csv"

    def __post_init__(self):
        _validate(self)

    @property
    def resolved_kernel_scale(self) -> float:
        return self.h ** 2 if self.kernel_scale is None else float(self.kernel_scale)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _need(cond: bool, name: str, msg: str):
    if not cond:
        raise ConfigError(f"{name}: {msg}")


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _validate(c: RunConfig) -> None:
    _need(c.bath in BATHS, "bath", f"must be one of {BATHS}")
    _need(c.solver in SOLVERS, "solver", f"must be one of {SOLVERS}")
    _need(c.weighting in WEIGHTINGS, "weighting", f"must be one of {WEIGHTINGS}")
    _need(c.initial_state in INITIAL_STATES, "initial_state", f"must be one of {INITIAL_STATES}")
    _need(c.grid_mode in ("fd", "jets"), "grid_mode", "must be 'fd' or 'jets'")
    for name in ("band_center", "epsilon", "drive_amplitude", "drive_frequency", "grid_a",
                 "grid_b", "grid_c", "grid_sigma_max", "recurrence_factor", "t_total", "dt",
                 "ohmic_alpha", "ohmic_s", "ohmic_omega_c", "h"):
        _need(_finite(getattr(c, name)), name, "must be a finite number")
    for name in ("max_quanta", "n_modes", "grid_nodes", "output_stride", "n_traj", "base_seed",
                 "chunk_size"):
        v = getattr(c, name)
        _need(isinstance(v, int) and not isinstance(v, bool), name, "must be an integer")
    _need(c.h > 0, "h", "must be positive")
    if c.kernel_scale is not None:
        _need(_finite(c.kernel_scale) and c.kernel_scale >= 0, "kernel_scale",
              "must be a non-negative number or null")
    _need(c.dt > 0, "dt", "must be positive")
    _need(c.t_total >= c.dt, "t_total", "must be at least dt")
    _need(c.n_traj >= 1, "n_traj", "must be at least 1")
    _need(c.output_stride >= 1, "output_stride", "must be at least 1")
    _need(c.chunk_size >= 1, "chunk_size", "must be at least 1")
    _need(c.base_seed >= 0, "base_seed", "must be non-negative")
    _need(c.max_quanta in (0, 1, 2), "max_quanta", "must be 0, 1 or 2")
    _need(c.grid_nodes >= 2, "grid_nodes", "must be at least 2")
    _need(c.n_modes >= 1, "n_modes", "must be positive")
    _need(c.recurrence_factor >= 1, "recurrence_factor", "must be at least 1")
    _need(c.grid_a > 0 and c.grid_b >= 0 and c.grid_c > 0 and c.grid_sigma_max > 0,
          "grid_a", "grid constants must be positive")
    _need(c.ohmic_alpha > 0 and c.ohmic_s > 0 and c.ohmic_omega_c > 0, "ohmic_alpha",
          "ohmic parameters must be positive")
    if c.solver == "modes":
        _need(c.bath == "waveguide", "solver", "the mode solver supports the waveguide bath only")


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value):
    wants_float = "float" in str(_FIELDS[name].type)
    if value is None:
        return None
    if wants_float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def config_from_mapping(data: dict | None) -> RunConfig:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of keys to values")
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(map(str, unknown))}")
    values = {k: _coerce(k, v) for k, v in data.items()}
    try:
        return RunConfig(**values)
    except TypeError as exc:  # pragma: no cover - guarded by the key check
        raise ConfigError(str(exc)) from exc


def parse_config(source=None) -> RunConfig:
    """Parse YAML from a path, a text stream, or ``None`` (defaults)."""
    if source is None:
        return RunConfig()
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    return config_from_mapping(data)
