"""Domain types, parameter validation and JSON configuration I/O.

All configuration objects are frozen dataclasses. The on-disk format is a
flat JSON object whose keys mirror the usual symbols (``F_prop``, ``Rm``,
``k_L`` ...); see ``CONFIG_KEYS`` for the full list and defaults.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    """Raised for unparsable documents or parameters violating an invariant."""


class Mode(str, enum.Enum):
    """Interaction mode of one beam with the body."""

    FREE = "free"
    COLLIDING = "colliding"
    TANGENTIAL = "constrained_tangential"
    POINT = "constrained_point"

    @property
    def constrained(self) -> bool:
        return self is Mode.TANGENTIAL or self is Mode.POINT

    @property
    def in_contact(self) -> bool:
        return self is not Mode.FREE


@dataclass(frozen=True)
class BodyParams:
    M: float = 1.0
    R: float = 10.0


@dataclass(frozen=True)
class BeamParams:
    m: float = 0.1
    L: float = 25.0
    I: float = 20.83
    k: float = 400.0
    d: float = 50.0


@dataclass(frozen=True)
class ForcingParams:
    F_prop: float | None = None
    Rm: float = 0.0
    f: float = 50.0
    D: float = 0.0


@dataclass(frozen=True)
class GateGeometry:
    """Gate region in its local frame; origin at the bottom-centre."""

    half_width: float = 25.0
    region_height: float = 60.0
    joint_y: float = 30.0

    @property
    def left_joint(self) -> tuple[float, float]:
        return (-self.half_width, self.joint_y)

    @property
    def right_joint(self) -> tuple[float, float]:
        return (self.half_width, self.joint_y)


@dataclass(frozen=True)
class NumericsParams:
    dt: float = 0.004
    epsilon: float = 0.04
    CoR: float = 0.8
    max_steps: int = 3000
    success_y: float = 65.0
    d_acc: float = 20.0
    v0: float = 0.0


@dataclass(frozen=True)
class LatticeParams:
    cols: int = 9
    rows: int = 9
    max_gates: int = 13
    max_total_steps: int = 50000


@dataclass(frozen=True)
class SimConfig:
    body: BodyParams = field(default_factory=BodyParams)
    left: BeamParams = field(default_factory=BeamParams)
    right: BeamParams = field(default_factory=BeamParams)
    forcing: ForcingParams = field(default_factory=ForcingParams)
    geometry: GateGeometry = field(default_factory=GateGeometry)
    numerics: NumericsParams = field(default_factory=NumericsParams)
    lattice: LatticeParams = field(default_factory=LatticeParams)

    def __post_init__(self):
        validate(self)

    @property
    def F_prop(self) -> float:
        if self.forcing.F_prop is None:
            raise ConfigError("F_prop is required but was not set")
        return self.forcing.F_prop

    @property
    def initial_y(self) -> float:
        """Start height giving ``d_acc`` of travel before the body front reaches the beams."""
        return self.geometry.joint_y - self.body.R - self.numerics.d_acc

    def with_values(self, **values: Any) -> "SimConfig":
        """Return a copy with flat-key overrides, e.g. ``cfg.with_values(k_L=100)``."""
        doc = to_dict(self)
        for key, value in values.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            doc[key] = value
        return from_dict(doc)

    def fingerprint(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SystemState:
    """Full single-gate state. Index 0 of the per-beam tuples is the left beam."""

    t: float
    x: float
    y: float
    vx: float
    vy: float
    theta: tuple[float, float] = (0.0, 0.0)
    omega: tuple[float, float] = (0.0, 0.0)
    mode: tuple[Mode, Mode] = (Mode.FREE, Mode.FREE)

    def is_finite(self) -> bool:
        return all(
            math.isfinite(v)
            for v in (self.t, self.x, self.y, self.vx, self.vy, *self.theta, *self.omega)
        )


# flat key -> (section, attribute, human name used in error messages)
CONFIG_KEYS: dict[str, tuple[str, str, str]] = {
    "M": ("body", "M", "mass"),
    "R": ("body", "R", "radius"),
    "m_L": ("left", "m", "left beam mass"),
    "L_L": ("left", "L", "left beam length"),
    "I_L": ("left", "I", "left beam inertia"),
    "k_L": ("left", "k", "left beam stiffness"),
    "d_1": ("left", "d", "left beam damping"),
    "m_R": ("right", "m", "right beam mass"),
    "L_R": ("right", "L", "right beam length"),
    "I_R": ("right", "I", "right beam inertia"),
    "k_R": ("right", "k", "right beam stiffness"),
    "d_2": ("right", "d", "right beam damping"),
    "F_prop": ("forcing", "F_prop", "propulsive force"),
    "Rm": ("forcing", "Rm", "random force magnitude"),
    "f": ("forcing", "f", "oscillator frequency"),
    "D": ("forcing", "D", "drag coefficient"),
    "half_width": ("geometry", "half_width", "gate half width"),
    "region_height": ("geometry", "region_height", "gate region height"),
    "joint_y": ("geometry", "joint_y", "joint height"),
    "dt": ("numerics", "dt", "time step"),
    "epsilon": ("numerics", "epsilon", "impulse threshold"),
    "CoR": ("numerics", "CoR", "coefficient of restitution"),
    "max_steps": ("numerics", "max_steps", "max steps"),
    "success_y": ("numerics", "success_y", "success height"),
    "d_acc": ("numerics", "d_acc", "acceleration distance"),
    "v0": ("numerics", "v0", "initial velocity"),
    "lattice_cols": ("lattice", "cols", "lattice columns"),
    "lattice_rows": ("lattice", "rows", "lattice rows"),
    "lattice_max_gates": ("lattice", "max_gates", "lattice gate budget"),
    "lattice_max_total_steps": ("lattice", "max_total_steps", "lattice step budget"),
}

_INT_KEYS = {"max_steps", "lattice_cols", "lattice_rows", "lattice_max_gates", "lattice_max_total_steps"}


def _check(cond: bool, key: str, rule: str) -> None:
    if not cond:
        raise ConfigError(f"{CONFIG_KEYS[key][2]} ({key}) must be {rule}")


def validate(cfg: SimConfig) -> None:
    """Raise ``ConfigError`` naming the first offending field."""
    for key, (section, attr, _) in CONFIG_KEYS.items():
        value = getattr(getattr(cfg, section), attr)
        if value is None and key == "F_prop":
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{CONFIG_KEYS[key][2]} ({key}) must be a number, got {value!r}")
        _check(math.isfinite(value), key, "finite")
        if key in _INT_KEYS:
            _check(float(value).is_integer(), key, "an integer")

    b, n, fo = cfg.body, cfg.numerics, cfg.forcing
    _check(b.M > 0, "M", "> 0")
    _check(b.R > 0, "R", "> 0")
    for side, beam in (("L", cfg.left), ("R", cfg.right)):
        _check(beam.m >= 0, f"m_{side}", ">= 0")
        _check(beam.L > 0, f"L_{side}", "> 0")
        _check(beam.I > 0, f"I_{side}", "> 0")
        _check(beam.k >= 0, f"k_{side}", ">= 0")
    _check(cfg.left.d >= 0, "d_1", ">= 0")
    _check(cfg.right.d >= 0, "d_2", ">= 0")
    if fo.F_prop is not None:
        _check(fo.F_prop >= 0, "F_prop", ">= 0")
    _check(fo.Rm >= 0, "Rm", ">= 0")
    _check(fo.f > 0, "f", "> 0")
    _check(fo.D >= 0, "D", ">= 0")
    g = cfg.geometry
    _check(g.half_width > 0, "half_width", "> 0")
    _check(g.region_height > 0, "region_height", "> 0")
    _check(0 < g.joint_y < g.region_height, "joint_y", "inside the region")
    _check(abs(cfg.left.L + cfg.right.L - 2 * g.half_width) < 1e-9, "L_L", "such that L_L + L_R equals the gate width")
    _check(n.dt >= 0, "dt", ">= 0")
    _check(n.epsilon > 0, "epsilon", "> 0")
    _check(0 < n.CoR <= 1, "CoR", "in (0, 1]")
    _check(n.max_steps > 0, "max_steps", "> 0")
    _check(n.d_acc >= 0, "d_acc", ">= 0")
    if n.dt > 0:
        _check(fo.f * n.dt <= 1, "f", "at most 1/dt")
    lat = cfg.lattice
    _check(lat.cols >= 1 and lat.cols % 2 == 1, "lattice_cols", "an odd positive integer")
    _check(lat.rows >= 1, "lattice_rows", ">= 1")
    _check(lat.max_gates >= 1, "lattice_max_gates", ">= 1")
    _check(lat.max_total_steps >= 1, "lattice_max_total_steps", ">= 1")


def to_dict(cfg: SimConfig) -> dict[str, Any]:
    return {key: getattr(getattr(cfg, sec), attr) for key, (sec, attr, _) in CONFIG_KEYS.items()}


def from_dict(doc: Mapping[str, Any]) -> SimConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("config document must be a JSON object")
    unknown = sorted(set(doc) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    sections: dict[str, dict[str, Any]] = {}
    for key, value in doc.items():
        sec, attr, _ = CONFIG_KEYS[key]
        if key in _INT_KEYS and isinstance(value, float) and value.is_integer():
            value = int(value)
        sections.setdefault(sec, {})[attr] = value
    parts = {}
    for sec, cls in (("body", BodyParams), ("left", BeamParams), ("right", BeamParams),
                     ("forcing", ForcingParams), ("geometry", GateGeometry),
                     ("numerics", NumericsParams), ("lattice", LatticeParams)):
        parts[sec] = cls(**sections.get(sec, {}))
    return SimConfig(**parts)


def loads(text: str) -> SimConfig:
    """Parse a JSON document; an empty or blank document yields the symmetric-test defaults."""
    if not text.strip():
        return SimConfig()
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return from_dict(doc)


def _reject_constant(name: str):
    raise ConfigError(f"non-finite number {name} in config")


def load_config(source: str | Path) -> SimConfig:
    """Load from a path, or from JSON text when ``source`` is not an existing file."""
    path = Path(source) if not isinstance(source, Path) else source
    try:
        is_file = path.is_file()
    except OSError:
        is_file = False
    if is_file:
        return loads(path.read_text(encoding="utf-8"))
    if isinstance(source, Path):
        raise ConfigError(f"config file not found: {source}")
    return loads(source)


def dumps(cfg: SimConfig) -> str:
    return json.dumps(to_dict(cfg), sort_keys=True, indent=2) + "\n"


def symmetric_config(F_prop: float | None = None, Rm: float = 0.0) -> SimConfig:
    """Symmetric single-gate test configuration (k = 400, d = 50, CoR = 0.8)."""
    return replace(SimConfig(), forcing=ForcingParams(F_prop=F_prop, Rm=Rm))


def asymmetric_config(k_L: float, F_prop: float = 7.0, Rm: float = 10.0, k_R: float = 500.0) -> SimConfig:
    return symmetric_config(F_prop, Rm).with_values(k_L=k_L, k_R=k_R)


LATTICE_F_PROP = 8.0
LATTICE_RM = 20.0


def lattice_config(F_prop: float = LATTICE_F_PROP, Rm: float = LATTICE_RM) -> SimConfig:
    """Obstacle-field physics: all gates k = 400, beam damping 50, ground drag D = 0.06."""
    return symmetric_config(F_prop, Rm).with_values(D=0.06)
