"""Scenario configuration: dataclasses plus a YAML reader/writer.

Config files are plain YAML.  Every key is optional and falls back to the
reference random-network values; see ``docs/config.md`` for the schema.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

SPEED_OF_LIGHT = 299_792_458.0

ALGORITHMS = ("std-bp", "bcast-bp", "vmp")

Rect = tuple[float, float, float, float]  # xmin, ymin, xmax, ymax


class ConfigError(ValueError):
    """Malformed configuration.  ``field`` is a dotted path, ``line`` 1-based."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class NoiseModel:
    """Measurement, mobility and NLOS noise parameters.

    ``sigma_utheta`` is in seconds; the other standard deviations in meters.
    """

    sigma_d: float = 1.0
    sigma_ux: float = 1.0
    sigma_uy: float = 1.0
    sigma_utheta: float = 10e-9
    nlos_rate: float = 0.38

    def __post_init__(self):
        for name in ("sigma_d", "sigma_ux", "sigma_uy", "sigma_utheta"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"must be a finite non-negative number, got {v!r}", f"noise.{name}")
        if not (self.nlos_rate > 0 and math.isfinite(self.nlos_rate)):
            raise ConfigError(f"must be positive, got {self.nlos_rate!r}", "noise.nlos_rate")

    @property
    def sigma_d2(self) -> float:
        return self.sigma_d**2


@dataclass(frozen=True)
class PriorModel:
    """Prior standard deviations of agent position (m) and clock offset (s)."""

    sigma_x0: float = 10.0
    sigma_y0: float = 10.0
    sigma_theta0: float = 50.0 / SPEED_OF_LIGHT

    def __post_init__(self):
        for name in ("sigma_x0", "sigma_y0", "sigma_theta0"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"must be positive, got {v!r}", f"prior.{name}")


@dataclass(frozen=True)
class NlosSpec:
    """How links are labelled NLOS.

    mode "none": every link LOS.  "probability": each link NLOS with
    probability ``p_nlos`` per slot.  "obstacles": NLOS iff the straight path
    crosses one of the axis-aligned ``obstacles``.
    """

    mode: str = "none"
    p_nlos: float = 0.0
    obstacles: tuple[Rect, ...] = ()

    def __post_init__(self):
        if self.mode not in ("none", "probability", "obstacles"):
            raise ConfigError(f"unknown NLOS mode {self.mode!r}", "nlos.mode")
        if not 0.0 <= self.p_nlos <= 1.0:
            raise ConfigError(f"must lie in [0, 1], got {self.p_nlos!r}", "nlos.p_nlos")
        for k, r in enumerate(self.obstacles):
            if len(r) != 4 or not (r[0] < r[2] and r[1] < r[3]):
                raise ConfigError(f"rectangle must be [xmin, ymin, xmax, ymax], got {r!r}",
                                  f"nlos.obstacles[{k}]")


@dataclass(frozen=True)
class Schedule:
    """External rounds ``n_ext`` each preceded by ``n_int`` local cycles."""

    n_int: int = 1
    n_ext: int = 20

    def __post_init__(self):
        for name in ("n_int", "n_ext"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ConfigError(f"must be a positive integer, got {v!r}", f"schedule.{name}")

    @property
    def n_iter(self) -> int:
        return self.n_int * self.n_ext


def _grid_anchors(width: float, height: float, margin: float = 5.0) -> tuple[tuple[float, float], ...]:
    xs = (margin, width / 2, width - margin)
    ys = (margin, height / 2, height - margin)
    return tuple((x, y) for y in ys for x in xs)


@dataclass(frozen=True)
class ScenarioConfig:
    bounds: tuple[float, float] = (50.0, 50.0)
    anchors: tuple[tuple[float, float], ...] = field(default_factory=lambda: _grid_anchors(50.0, 50.0))
    n_agents: int = 50
    d_max: float = 20.0
    dt: float = 1.0
    n_time: int = 10
    prior: PriorModel = PriorModel()
    clock_offset_range: tuple[float, float] = (0.0, 50.0)  # meters of c*theta
    velocity_max: float = 3.0
    nlos: NlosSpec = NlosSpec()
    noise: NoiseModel = NoiseModel()
    algorithm: str = "std-bp"
    nlos_aware: bool = True
    schedule: Schedule = Schedule()
    seed: int = 1
    trials: int = 1
    speed_of_light: float = SPEED_OF_LIGHT
    anchor_links: bool = False
    min_degree: int = 0

    def __post_init__(self):
        w, h = self.bounds
        if not (w > 0 and h > 0):
            raise ConfigError(f"must be two positive numbers, got {self.bounds!r}", "bounds")
        for k, (x, y) in enumerate(self.anchors):
            if not (0 <= x <= w and 0 <= y <= h):
                raise ConfigError(f"anchor ({x}, {y}) outside bounds", f"anchors[{k}]")
        for k, r in enumerate(self.nlos.obstacles):
            if not (0 <= r[0] and r[2] <= w and 0 <= r[1] and r[3] <= h):
                raise ConfigError(f"rectangle {r!r} outside bounds", f"nlos.obstacles[{k}]")
        if not (isinstance(self.n_agents, int) and self.n_agents >= 0):
            raise ConfigError(f"must be a non-negative integer, got {self.n_agents!r}", "n_agents")
        if not self.d_max > 0:
            raise ConfigError(f"must be positive, got {self.d_max!r}", "d_max")
        if not self.dt > 0:
            raise ConfigError(f"must be positive, got {self.dt!r}", "dt")
        if not (isinstance(self.n_time, int) and self.n_time >= 1):
            raise ConfigError(f"must be a positive integer, got {self.n_time!r}", "n_time")
        lo, hi = self.clock_offset_range
        if not lo <= hi:
            raise ConfigError(f"lower bound exceeds upper bound: {self.clock_offset_range!r}",
                              "clock_offset_range")
        if self.velocity_max < 0:
            raise ConfigError(f"must be non-negative, got {self.velocity_max!r}", "velocity_max")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"must be one of {ALGORITHMS}, got {self.algorithm!r}", "algorithm")
        if not (isinstance(self.trials, int) and self.trials >= 1):
            raise ConfigError(f"must be a positive integer, got {self.trials!r}", "trials")
        if not self.speed_of_light > 0:
            raise ConfigError("must be positive", "speed_of_light")

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)


def reference_random_scenario(**overrides) -> ScenarioConfig:
    """50x50 m plane, 9 grid anchors, 50 agents, 20 m range, 20 iterations."""
    return replace(ScenarioConfig(), **overrides)


def parking_obstacles() -> tuple[Rect, ...]:
    """Rows of parked (inactive) vehicles on an 80x60 m floor.

    Four parking rows, each a run of car-sized stalls separated by gaps,
    leaving drive aisles along y = 10, 30 and 50.
    """
    rects = []
    for y0 in (14.0, 22.0, 34.0, 42.0):
        for x0 in (8.0, 20.0, 44.0, 56.0):
            rects.append((x0, y0, x0 + 10.0, y0 + 4.5))
    return tuple(rects)


def make_parking_scenario(**overrides) -> ScenarioConfig:
    """Vehicle localization on an 80x60 m parking floor with geometric NLOS."""
    base = ScenarioConfig(
        bounds=(80.0, 60.0),
        anchors=((0.0, 30.0), (80.0, 30.0), (40.0, 0.0), (40.0, 60.0)),
        n_agents=8,
        d_max=50.0,
        n_time=20,
        velocity_max=7.0,  # per axis, so speed stays below 10 m/s
        nlos=NlosSpec(mode="obstacles", obstacles=parking_obstacles()),
        algorithm="std-bp",
    )
    return replace(base, **overrides)


# --------------------------------------------------------------------- YAML

_NESTED = {"prior": PriorModel, "nlos": NlosSpec, "noise": NoiseModel, "schedule": Schedule}


def config_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    d = asdict(cfg)
    d["bounds"] = list(cfg.bounds)
    d["anchors"] = [list(a) for a in cfg.anchors]
    d["clock_offset_range"] = list(cfg.clock_offset_range)
    d["nlos"]["obstacles"] = [list(r) for r in cfg.nlos.obstacles]
    return d


def dump_config(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))


def _key_lines(node, prefix="") -> dict[str, int]:
    """Map dotted key paths to 1-based line numbers from a composed YAML node."""
    out: dict[str, int] = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            out.update(_key_lines(v, path))
    return out


def _build(cls, data: dict, prefix: str, lines: dict[str, int]):
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", prefix or None, lines.get(prefix))
    known = set(cls.__dataclass_fields__)
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ConfigError("unknown key", path, lines.get(path))
        if prefix == "" and key in _NESTED:
            value = _build(_NESTED[key], value, key, lines)
        elif key in ("bounds", "clock_offset_range"):
            value = _pair(value, path, lines)
        elif key == "anchors":
            value = tuple(_pair(a, f"{path}[{k}]", lines) for k, a in enumerate(value or ()))
        elif key == "obstacles":
            value = tuple(tuple(float(v) for v in r) for r in (value or ()))
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        line = lines.get(exc.field) if exc.field else None
        if line is None and exc.field:
            line = lines.get(exc.field.split("[")[0])
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.field, line) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), prefix or None, lines.get(prefix)) from None


def _pair(value, path, lines) -> tuple[float, float]:
    try:
        a, b = value
        return float(a), float(b)
    except (TypeError, ValueError):
        raise ConfigError(f"expected two numbers, got {value!r}", path, lines.get(path.split("[")[0])) from None


def config_from_text(text: str) -> ScenarioConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    lines = _key_lines(node) if node is not None else {}
    return _build(ScenarioConfig, data or {}, "", lines)


def load_config(path: str | Path) -> ScenarioConfig:
    return config_from_text(Path(path).read_text())
