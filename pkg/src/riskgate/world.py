"""Robot, obstacles, scenarios and the geometric queries built on them.

Everything here is immutable value data plus pure functions, so episode
runners can share scenario objects freely.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, NamedTuple, Union

INF = math.inf
TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """A scenario or policy configuration violates its invariants."""


class Vec2(NamedTuple):
    x: float
    y: float

    def scale(self, k: float) -> "Vec2":
        return Vec2(self.x * k, self.y * k)

    def dot(self, other) -> float:
        return self.x * other[0] + self.y * other[1]

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y)

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y}

    @classmethod
    def from_json(cls, obj: Any) -> "Vec2":
        if isinstance(obj, dict):
            return cls(float(obj["x"]), float(obj["y"]))
        x, y = obj
        return cls(float(x), float(y))


ZERO = Vec2(0.0, 0.0)


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    w = math.remainder(a, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


@dataclass(frozen=True, slots=True)
class RobotState:
    p: Vec2
    psi: float
    v: float = 0.0
    omega: float = 0.0
    t: float = 0.0


# -- motion laws -------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Static:
    position: Vec2

    def position_at(self, t: float) -> Vec2:
        return self.position

    def velocity_at(self, t: float) -> Vec2:
        return ZERO

    def to_json(self) -> dict:
        return {"kind": "static", "position": self.position.to_json()}


@dataclass(frozen=True, slots=True)
class OscillateY:
    x0: float
    y0: float
    amplitude: float
    angular_frequency: float
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0 or self.angular_frequency < 0:
            raise ConfigError("oscillation amplitude and frequency must be >= 0")

    def position_at(self, t: float) -> Vec2:
        return Vec2(self.x0, self.y0 + self.amplitude * math.sin(self.angular_frequency * t + self.phase))

    def velocity_at(self, t: float) -> Vec2:
        w = self.angular_frequency
        return Vec2(0.0, self.amplitude * w * math.cos(w * t + self.phase))

    def to_json(self) -> dict:
        return {
            "kind": "oscillate_y",
            "x0": self.x0,
            "y0": self.y0,
            "amplitude": self.amplitude,
            "angular_frequency": self.angular_frequency,
            "phase": self.phase,
        }


@dataclass(frozen=True, slots=True)
class ConstantVelocity:
    origin: Vec2
    velocity: Vec2

    def position_at(self, t: float) -> Vec2:
        return Vec2(self.origin.x + self.velocity.x * t, self.origin.y + self.velocity.y * t)

    def velocity_at(self, t: float) -> Vec2:
        return self.velocity

    def to_json(self) -> dict:
        return {
            "kind": "constant_velocity",
            "origin": self.origin.to_json(),
            "velocity": self.velocity.to_json(),
        }


MotionLaw = Union[Static, OscillateY, ConstantVelocity]


def motion_from_json(obj: dict) -> MotionLaw:
    kind = obj.get("kind")
    if kind == "static":
        return Static(Vec2.from_json(obj["position"]))
    if kind == "oscillate_y":
        return OscillateY(
            float(obj["x0"]),
            float(obj["y0"]),
            float(obj["amplitude"]),
            float(obj["angular_frequency"]),
            float(obj.get("phase", 0.0)),
        )
    if kind == "constant_velocity":
        return ConstantVelocity(Vec2.from_json(obj["origin"]), Vec2.from_json(obj["velocity"]))
    raise ConfigError(f"unknown motion kind {kind!r}")


@dataclass(frozen=True, slots=True)
class ObstacleSpec:
    id: int
    radius: float
    motion: MotionLaw
    height: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError(f"obstacle {self.id}: radius must be > 0")

    def to_json(self) -> dict:
        return {"id": self.id, "radius": self.radius, "height": self.height, "motion": self.motion.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "ObstacleSpec":
        return cls(
            id=int(obj["id"]),
            radius=float(obj["radius"]),
            height=float(obj.get("height", 0.0)),
            motion=motion_from_json(obj["motion"]),
        )


def obstacle_position(spec: ObstacleSpec, t: float) -> Vec2:
    return spec.motion.position_at(t)


def obstacle_velocity(spec: ObstacleSpec, t: float) -> Vec2:
    return spec.motion.velocity_at(t)


# -- scenarios ---------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ScenarioSpec:
    name: str
    start: Vec2
    goal: Vec2
    obstacles: tuple[ObstacleSpec, ...] = ()
    start_heading: float = 0.0
    robot_radius: float = 0.30
    padding: float = 0.05
    v_max: float = 0.50
    omega_max: float = 0.9
    dt: float = 1.0 / 60.0
    max_steps: int = 1800
    goal_tolerance: float = 0.30

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        self.validate()

    def validate(self) -> None:
        if not (self.dt > 0 and self.max_steps > 0 and self.v_max > 0 and self.goal_tolerance > 0):
            raise ConfigError(f"{self.name}: dt, max_steps, v_max and goal_tolerance must be positive")
        if self.omega_max <= 0 or self.robot_radius <= 0 or self.padding < 0:
            raise ConfigError(f"{self.name}: bad omega_max/robot_radius/padding")
        if not (self.start.is_finite() and self.goal.is_finite() and math.isfinite(self.start_heading)):
            raise ConfigError(f"{self.name}: start/goal must be finite")
        if self.start == self.goal:
            raise ConfigError(f"{self.name}: start and goal coincide")
        ids = [o.id for o in self.obstacles]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"{self.name}: duplicate obstacle ids")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "start": self.start.to_json(),
            "start_heading": self.start_heading,
            "goal": self.goal.to_json(),
            "obstacles": [o.to_json() for o in self.obstacles],
            "robot_radius": self.robot_radius,
            "padding": self.padding,
            "v_max": self.v_max,
            "omega_max": self.omega_max,
            "dt": self.dt,
            "max_steps": self.max_steps,
            "goal_tolerance": self.goal_tolerance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioSpec":
        try:
            kwargs: dict[str, Any] = {
                "name": str(obj["name"]),
                "start": Vec2.from_json(obj["start"]),
                "goal": Vec2.from_json(obj["goal"]),
                "obstacles": tuple(ObstacleSpec.from_json(o) for o in obj.get("obstacles", [])),
            }
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed scenario: {exc}") from exc
        for key in ("start_heading", "robot_radius", "padding", "v_max", "omega_max", "dt", "goal_tolerance"):
            if key in obj:
                kwargs[key] = float(obj[key])
        if "max_steps" in obj:
            kwargs["max_steps"] = int(obj["max_steps"])
        return cls(**kwargs)


def load_scenario(path: str | Path) -> ScenarioSpec:
    with open(path) as f:
        return ScenarioSpec.from_json(json.load(f))


def clearance_margin(p: Vec2, scenario: ScenarioSpec, t: float) -> tuple[float, int]:
    """Distance from ``p`` to the nearest inflated obstacle boundary.

    Inflation is robot radius + obstacle radius + padding. Returns
    ``(inf, -1)`` for an empty field; ties go to the smallest id.
    """
    best = INF
    best_id = -1
    base = scenario.robot_radius + scenario.padding
    px, py = p
    for ob in scenario.obstacles:
        cx, cy = ob.motion.position_at(t)
        m = math.hypot(px - cx, py - cy) - (base + ob.radius)
        if m < best or (m == best and ob.id < best_id):
            best = m
            best_id = ob.id
    return best, best_id


# -- built-in scenarios ------------------------------------------------------

_GOAL = Vec2(9.0, 0.0)
_ORIGIN = Vec2(0.0, 0.0)


# A perfectly centred obstacle makes the avoidance problem symmetric and the
# single-integrator filter stalls on the axis; a lateral offset smaller than
# the contact radius keeps the straight line blocked while breaking the tie.
FRONTAL_OFFSET = 0.5
# Oscillator centres sit to the +y side so each sweep crosses the straight
# line for part of its period instead of pinning the robot head-on.
CROSSING_CENTER_Y = 1.0


def builtin_scenarios() -> list[ScenarioSpec]:
    frontal = ScenarioSpec(
        name="frontal",
        start=_ORIGIN,
        goal=_GOAL,
        obstacles=(ObstacleSpec(0, 0.4, Static(Vec2(5.0, FRONTAL_OFFSET)), height=0.6),),
    )
    cluttered = ScenarioSpec(
        name="cluttered",
        start=_ORIGIN,
        goal=_GOAL,
        obstacles=tuple(
            ObstacleSpec(i, r, Static(Vec2(x, y)), height=0.6)
            for i, (r, x, y) in enumerate(
                [(0.28, 2.0, -0.55), (0.30, 3.2, -0.35), (0.35, 5.2, -0.5), (0.42, 5.6, -1.0)]
            )
        ),
    )
    dynamic_crossing = ScenarioSpec(
        name="dynamic_crossing",
        start=_ORIGIN,
        goal=_GOAL,
        obstacles=(
            ObstacleSpec(0, 0.4, OscillateY(5.0, CROSSING_CENTER_Y, 1.2, 0.55), height=0.6),
            ObstacleSpec(1, 0.4, OscillateY(7.0, CROSSING_CENTER_Y, 1.5, 0.85), height=0.6),
        ),
    )
    dynamic_frontal = ScenarioSpec(
        name="dynamic_frontal",
        start=_ORIGIN,
        goal=_GOAL,
        obstacles=(ObstacleSpec(0, 0.4, ConstantVelocity(Vec2(5.0, FRONTAL_OFFSET), Vec2(-0.35, 0.0)), height=0.6),),
    )
    return [frontal, cluttered, dynamic_crossing, dynamic_frontal]


def scenario_by_name(name: str) -> ScenarioSpec:
    for sc in builtin_scenarios():
        if sc.name == name:
            return sc
    raise ConfigError(f"unknown scenario {name!r}")


def shipped_scenario_files() -> dict[str, Path]:
    """Paths of the JSON copies of the built-in scenarios."""
    root = resources.files("riskgate") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".json")}


def resolve_scenario(ref: str) -> ScenarioSpec:
    """Accept a built-in name or a path to a scenario JSON file."""
    if ref.endswith(".json") or Path(ref).is_file():
        try:
            return load_scenario(ref)
        except OSError as exc:
            raise ConfigError(f"cannot read scenario file {ref}: {exc}") from exc
    return scenario_by_name(ref)


__all__ = [
    "ConfigError",
    "ConstantVelocity",
    "INF",
    "MotionLaw",
    "ObstacleSpec",
    "OscillateY",
    "RobotState",
    "ScenarioSpec",
    "Static",
    "Vec2",
    "ZERO",
    "builtin_scenarios",
    "clearance_margin",
    "load_scenario",
    "obstacle_position",
    "obstacle_velocity",
    "resolve_scenario",
    "scenario_by_name",
    "shipped_scenario_files",
    "wrap_angle",
]
