"""Structured scene descriptor sent to the risk service in place of a camera frame."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .cbf import barrier_value
from .world import RobotState, ScenarioSpec, Vec2, wrap_angle


@dataclass(frozen=True, slots=True)
class ObstacleState:
    id: int
    center: Vec2
    velocity: Vec2
    radius: float


@dataclass(frozen=True, slots=True)
class SceneSnapshot:
    t: float
    robot: RobotState
    obstacles: tuple[ObstacleState, ...]
    goal: Vec2
    h_min: float
    margin: float

    def to_json(self) -> dict:
        # JSON has no infinity; an empty field is sent as null
        return {
            "t": self.t,
            "robot": {
                "p": self.robot.p.to_json(),
                "psi": self.robot.psi,
                "v": self.robot.v,
                "omega": self.robot.omega,
                "t": self.robot.t,
            },
            "obstacles": [
                {"id": o.id, "center": o.center.to_json(), "velocity": o.velocity.to_json(), "radius": o.radius}
                for o in self.obstacles
            ],
            "goal": self.goal.to_json(),
            "h_min": _finite_or_none(self.h_min),
            "margin": _finite_or_none(self.margin),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SceneSnapshot":
        r = obj["robot"]
        robot = RobotState(
            Vec2.from_json(r["p"]),
            wrap_angle(float(r.get("psi", 0.0))),
            float(r.get("v", 0.0)),
            float(r.get("omega", 0.0)),
            float(r.get("t", obj.get("t", 0.0))),
        )
        obstacles = tuple(
            ObstacleState(
                int(o["id"]),
                Vec2.from_json(o["center"]),
                Vec2.from_json(o.get("velocity", {"x": 0.0, "y": 0.0})),
                float(o["radius"]),
            )
            for o in obj.get("obstacles", [])
        )
        return cls(
            t=float(obj.get("t", robot.t)),
            robot=robot,
            obstacles=obstacles,
            goal=Vec2.from_json(obj["goal"]),
            h_min=_none_to_inf(obj.get("h_min")),
            margin=_none_to_inf(obj.get("margin")),
        )


def _finite_or_none(x: float):
    return x if math.isfinite(x) else None


def _none_to_inf(x) -> float:
    return math.inf if x is None else float(x)


def snapshot_scene(state: RobotState, scenario: ScenarioSpec, t: float) -> SceneSnapshot:
    base = scenario.robot_radius + scenario.padding
    obs = []
    h_min = math.inf
    margin = math.inf
    for ob in scenario.obstacles:
        c = ob.motion.position_at(t)
        obs.append(ObstacleState(ob.id, c, ob.motion.velocity_at(t), ob.radius))
        r_sum = base + ob.radius
        h_min = min(h_min, barrier_value(state.p, c, r_sum))
        margin = min(margin, math.hypot(state.p.x - c.x, state.p.y - c.y) - r_sum)
    return SceneSnapshot(t, state, tuple(obs), scenario.goal, h_min, margin)
