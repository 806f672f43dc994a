"""Single-episode runner: sense, alpha pipeline, CBF-QP, drive, terminate."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .alpha import AlphaDecision, AlphaPolicyConfig, AlphaSource, CapMode, dynamic_cap, fuse_alpha, risk_to_alpha
from .cbf import DEFAULT_K_HEADING, build_constraints, nominal_control, solve_safety_qp, world_to_diffdrive
from .risk_client import RiskClient, VirtualTimeTransport, build_context
from .risk_service import LatencySpec, RiskProviderSpec, RiskService
from .scene import SceneSnapshot, snapshot_scene
from .world import ConfigError, RobotState, ScenarioSpec, Vec2, wrap_angle


class Outcome(enum.Enum):
    GOAL_REACHED = "GoalReached"
    COLLISION = "Collision"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class PolicyVariant:
    kind: str
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("adaptive", "nocap", "fixed"):
            raise ConfigError(f"unknown policy variant {self.kind!r}")
        if self.kind == "fixed" and not (self.alpha is not None and math.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigError("fixed variant needs alpha > 0")

    @classmethod
    def parse(cls, text: str) -> "PolicyVariant":
        kind, _, rest = text.partition(":")
        if kind == "fixed":
            try:
                return cls("fixed", float(rest))
            except ValueError as exc:
                raise ConfigError(f"bad fixed alpha in {text!r}") from exc
        if rest:
            raise ConfigError(f"unexpected argument in variant {text!r}")
        return cls(kind)

    @property
    def name(self) -> str:
        return f"fixed:{self.alpha:g}" if self.kind == "fixed" else self.kind

    @property
    def uses_risk(self) -> bool:
        return self.kind != "fixed"


ADAPTIVE = PolicyVariant("adaptive")
NO_CAP = PolicyVariant("nocap")


@dataclass(slots=True)
class StepTrace:
    step: int
    t: float
    p: Vec2
    psi: float
    v_cmd: float
    omega_cmd: float
    u_nom: Vec2
    u_safe: Vec2
    alpha_vlm: Optional[float]
    alpha_cap_soft: float
    alpha_cap_hard: float
    alpha_final: float
    stale: bool
    risk: Optional[float]
    h_min: float
    margin: float
    qp_feasible: bool


TRACE_COLUMNS = [f.name for f in fields(StepTrace)]


@dataclass
class EpisodeResult:
    scenario: str
    variant: str
    seed: int
    outcome: Outcome
    time_to_goal: Optional[float]
    min_margin: float
    path_length: float
    steps: int
    trace: list[StepTrace]
    latency_stats: tuple[float, float, int]
    final_state: RobotState
    requests: dict = field(default_factory=dict)

    def summary(self) -> dict:
        mean, mx, n = self.latency_stats
        return {
            "scenario": self.scenario,
            "variant": self.variant,
            "seed": self.seed,
            "outcome": self.outcome.value,
            "time_to_goal": self.time_to_goal,
            "min_margin": _json_float(self.min_margin),
            "path_length": self.path_length,
            "steps": self.steps,
            "latency_stats": {"mean": _json_float(mean), "max": _json_float(mx), "count": n},
            "requests": self.requests,
            "final_state": {"p": self.final_state.p.to_json(), "psi": self.final_state.psi},
        }

    def write_summary(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2)
            f.write("\n")

    def write_trace(self, path: str | Path) -> None:
        write_trace_csv(self.trace, path)


def _json_float(x: float):
    return x if math.isfinite(x) else None


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_trace_csv(trace: list[StepTrace], path: str | Path) -> None:
    """One header row, then one row per step in field order; vectors expand to ``_x``/``_y``."""
    header = []
    for name in TRACE_COLUMNS:
        header.extend([f"{name}_x", f"{name}_y"] if name in ("p", "u_nom", "u_safe") else [name])
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in trace:
            out = []
            for name in TRACE_COLUMNS:
                val = getattr(row, name)
                if isinstance(val, tuple):
                    out.extend([_cell(val[0]), _cell(val[1])])
                else:
                    out.append(_cell(val))
            w.writerow(out)


def integrate_step(state: RobotState, v: float, omega: float, dt: float) -> RobotState:
    """Explicit Euler unicycle step."""
    x, y = state.p
    return RobotState(
        Vec2(x + v * math.cos(state.psi) * dt, y + v * math.sin(state.psi) * dt),
        wrap_angle(state.psi + omega * dt),
        v,
        omega,
        state.t + dt,
    )


def check_termination(state: RobotState, scenario: ScenarioSpec, t: float, step: int = 0) -> Optional[Outcome]:
    """Collision beats goal beats timeout. Contact ignores the safety padding."""
    px, py = state.p
    for ob in scenario.obstacles:
        cx, cy = ob.motion.position_at(t)
        if math.hypot(px - cx, py - cy) <= scenario.robot_radius + ob.radius:
            return Outcome.COLLISION
    gx, gy = scenario.goal
    if math.hypot(px - gx, py - gy) <= scenario.goal_tolerance:
        return Outcome.GOAL_REACHED
    if step >= scenario.max_steps:
        return Outcome.TIMEOUT
    return None


def margin_and_hmin(p: Vec2, scenario: ScenarioSpec, t: float) -> tuple[float, float]:
    base = scenario.robot_radius + scenario.padding
    m = h = math.inf
    px, py = p
    for ob in scenario.obstacles:
        cx, cy = ob.motion.position_at(t)
        dx = px - cx
        dy = py - cy
        r = base + ob.radius
        d2 = dx * dx + dy * dy
        if d2 - r * r < h:
            h = d2 - r * r
        d = math.sqrt(d2) - r
        if d < m:
            m = d
    return m, h


def discretization_slack(trace: list[StepTrace], dt: float) -> float:
    """Largest shortfall of ``h_next >= h*(1 - alpha*dt)`` over consecutive trace rows.

    Only steps with a feasible QP and positive starting margin count. The
    continuous CBF condition is enforced at each sample but the robot moves
    along its heading rather than along the filtered command, and obstacles
    move within the step, so this is generally a small positive number.
    """
    worst = 0.0
    for row, nxt in zip(trace, trace[1:]):
        if not (row.qp_feasible and row.margin > 0 and math.isfinite(row.h_min)):
            continue
        gap = row.h_min * (1.0 - row.alpha_final * dt) - nxt.h_min
        if gap > worst:
            worst = gap
    return worst


def make_client(
    alpha_cfg: AlphaPolicyConfig,
    provider: RiskProviderSpec,
    latency: LatencySpec,
    seed: int,
    max_in_flight: int = 1,
) -> RiskClient:
    """Per-episode virtual-time client; all randomness is derived from ``seed``."""
    service = RiskService(provider.build(alpha_cfg, seed), latency.sampler(seed))
    return RiskClient(VirtualTimeTransport(service), alpha_cfg, max_in_flight=max_in_flight)


def run_episode(
    scenario: ScenarioSpec,
    policy: PolicyVariant,
    alpha_cfg: AlphaPolicyConfig | None = None,
    provider: RiskProviderSpec | None = None,
    latency: LatencySpec | None = None,
    seed: int = 0,
    *,
    client: RiskClient | None = None,
    include_obstacle_velocity: bool = True,
    k_heading: float = DEFAULT_K_HEADING,
    max_in_flight: int = 1,
) -> EpisodeResult:
    """Run one episode to termination.

    Per step: (1) on query steps snapshot the scene and submit, then poll;
    (2) clearance margin and speed estimate; (3) alpha fusion; (4) nominal
    command and CBF-QP; (5) differential-drive conversion and integration;
    then the termination check. Pass ``client`` to use a custom transport.
    """
    alpha_cfg = alpha_cfg or AlphaPolicyConfig()
    provider = provider or RiskProviderSpec()
    latency = latency or LatencySpec()
    scenario.validate()
    alpha_cfg.validate()

    if policy.uses_risk and client is None:
        client = make_client(alpha_cfg, provider, latency, seed, max_in_flight)
    if not policy.uses_risk:
        client = None

    dt = scenario.dt
    v_max = scenario.v_max
    omega_max = scenario.omega_max
    goal = scenario.goal
    cap_enabled = policy.kind == "adaptive"

    state = RobotState(scenario.start, wrap_angle(scenario.start_heading), 0.0, 0.0, 0.0)
    trace: list[StepTrace] = []
    path_length = 0.0
    outcome = None
    step = 0
    latest = None
    alpha_vlm = None
    while outcome is None:
        t = step * dt

        # 1. scheduled asynchronous query, then drain arrivals
        if client is not None:
            if client.should_query(step):
                frame = snapshot_scene(state, scenario, t)
                client.submit(frame, build_context(frame.h_min, state.v), t)
            if client.poll(t) is not None or client.latest is not latest:
                latest = client.latest
                alpha_vlm = risk_to_alpha(latest.r, alpha_cfg)

        # 2. geometry and speed estimate (previous commanded speed)
        m, h_min = margin_and_hmin(state.p, scenario, t)
        v_est = state.v

        # 3. alpha
        if policy.kind == "fixed":
            decision = AlphaDecision(
                None,
                dynamic_cap(m, v_est, CapMode.SOFT, alpha_cfg),
                dynamic_cap(m, v_est, CapMode.HARD, alpha_cfg),
                True,
                policy.alpha,
                AlphaSource.FIXED,
            )
        else:
            decision = fuse_alpha(
                alpha_vlm, m, v_est, t, latest.t_received if latest else None, alpha_cfg, cap_enabled
            )

        # 4. nominal command through the safety filter
        u_nom = nominal_control(state.p, goal, v_max)
        cons = build_constraints(state, scenario, decision.alpha_final, t, include_obstacle_velocity)
        res = solve_safety_qp(u_nom, cons, v_max)

        # 5. execute
        v_cmd, omega_cmd = world_to_diffdrive(res.u_safe, state.psi, v_max, omega_max, k_heading)
        nxt = integrate_step(state, v_cmd, omega_cmd, dt)
        trace.append(
            StepTrace(
                step,
                t,
                state.p,
                state.psi,
                v_cmd,
                omega_cmd,
                u_nom,
                res.u_safe,
                decision.alpha_vlm,
                decision.alpha_cap_soft,
                decision.alpha_cap_hard,
                decision.alpha_final,
                decision.stale,
                latest.r if latest else None,
                h_min,
                m,
                res.feasible,
            )
        )
        path_length += math.hypot(nxt.p.x - state.p.x, nxt.p.y - state.p.y)
        step += 1
        state = nxt
        outcome = check_termination(state, scenario, step * dt, step)

    requests = {}
    latency_stats: tuple[float, float, int] = (math.nan, math.nan, 0)
    if client is not None:
        latency_stats = client.latency_stats()
        requests = {
            "sent": client.requests_sent,
            "received": client.requests_received,
            "failed": client.requests_failed,
        }
    return EpisodeResult(
        scenario=scenario.name,
        variant=policy.name,
        seed=seed,
        outcome=outcome,
        time_to_goal=step * dt if outcome is Outcome.GOAL_REACHED else None,
        min_margin=min(row.margin for row in trace),
        path_length=path_length,
        steps=step,
        trace=trace,
        latency_stats=latency_stats,
        final_state=state,
        requests=requests,
    )


__all__ = [
    "ADAPTIVE",
    "NO_CAP",
    "EpisodeResult",
    "Outcome",
    "PolicyVariant",
    "SceneSnapshot",
    "StepTrace",
    "TRACE_COLUMNS",
    "check_termination",
    "discretization_slack",
    "integrate_step",
    "make_client",
    "margin_and_hmin",
    "run_episode",
    "write_trace_csv",
]
