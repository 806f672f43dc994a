"""Per-obstacle barrier functions and the 2-D safety QP.

The QP is tiny (two decision variables, a handful of halfplanes and one norm
ball), so it is solved exactly by enumerating candidate active sets rather
than calling a generic solver. Scalars are plain Python floats on purpose:
numpy's per-call overhead dominates at this size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .world import RobotState, ScenarioSpec, Vec2, ZERO, wrap_angle

# Acceptance tolerance for constraint satisfaction of a candidate.
FEAS_TOL = 1e-9
ACTIVE_TOL = 1e-7
MIN_COMMAND = 1e-6
DEFAULT_K_HEADING = 2.0


class NonFiniteInputError(ValueError):
    """NaN or Inf reached the QP."""


class BarrierEval(NamedTuple):
    obstacle_id: int
    h: float
    grad: Vec2
    c_dot: Vec2


class HalfplaneConstraint(NamedTuple):
    """``a . u >= b``."""

    a: Vec2
    b: float
    obstacle_id: int = -1


@dataclass(slots=True)
class FilterResult:
    u_safe: Vec2
    active_set: list[int] = field(default_factory=list)
    feasible: bool = True
    qp_residual: float = 0.0


def barrier_value(p: Vec2, c: Vec2, r_sum: float) -> float:
    dx = p[0] - c[0]
    dy = p[1] - c[1]
    return dx * dx + dy * dy - r_sum * r_sum


def evaluate_barriers(p: Vec2, scenario: ScenarioSpec, t: float) -> list[BarrierEval]:
    base = scenario.robot_radius + scenario.padding
    out = []
    for ob in scenario.obstacles:
        c = ob.motion.position_at(t)
        h = barrier_value(p, c, base + ob.radius)
        out.append(BarrierEval(ob.id, h, Vec2(2.0 * (p[0] - c[0]), 2.0 * (p[1] - c[1])), ob.motion.velocity_at(t)))
    return out


def min_barrier(p: Vec2, scenario: ScenarioSpec, t: float) -> float:
    base = scenario.robot_radius + scenario.padding
    best = math.inf
    for ob in scenario.obstacles:
        h = barrier_value(p, ob.motion.position_at(t), base + ob.radius)
        if h < best:
            best = h
    return best


def nominal_control(p: Vec2, goal: Vec2, v_max: float) -> Vec2:
    """Goal-seeking velocity, speed capped at ``v_max``."""
    dx = goal[0] - p[0]
    dy = goal[1] - p[1]
    d = math.hypot(dx, dy)
    if d == 0.0:
        return ZERO
    k = min(1.0, v_max / d)
    return Vec2(dx * k, dy * k)


def build_constraints(
    state: RobotState,
    scenario: ScenarioSpec,
    alpha: float,
    t: float,
    include_obstacle_velocity: bool = True,
) -> list[HalfplaneConstraint]:
    """Linear CBF constraints ``grad . u >= -alpha*h + grad . c_dot``, one per obstacle.

    Uses single-integrator position dynamics and the linear class-K
    function ``alpha * h``.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    px, py = state.p
    base = scenario.robot_radius + scenario.padding
    out = []
    for ob in scenario.obstacles:
        cx, cy = ob.motion.position_at(t)
        dx = px - cx
        dy = py - cy
        r = base + ob.radius
        h = dx * dx + dy * dy - r * r
        gx = 2.0 * dx
        gy = 2.0 * dy
        b = -alpha * h
        if include_obstacle_velocity:
            vx, vy = ob.motion.velocity_at(t)
            b += gx * vx + gy * vy
        if gx == 0.0 and gy == 0.0 and b <= 0.0:
            continue
        out.append(HalfplaneConstraint(Vec2(gx, gy), b, ob.id))
    return out


def _feasible(x: float, y: float, cons, v_max: float) -> bool:
    if math.hypot(x, y) > v_max + FEAS_TOL:
        return False
    for (ax, ay), b, _ in cons:
        if ax * x + ay * y < b - FEAS_TOL:
            return False
    return True


def _line_circle(ax: float, ay: float, b: float, v_max: float) -> list[tuple[float, float]]:
    n = math.hypot(ax, ay)
    if n == 0.0:
        return []
    off = b / n
    if abs(off) > v_max:
        return []
    nx, ny = ax / n, ay / n
    fx, fy = nx * off, ny * off
    half = math.sqrt(max(0.0, v_max * v_max - off * off))
    return [(fx - ny * half, fy + nx * half), (fx + ny * half, fy - nx * half)]


def _candidates(ux: float, uy: float, cons, v_max: float) -> list[tuple[float, float]]:
    cands = [(ux, uy)]
    nu = math.hypot(ux, uy)
    if nu > v_max:
        cands.append((ux * v_max / nu, uy * v_max / nu))
    for (ax, ay), b, _ in cons:
        n2 = ax * ax + ay * ay
        if n2 == 0.0:
            continue
        s = (b - (ax * ux + ay * uy)) / n2
        if s > 0.0:
            cands.append((ux + s * ax, uy + s * ay))
        cands.extend(_line_circle(ax, ay, b, v_max))
    k = len(cons)
    for i in range(k):
        (a1x, a1y), b1, _ = cons[i]
        for j in range(i + 1, k):
            (a2x, a2y), b2, _ = cons[j]
            det = a1x * a2y - a1y * a2x
            if abs(det) < 1e-12 * (a1x * a1x + a1y * a1y + a2x * a2x + a2y * a2y):
                continue
            cands.append(((b1 * a2y - b2 * a1y) / det, (a1x * b2 - a2x * b1) / det))
    return cands


def _best_feasible(ux: float, uy: float, cons, v_max: float):
    cands = _candidates(ux, uy, cons, v_max)
    cands.sort(key=lambda c: (c[0] - ux) ** 2 + (c[1] - uy) ** 2)
    for x, y in cands:
        if _feasible(x, y, cons, v_max):
            return x, y
    return None


def _residual(x: float, y: float, cons, v_max: float) -> float:
    r = max(0.0, math.hypot(x, y) - v_max)
    for (ax, ay), b, _ in cons:
        r = max(r, b - (ax * x + ay * y))
    return r


def _active(x: float, y: float, cons) -> list[int]:
    out = []
    for (ax, ay), b, oid in cons:
        scale = max(1.0, abs(b), math.hypot(ax, ay))
        if abs(ax * x + ay * y - b) <= ACTIVE_TOL * scale:
            out.append(oid)
    return out


def solve_safety_qp(u_nom: Vec2, constraints: Sequence[HalfplaneConstraint], v_max: float) -> FilterResult:
    """Minimize ``0.5*||u - u_nom||^2`` s.t. every halfplane and ``||u|| <= v_max``.

    Candidates are the unconstrained point, projections onto each violated
    boundary, every pairwise boundary vertex, the radial projection onto the
    ball and each boundary/circle intersection; the cheapest feasible one is
    the exact optimum. When nothing is feasible the result is flagged
    infeasible and carries the fallback command: the best point of the most
    violated halfplane inside the ball, or a full stop if that is empty.
    """
    ux, uy = u_nom
    if not (math.isfinite(ux) and math.isfinite(uy) and math.isfinite(v_max)):
        raise NonFiniteInputError("u_nom and v_max must be finite")
    if not v_max > 0:
        raise ValueError("v_max must be > 0")
    for (ax, ay), b, _ in constraints:
        if not (math.isfinite(ax) and math.isfinite(ay) and math.isfinite(b)):
            raise NonFiniteInputError("constraint coefficients must be finite")
    cons = list(constraints)

    # fast path: nominal command already admissible
    if _feasible(ux, uy, cons, v_max):
        return FilterResult(Vec2(ux, uy), _active(ux, uy, cons), True, 0.0)

    best = _best_feasible(ux, uy, cons, v_max)
    if best is not None:
        x, y = best
        return FilterResult(Vec2(x, y), _active(x, y, cons), True, _residual(x, y, cons, v_max))

    worst = max(cons, key=lambda c: c.b - (c.a[0] * ux + c.a[1] * uy))
    fb = _best_feasible(ux, uy, [worst], v_max)
    x, y = fb if fb is not None else (0.0, 0.0)
    return FilterResult(Vec2(x, y), _active(x, y, cons), False, _residual(x, y, cons, v_max))


def world_to_diffdrive(
    u_safe: Vec2,
    psi: float,
    v_max: float,
    omega_max: float,
    k_heading: float = DEFAULT_K_HEADING,
) -> tuple[float, float]:
    """Turn a world-frame velocity into ``(v, omega)`` for a differential drive.

    Forward speed is gated by ``cos`` of the heading error so the base does
    not drive while badly misaligned.
    """
    ux, uy = u_safe
    speed = math.hypot(ux, uy)
    if speed < MIN_COMMAND:
        return 0.0, 0.0
    e = wrap_angle(math.atan2(uy, ux) - psi)
    omega = min(omega_max, max(-omega_max, k_heading * e))
    v = min(v_max, max(0.0, speed * max(0.0, math.cos(e))))
    return v, omega
