from __future__ import annotations

import csv
import json
import math
from functools import lru_cache

import pytest

from riskgate.alpha import AlphaPolicyConfig
from riskgate.risk_client import RiskClient, VirtualTimeTransport
from riskgate.risk_service import LatencySpec, RiskService, ScriptedProvider
from riskgate.simulator import (
    TRACE_COLUMNS,
    Outcome,
    PolicyVariant,
    check_termination,
    discretization_slack,
    integrate_step,
    margin_and_hmin,
    run_episode,
)
from riskgate.world import ConfigError, ObstacleSpec, RobotState, ScenarioSpec, Static, Vec2, scenario_by_name

DT = 1.0 / 60.0
LOGNORMAL = LatencySpec.lognormal_with_mean(0.695)


@lru_cache(maxsize=None)
def _episode(name, variant, seed=1, latency="lognormal"):
    lat = LOGNORMAL if latency == "lognormal" else LatencySpec.parse(latency)
    return run_episode(scenario_by_name(name), PolicyVariant.parse(variant), latency=lat, seed=seed)


# -- kinematics and termination -----------------------------------------------


def test_integrate_straight():
    s = integrate_step(RobotState(Vec2(0, 0), 0.0), 0.5, 0.0, DT)
    assert s.p.x == pytest.approx(0.008333, abs=1e-6)
    assert s.p.y == 0.0
    assert (s.psi, s.t) == (0.0, DT)


def test_integrate_zero_command_only_advances_time():
    s0 = RobotState(Vec2(1.5, -2.0), 0.7, 0.2, 0.1, 3.0)
    s1 = integrate_step(s0, 0.0, 0.0, DT)
    assert s1.p == s0.p and s1.psi == s0.psi
    assert s1.t == 3.0 + DT


def test_integrate_turn_rate():
    s = integrate_step(RobotState(Vec2(0, 0), 0.0), 0.0, 0.9, DT)
    assert s.psi == pytest.approx(0.015, abs=1e-15)


def test_integrate_heading_wraps():
    s = integrate_step(RobotState(Vec2(0, 0), math.pi - 0.001), 0.0, 0.9, DT)
    assert -math.pi < s.psi < 0


def _one_obstacle(x=5.0):
    return ScenarioSpec("t", Vec2(0, 0), Vec2(9, 0), (ObstacleSpec(0, 0.4, Static(Vec2(x, 0.0))),))


def test_goal_inside_tolerance():
    sc = _one_obstacle()
    assert check_termination(RobotState(Vec2(8.75, 0.0), 0.0), sc, 1.0, 10) is Outcome.GOAL_REACHED
    assert check_termination(RobotState(Vec2(8.65, 0.0), 0.0), sc, 1.0, 10) is None


def test_contact_at_exact_radius_sum_collides():
    # binary-exact radii so the contact distance 0.75 is hit without rounding
    sc = ScenarioSpec(
        "c", Vec2(0, 0), Vec2(9, 0), (ObstacleSpec(0, 0.5, Static(Vec2(5.0, 0.0))),), robot_radius=0.25
    )
    assert check_termination(RobotState(Vec2(4.25, 0.0), 0.0), sc, 0.0) is Outcome.COLLISION
    assert check_termination(RobotState(Vec2(4.5, 0.0), 0.0), sc, 0.0) is Outcome.COLLISION
    assert check_termination(RobotState(Vec2(4.25 - 1e-9, 0.0), 0.0), sc, 0.0) is None
    # the 0.05 padding plays no part in the collision test
    assert check_termination(RobotState(Vec2(4.22, 0.0), 0.0), sc, 0.0) is None


def test_timeout_at_step_limit():
    sc = _one_obstacle()
    far = RobotState(Vec2(0, 3.0), 0.0)
    assert check_termination(far, sc, 29.98, 1799) is None
    assert check_termination(far, sc, 30.0, 1800) is Outcome.TIMEOUT


def test_collision_beats_goal_beats_timeout():
    # an obstacle sitting on the goal
    sc = _one_obstacle(x=9.0)
    assert check_termination(RobotState(Vec2(9.0, 0.1), 0.0), sc, 0.0, 1800) is Outcome.COLLISION
    sc = ScenarioSpec("g", Vec2(0, 0), Vec2(9, 0))
    assert check_termination(RobotState(Vec2(9.0, 0.1), 0.0), sc, 0.0, 1800) is Outcome.GOAL_REACHED


def test_margin_and_hmin_values():
    sc = _one_obstacle()
    m, h = margin_and_hmin(Vec2(3.0, 0.0), sc, 0.0)
    assert m == pytest.approx(2.0 - 0.75)
    assert h == pytest.approx(4.0 - 0.75**2)
    assert margin_and_hmin(Vec2(0, 0), ScenarioSpec("e", Vec2(0, 0), Vec2(1, 0)), 0.0) == (math.inf, math.inf)


# -- episode examples ---------------------------------------------------------


def test_empty_world_drives_straight():
    sc = ScenarioSpec("empty", Vec2(0, 0), Vec2(9, 0))
    res = run_episode(sc, PolicyVariant.parse("fixed:0.3"))
    assert res.outcome is Outcome.GOAL_REACHED
    # the run ends on entering the goal disc, so the shortest possible path is 9 - 0.3
    shortest = 9.0 - sc.goal_tolerance
    assert shortest <= res.path_length <= 1.01 * shortest
    assert res.min_margin == math.inf


def test_frontal_detours():
    res = _episode("frontal", "fixed:0.1", latency="zero")
    assert res.outcome is Outcome.GOAL_REACHED
    assert res.path_length > 9.0


def test_aggressive_alpha_cuts_closer():
    timid = _episode("frontal", "fixed:0.1", latency="zero")
    bold = _episode("frontal", "fixed:50", latency="zero")
    assert bold.min_margin < timid.min_margin


def test_fixed_variants_never_query():
    res = _episode("cluttered", "fixed:0.6")
    assert res.requests == {} and res.latency_stats[2] == 0
    assert all(row.risk is None and row.alpha_final == 0.6 for row in res.trace)


def test_adaptive_issues_queries_on_schedule():
    res = _episode("cluttered", "adaptive")
    assert res.requests["sent"] >= 1
    assert res.requests["sent"] <= math.ceil(res.steps / 30)


@pytest.mark.parametrize("name", ["frontal", "cluttered", "dynamic_crossing", "dynamic_frontal"])
def test_cadence_without_blocking(name):
    # zero latency never blocks, so every 30th step issues a query
    res = _episode(name, "adaptive", latency="zero")
    assert res.requests["sent"] == math.ceil(res.steps / 30)
    assert res.requests["failed"] == 0


def test_determinism_bit_identical(tmp_path):
    sc = scenario_by_name("dynamic_crossing")
    a = run_episode(sc, PolicyVariant.parse("adaptive"), latency=LOGNORMAL, seed=4)
    b = run_episode(sc, PolicyVariant.parse("adaptive"), latency=LOGNORMAL, seed=4)
    a.write_trace(tmp_path / "a.csv")
    b.write_trace(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert a.summary() == b.summary()


def test_seed_changes_latency_draws():
    sc = scenario_by_name("dynamic_crossing")
    a = run_episode(sc, PolicyVariant.parse("adaptive"), latency=LOGNORMAL, seed=4)
    b = run_episode(sc, PolicyVariant.parse("adaptive"), latency=LOGNORMAL, seed=5)
    assert a.latency_stats != b.latency_stats


# -- invariants over every builtin scenario ------------------------------------

SCENARIOS = ["frontal", "cluttered", "dynamic_crossing", "dynamic_frontal"]
VARIANTS = ["adaptive", "nocap", "fixed:0.1", "fixed:0.6"]
GRID = [(s, v) for s in SCENARIOS for v in VARIANTS]


@pytest.mark.parametrize("name,variant", GRID)
def test_command_bounds(name, variant):
    sc = scenario_by_name(name)
    for row in _episode(name, variant).trace:
        assert 0.0 <= row.v_cmd <= sc.v_max + 1e-12
        assert abs(row.omega_cmd) <= sc.omega_max + 1e-12
        assert math.hypot(*row.u_safe) <= sc.v_max + 1e-9


@pytest.mark.parametrize("name,variant", GRID)
def test_metric_consistency(name, variant):
    res = _episode(name, variant)
    pts = [row.p for row in res.trace] + [res.final_state.p]
    total = sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(pts, pts[1:]))
    assert res.path_length == pytest.approx(total, abs=1e-9)
    assert res.min_margin == min(row.margin for row in res.trace)


@pytest.mark.parametrize("name,variant", GRID)
def test_step_count_and_time_axis(name, variant):
    res = _episode(name, variant)
    assert 1 <= res.steps <= 1800
    assert len(res.trace) == res.steps
    assert [row.step for row in res.trace] == list(range(res.steps))
    assert all(row.t == row.step * DT for row in res.trace)
    if res.outcome is Outcome.GOAL_REACHED:
        assert res.time_to_goal == res.steps * DT
    else:
        assert res.time_to_goal is None
    if res.outcome is Outcome.TIMEOUT:
        assert res.steps == 1800


# Measured maximum one-step shortfall below the exponential barrier decay
# bound over this grid, seed 1. Static scenarios stay below 2.5e-3; moving
# obstacles push it to 6.1e-2 (fixed 0.1 on dynamic_crossing).
STATIC_SLACK_BOUND = 5e-3
DYNAMIC_SLACK_BOUND = 0.1


@pytest.mark.parametrize("name,variant", GRID)
def test_discretization_slack_is_small(name, variant):
    res = _episode(name, variant)
    eps = discretization_slack(res.trace, DT)
    bound = STATIC_SLACK_BOUND if name in ("frontal", "cluttered") else DYNAMIC_SLACK_BOUND
    print(f"eps_disc {name} {variant}: {eps:.3e}")
    assert 0.0 <= eps <= bound


def test_slack_helper_on_hand_built_rows():
    res = _episode("frontal", "fixed:0.1", latency="zero")
    rows = res.trace[:2]
    expected = max(0.0, rows[0].h_min * (1 - rows[0].alpha_final * DT) - rows[1].h_min)
    assert discretization_slack(rows, DT) == expected
    assert discretization_slack(rows[:1], DT) == 0.0


# -- trace file and variant parsing --------------------------------------------


def test_trace_csv_layout(tmp_path):
    res = _episode("frontal", "adaptive")
    path = tmp_path / "t.csv"
    res.write_trace(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header = rows[0]
    assert header[:4] == ["step", "t", "p_x", "p_y"]
    assert "u_safe_x" in header and "alpha_final" in header and header[-1] == "qp_feasible"
    assert len(header) == len(TRACE_COLUMNS) + 3
    assert len(rows) == res.steps + 1
    assert all(len(r) == len(header) for r in rows)
    last = rows[-1]
    assert int(last[0]) == res.steps - 1
    assert float(last[header.index("t")]) == res.trace[-1].t


def test_summary_json(tmp_path):
    res = _episode("cluttered", "adaptive")
    res.write_summary(tmp_path / "s.json")
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["outcome"] == res.outcome.value
    assert data["steps"] == res.steps and data["path_length"] == res.path_length


@pytest.mark.parametrize(
    "text,kind,alpha",
    [("adaptive", "adaptive", None), ("nocap", "nocap", None), ("fixed:0.35", "fixed", 0.35)],
)
def test_variant_parse(text, kind, alpha):
    v = PolicyVariant.parse(text)
    assert (v.kind, v.alpha) == (kind, alpha)
    assert v.name == text


@pytest.mark.parametrize("text", ["fixed", "fixed:x", "fixed:0", "fixed:-1", "fixed:nan", "greedy", "adaptive:1"])
def test_variant_parse_errors(text):
    with pytest.raises(ConfigError):
        PolicyVariant.parse(text)


def test_provider_down_keeps_episode_running():
    # one scripted value: later queries fail and the estimate goes stale
    cfg = AlphaPolicyConfig()
    client = RiskClient(VirtualTimeTransport(RiskService(ScriptedProvider([0.0]))), cfg)
    res = run_episode(scenario_by_name("frontal"), PolicyVariant.parse("adaptive"), cfg, client=client)
    assert res.requests["failed"] >= 1
    stale_rows = [row for row in res.trace if row.stale]
    assert stale_rows and all(row.alpha_final == row.alpha_cap_hard for row in stale_rows)
