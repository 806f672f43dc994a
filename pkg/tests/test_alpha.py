from __future__ import annotations

import math

import pytest
from hypothesis import assume, given, strategies as st

from riskgate.alpha import (
    AlphaPolicyConfig,
    AlphaSource,
    CapMode,
    distance_cap,
    dynamic_cap,
    fuse_alpha,
    is_stale,
    risk_to_alpha,
    speed_scale,
)
from riskgate.world import ConfigError

CFG = AlphaPolicyConfig()
unit = st.floats(0.0, 1.0)
margins = st.floats(-1.0, 10.0)
speeds = st.floats(-0.5, 1.0)


def test_defaults():
    assert (CFG.alpha_min, CFG.alpha_max, CFG.gamma) == (0.1, 0.6, 2.0)
    # stated in the method description: gamma_c = 2, G_v = 1, N = 30
    assert (CFG.gamma_c, CFG.g_v, CFG.query_period_steps) == (2.0, 1.0, 30)


def test_risk_to_alpha_examples():
    assert risk_to_alpha(0.0, CFG) == CFG.alpha_max
    assert risk_to_alpha(1.0, CFG) == CFG.alpha_min
    assert risk_to_alpha(0.5, CFG) == pytest.approx(0.225)


@pytest.mark.parametrize("r", [-0.01, 1.01, math.nan])
def test_risk_to_alpha_out_of_range(r):
    with pytest.raises(ValueError):
        risk_to_alpha(r, CFG)


@given(unit, unit)
def test_risk_to_alpha_bounded_and_monotone(r1, r2):
    a1, a2 = risk_to_alpha(r1, CFG), risk_to_alpha(r2, CFG)
    assert CFG.alpha_min <= a1 <= CFG.alpha_max
    if r1 <= r2:
        assert a1 >= a2


def test_distance_cap_examples():
    near = CFG.alpha_near_soft
    assert distance_cap(0.0, CFG, near) == near
    assert distance_cap(CFG.m_safe, CFG, near) == CFG.alpha_far
    assert distance_cap(7.0, CFG, near) == CFG.alpha_far
    assert distance_cap(CFG.m_safe / 2, CFG, near) == pytest.approx(near + 0.25 * (CFG.alpha_far - near))
    # penetration counts as touching
    assert distance_cap(-0.3, CFG, near) == near


def test_speed_scale():
    assert speed_scale(0.0, CFG) == 1.0
    assert speed_scale(CFG.v_cap_ref, CFG) == 0.5
    assert speed_scale(-1.0, CFG) == 1.0


def test_dynamic_cap_examples():
    assert dynamic_cap(CFG.m_safe, 0.0, CapMode.SOFT, CFG) == CFG.alpha_far
    assert dynamic_cap(CFG.m_safe, CFG.v_cap_ref, CapMode.SOFT, CFG) == pytest.approx(0.3)
    assert dynamic_cap(0.0, 0.3, CapMode.SOFT, CFG) == CFG.alpha_near_soft
    assert dynamic_cap(0.0, 0.3, CapMode.HARD, CFG) == CFG.alpha_near_hard


@given(margins, speeds)
def test_hard_cap_never_exceeds_soft(m, v):
    hard = dynamic_cap(m, v, CapMode.HARD, CFG)
    soft = dynamic_cap(m, v, CapMode.SOFT, CFG)
    assert CFG.alpha_near_hard <= hard <= soft <= CFG.alpha_far


@given(margins, margins, speeds)
def test_cap_monotone_in_margin(m1, m2, v):
    assume(m1 <= m2)
    for mode in CapMode:
        assert dynamic_cap(m1, v, mode, CFG) <= dynamic_cap(m2, v, mode, CFG) + 1e-15


@given(margins, speeds, speeds)
def test_cap_monotone_in_speed(m, v1, v2):
    assume(v1 <= v2)
    for mode in CapMode:
        assert dynamic_cap(m, v1, mode, CFG) >= dynamic_cap(m, v2, mode, CFG) - 1e-15


def test_staleness_is_strict():
    assert is_stale(5.0, None, CFG)
    assert not is_stale(5.0, 4.0, CFG)  # exactly t_stale old is still fresh
    assert is_stale(5.0 + 1e-9, 4.0, CFG)


def test_fusion_fresh_takes_min_with_soft_cap():
    d = fuse_alpha(0.6, 0.1, 0.25, 3.0, 2.5, CFG)
    assert not d.stale
    assert d.alpha_final == min(0.6, d.alpha_cap_soft)
    assert d.source is AlphaSource.VLM_CAPPED
    # a cautious estimate passes below the cap untouched
    d = fuse_alpha(0.1, 5.0, 0.0, 3.0, 2.5, CFG)
    assert d.alpha_final == 0.1


def test_fusion_stale_uses_hard_cap():
    d = fuse_alpha(0.6, 0.4, 0.5, 10.0, 2.0, CFG)
    assert d.stale and d.alpha_final == d.alpha_cap_hard
    assert d.source is AlphaSource.HARD_CAP_FALLBACK


def test_fusion_without_estimate():
    d = fuse_alpha(None, 0.4, 0.5, 0.0, None, CFG)
    assert d.stale and d.alpha_final == d.alpha_cap_hard
    assert d.source is AlphaSource.NO_ESTIMATE_FALLBACK


def test_fusion_without_cap_passes_through():
    d = fuse_alpha(0.55, 0.0, 0.5, 10.0, 2.0, CFG, cap_enabled=False)
    assert d.alpha_final == 0.55 and d.source is AlphaSource.VLM_UNCAPPED
    assert fuse_alpha(None, 0.0, 0.5, 0.0, None, CFG, cap_enabled=False).alpha_final == CFG.alpha_max


@given(st.one_of(st.none(), st.floats(0.1, 0.6)), margins, speeds, st.floats(0, 40), st.one_of(st.none(), st.floats(0, 40)))
def test_fusion_bounds(a_vlm, m, v, t, t_vlm):
    d = fuse_alpha(a_vlm, m, v, t, t_vlm, CFG)
    lo = min(CFG.alpha_near_hard, CFG.alpha_min)
    hi = max(CFG.alpha_far, CFG.alpha_max)
    assert lo <= d.alpha_final <= hi
    assert d.alpha_final <= d.alpha_cap_soft


@pytest.mark.parametrize(
    "kwargs",
    [
        {"alpha_min": 0.6, "alpha_max": 0.1},
        {"alpha_near_hard": 0.3, "alpha_near_soft": 0.2},
        {"alpha_far": 0.7},
        {"gamma": 0.0},
        {"m_safe": -1.0},
        {"g_v": -0.1},
        {"t_stale": 0.0},
        {"query_period_steps": 0},
        {"alpha_max": math.inf},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        AlphaPolicyConfig(**kwargs)


def test_config_json_round_trip():
    cfg = AlphaPolicyConfig(alpha_near_soft=0.25, t_stale=1.5)
    assert AlphaPolicyConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ConfigError):
        AlphaPolicyConfig.from_json({"alpha_mni": 0.1})
