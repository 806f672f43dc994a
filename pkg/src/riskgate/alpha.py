"""Risk-to-alpha mapping, the geometric speed-aware cap, staleness and fusion."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

from .world import ConfigError


class CapMode(enum.Enum):
    SOFT = "soft"
    HARD = "hard"


class AlphaSource(enum.Enum):
    VLM_CAPPED = "VLM_CAPPED"
    VLM_UNCAPPED = "VLM_UNCAPPED"
    HARD_CAP_FALLBACK = "HARD_CAP_FALLBACK"
    NO_ESTIMATE_FALLBACK = "NO_ESTIMATE_FALLBACK"
    FIXED = "FIXED"


@dataclass(frozen=True, slots=True)
class AlphaPolicyConfig:
    alpha_min: float = 0.1
    alpha_max: float = 0.6
    gamma: float = 2.0
    m_safe: float = 2.0
    alpha_near_soft: float = 0.20
    alpha_near_hard: float = 0.10
    alpha_far: float = 0.6
    gamma_c: float = 2.0
    g_v: float = 1.0
    v_cap_ref: float = 0.50
    t_stale: float = 1.0
    query_period_steps: int = 30

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ConfigError(f"{f.name} must be finite")
        if not 0 < self.alpha_min < self.alpha_max:
            raise ConfigError("need 0 < alpha_min < alpha_max")
        if not (self.alpha_near_hard < self.alpha_near_soft <= self.alpha_far):
            raise ConfigError("need alpha_near_hard < alpha_near_soft <= alpha_far")
        if self.alpha_near_hard <= 0:
            raise ConfigError("alpha_near_hard must be > 0")
        if self.alpha_far > self.alpha_max:
            raise ConfigError("alpha_far must not exceed alpha_max")
        if self.gamma <= 0 or self.gamma_c <= 0 or self.m_safe <= 0:
            raise ConfigError("gamma, gamma_c and m_safe must be > 0")
        if self.g_v < 0 or self.v_cap_ref <= 0 or self.t_stale <= 0:
            raise ConfigError("need g_v >= 0, v_cap_ref > 0, t_stale > 0")
        if int(self.query_period_steps) != self.query_period_steps or self.query_period_steps < 1:
            raise ConfigError("query_period_steps must be an integer >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "AlphaPolicyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown alpha config keys: {sorted(unknown)}")
        kwargs = {k: (int(v) if k == "query_period_steps" else float(v)) for k, v in obj.items()}
        return cls(**kwargs)


@dataclass(frozen=True, slots=True)
class AlphaDecision:
    alpha_vlm: Optional[float]
    alpha_cap_soft: float
    alpha_cap_hard: float
    stale: bool
    alpha_final: float
    source: AlphaSource


def risk_to_alpha(r: float, cfg: AlphaPolicyConfig) -> float:
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"risk {r!r} outside [0, 1]")
    return cfg.alpha_min + (cfg.alpha_max - cfg.alpha_min) * (1.0 - r) ** cfg.gamma


def distance_cap(m: float, cfg: AlphaPolicyConfig, alpha_near: float) -> float:
    # penetration (m < 0) is treated as touching
    s = min(1.0, max(0.0, m) / cfg.m_safe)
    return alpha_near + (cfg.alpha_far - alpha_near) * s**cfg.gamma_c


def speed_scale(v: float, cfg: AlphaPolicyConfig) -> float:
    return 1.0 / (1.0 + cfg.g_v * (max(0.0, v) / cfg.v_cap_ref))


def dynamic_cap(m: float, v: float, mode: CapMode, cfg: AlphaPolicyConfig) -> float:
    near = cfg.alpha_near_soft if mode is CapMode.SOFT else cfg.alpha_near_hard
    raw = distance_cap(m, cfg, near) * speed_scale(v, cfg)
    return min(cfg.alpha_far, max(near, raw))


def is_stale(t: float, t_vlm: Optional[float], cfg: AlphaPolicyConfig) -> bool:
    """True when no estimate has arrived yet or the latest one is older than ``t_stale``."""
    if t_vlm is None:
        return True
    return t - t_vlm > cfg.t_stale


def fuse_alpha(
    alpha_vlm: Optional[float],
    m: float,
    v: float,
    t: float,
    t_vlm: Optional[float],
    cfg: AlphaPolicyConfig,
    cap_enabled: bool = True,
) -> AlphaDecision:
    """Combine the latest risk-derived alpha with the soft/hard caps.

    Fresh estimates are clamped by the soft cap; stale or missing ones are
    ignored in favour of the hard cap. With ``cap_enabled=False`` the raw
    estimate passes straight through (``alpha_max`` before the first one).
    """
    soft = dynamic_cap(m, v, CapMode.SOFT, cfg)
    hard = dynamic_cap(m, v, CapMode.HARD, cfg)
    stale = is_stale(t, t_vlm, cfg)
    if not cap_enabled:
        final = alpha_vlm if alpha_vlm is not None else cfg.alpha_max
        return AlphaDecision(alpha_vlm, soft, hard, stale, final, AlphaSource.VLM_UNCAPPED)
    if stale or alpha_vlm is None:
        src = AlphaSource.NO_ESTIMATE_FALLBACK if t_vlm is None else AlphaSource.HARD_CAP_FALLBACK
        return AlphaDecision(alpha_vlm, soft, hard, True, hard, src)
    return AlphaDecision(alpha_vlm, soft, hard, False, min(alpha_vlm, soft), AlphaSource.VLM_CAPPED)
