"""Conservative extraction of a risk score from free-form model output."""

from __future__ import annotations

import re
from decimal import Decimal

# A brace-delimited object with a "risk" key and a numeric value; the value
# may be quoted and may carry a percent sign. Nested braces are not spanned,
# so the innermost object holding the key is matched.
_RISK_OBJECT = re.compile(
    r"""\{[^{}]*?["']risk["']\s*:\s*["']?\s*
        (?P<num>[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)
        \s*(?P<pct>%)?\s*["']?\s*[,}]""",
    re.VERBOSE | re.IGNORECASE,
)

_HUNDRED = Decimal(100)


class NoRiskFound(ValueError):
    """The text holds no extractable risk value."""


def normalize_risk(value: Decimal, percent: bool = False) -> float:
    """Rescale percentages and clip into [0, 1].

    An explicit ``%`` always rescales. Bare values in (1, 2] are read as a
    slightly out-of-range probability and clip to 1; values in (2, 100] are
    read as percentages; anything above 100 saturates.
    """
    if percent or value > 2:
        value = min(value, _HUNDRED) / _HUNDRED
    if value < 0:
        return 0.0
    if value > 1:
        return 1.0
    return float(value)


def parse_risk_response(body: str) -> float:
    """Return the risk from the last JSON-like ``{"risk": ...}`` object in ``body``."""
    last = None
    for last in _RISK_OBJECT.finditer(body):
        pass
    if last is None:
        raise NoRiskFound(f"no risk value in response: {body[:120]!r}")
    return normalize_risk(Decimal(last.group("num")), last.group("pct") is not None)
