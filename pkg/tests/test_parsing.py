from __future__ import annotations

from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from parser_corpus import GOLDEN
from riskgate.parsing import NoRiskFound, normalize_risk, parse_risk_response
from riskgate.risk_service import format_risk_body


@pytest.mark.parametrize("body,expected", [c[1:] for c in GOLDEN], ids=[c[0] for c in GOLDEN])
def test_golden(body, expected):
    if expected is None:
        with pytest.raises(NoRiskFound):
            parse_risk_response(body)
    else:
        assert parse_risk_response(body) == expected


def test_corpus_size():
    assert len(GOLDEN) == 20


def test_normalize_boundaries():
    assert normalize_risk(Decimal("1")) == 1.0
    assert normalize_risk(Decimal("2.0001")) == pytest.approx(0.020001)
    assert normalize_risk(Decimal("100")) == 1.0
    assert normalize_risk(Decimal("100"), percent=True) == 1.0
    assert normalize_risk(Decimal("0.5"), percent=True) == 0.005


@given(st.floats(0.0, 1.0))
def test_serve_then_parse_is_quantization(r):
    got = parse_risk_response(format_risk_body(r))
    assert got == float(f"{r:.4f}")
    assert abs(got - r) <= 5e-5 + 1e-12


@given(st.text(max_size=200))
def test_never_crashes_and_stays_in_range(text):
    try:
        r = parse_risk_response(text)
    except NoRiskFound:
        return
    assert 0.0 <= r <= 1.0


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=5), st.text(alphabet="abc .:\n", max_size=20))
def test_last_object_wins(values, filler):
    body = filler.join(format_risk_body(v) for v in values)
    assert parse_risk_response(body) == float(f"{values[-1]:.4f}")
