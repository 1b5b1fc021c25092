import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from affrec.affordance import (
    UncertaintyConfig,
    assemble_representation,
    decode,
    display2,
    effective_confidence,
    encode,
)
from affrec.cot_engine import RuleBackend, infer_affordance
from affrec.domain import Answer, Context, LengthMismatch, ValidationError, Verdict
from affrec.querygen import discretize_context

from conftest import DAY, MON_0900, make_poi, query

MONDAY = Context.at(MON_0900, "solo", intent_text="remote work")
QUIET = query("Does visual evidence suggest a quiet, well-lit focused atmosphere?")
CTYPE = discretize_context(MONDAY)


def conflicted_rep(alpha=0.5):
    poi = make_poi(image="A serene reading-room.", reviews=[("Unbearable construction noise.", MON_0900 - DAY)])
    return infer_affordance([QUIET], poi.content, MONDAY, RuleBackend(), alpha=alpha, poi_id="p1")


@pytest.mark.parametrize("answer,conf,alpha,want", [
    (Answer.YES, 0.8, 0.5, 0.8), (Answer.NO, 0.9, 0.5, 0.0), (Answer.UNCERTAIN, 0.71, 0.5, 0.355),
    (Answer.UNCERTAIN, 0.71, 0.0, 0.0), (Answer.UNCERTAIN, 0.71, 1.0, 0.71),
])
def test_effective_confidence(answer, conf, alpha, want):
    assert effective_confidence(Verdict(answer, conf), UncertaintyConfig(alpha)) == pytest.approx(want)


def test_alpha_outside_unit_interval():
    with pytest.raises(ValidationError):
        UncertaintyConfig(1.2)


@pytest.mark.parametrize("x,s", [(0.355, "0.36"), (0.345, "0.35"), (0.71, "0.71"), (0.0, "0.00"), (1.0, "1.00"),
                                 (0.125, "0.13")])
def test_display_rounds_half_up(x, s):
    assert display2(x) == s


def test_round_trip_is_byte_identical():
    rep = conflicted_rep()
    text = encode(rep)
    back = decode(text)
    assert back == rep and encode(back) == text
    obj = json.loads(text)
    assert obj["effective"] == ["0.355000"] and obj["entries"][0]["verdict"]["confidence"] == "0.710000"


@given(st.lists(st.tuples(st.sampled_from(list(Answer)), st.integers(0, 10**6)), min_size=1, max_size=8),
       st.integers(0, 10**6))
def test_round_trip_property(rows, a):
    # six-decimal values survive the fixed-point encoding exactly
    entries = [(query(f"Is feature {i} present?", i + 1), Verdict(ans, c / 10**6)) for i, (ans, c) in enumerate(rows)]
    rep = assemble_representation("p", CTYPE, entries, UncertaintyConfig(a / 10**6))
    assert encode(decode(encode(rep))) == encode(rep)


def test_assemble_checks_length_and_order():
    v = Verdict(Answer.YES, 0.5)
    with pytest.raises(LengthMismatch):
        assemble_representation("p", CTYPE, [(query("Is it quiet?"), v)], k=2)
    with pytest.raises(ValidationError):
        assemble_representation("p", CTYPE, [(query("Is it quiet?", index=2), v)])


def test_decode_rejects_tampering():
    obj = json.loads(encode(conflicted_rep()))
    obj["effective"] = ["0.900000"]
    with pytest.raises(ValidationError):
        decode(json.dumps(obj))
    obj["schema_version"] = 99
    with pytest.raises(ValidationError):
        decode(json.dumps(obj))
