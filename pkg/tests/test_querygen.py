import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from affrec.cot_engine import BackendUnavailable, RuleBackend
from affrec.domain import AffordanceQuery, Context, ContextType, DayPart
from affrec.lexicon import query_dimension
from affrec.querygen import (
    QueryGenConfig,
    build_prompt,
    canonical_intent,
    day_part_of,
    discretize_context,
    fixed_queries,
    generate_queries,
    jaccard,
    load_template_bank,
    parse_query_response,
    validate_query_set,
)

from conftest import FRI_1930, MON_0900

BIRTHDAY = Context.at(FRI_1930, "friends", group_size=4, intent_text="birthday celebration")
WORK = Context.at(MON_0900, "solo", intent_text="remote work")


class ScriptedBackend:
    """Returns canned responses in order and counts prompts."""

    def __init__(self, *responses):
        self.responses = list(responses)
        self.prompts = []

    def generate(self, prompt, temperature=0.0):
        self.prompts.append(prompt)
        r = self.responses.pop(0) if self.responses else "```json\n[]\n```"
        if isinstance(r, Exception):
            raise r
        return r


def _fenced(items):
    return "```json\n" + json.dumps(items) + "\n```"


class TestDiscretize:
    def test_birthday_friday_evening(self):
        assert discretize_context(BIRTHDAY).key == "evening|weekday|friends|celebration"

    def test_synonyms_share_a_cluster(self):
        assert canonical_intent("date night") == canonical_intent("romantic dinner") == "romance"
        assert canonical_intent("Anniversary dinner") == "celebration"
        assert canonical_intent("studying for exams") == "work"

    def test_unknown_intent_is_stemmed(self):
        assert canonical_intent("Watching matches") == "watch_match"
        assert canonical_intent(None) == canonical_intent("  ") == "general"

    @pytest.mark.parametrize("minute,part", [(299, DayPart.LATE_NIGHT), (300, DayPart.MORNING),
                                             (719, DayPart.MORNING), (720, DayPart.AFTERNOON),
                                             (1019, DayPart.AFTERNOON), (1020, DayPart.EVENING),
                                             (1319, DayPart.EVENING), (1320, DayPart.LATE_NIGHT)])
    def test_day_part_boundaries(self, minute, part):
        assert day_part_of(minute) is part

    def test_weekend_class(self):
        assert discretize_context(Context.at(FRI_1930 + 86400)).day_class.value == "weekend"


class TestGenerate:
    def test_birthday_queries_cover_seating_celebration_and_late_hours(self):
        qs = generate_queries(BIRTHDAY, QueryGenConfig(), RuleBackend())
        dims = {query_dimension(q.text) for q in qs}
        assert {"group_seating", "celebration", "late_hours"} <= dims
        assert [q.index for q in qs] == [1, 2, 3, 4, 5]

    def test_solo_work_queries_include_quiet_focus(self):
        qs = generate_queries(WORK, QueryGenConfig(), RuleBackend())
        assert any("quiet" in q.text and "focused" in q.text for q in qs)

    def test_distinct_context_types_give_distinct_sets(self):
        a = generate_queries(BIRTHDAY, QueryGenConfig(), RuleBackend())
        b = generate_queries(WORK, QueryGenConfig(), RuleBackend())
        assert not {q.text for q in a} & {q.text for q in b}

    def test_pure_function_of_context_type(self):
        other = Context.at(FRI_1930 + 7 * 86400 + 1800, "friends", intent_text="party")
        assert discretize_context(other) == discretize_context(BIRTHDAY)
        cfg = QueryGenConfig()
        assert generate_queries(other, cfg, RuleBackend()) == generate_queries(BIRTHDAY, cfg, RuleBackend())

    @pytest.mark.parametrize("k", [1, 3, 5, 8])
    def test_exactly_k_valid_queries(self, k):
        qs = generate_queries(BIRTHDAY, QueryGenConfig(k=k), RuleBackend())
        assert len(qs) == k
        assert validate_query_set(qs) == []

    def test_bad_candidates_are_filtered_and_reprompted(self):
        junk = _fenced([
            {"text": "Did this user enjoy it last time?", "grounding": ["review"]},          # isolation
            {"text": "Is there outdoor seating?", "grounding": []},                          # ungrounded
            {"text": "Is there outdoor seating?", "grounding": ["visual"]},
            {"text": "Is there outdoor seating?", "grounding": ["visual", "review"]},        # duplicate
        ])
        be = ScriptedBackend(junk, "not json at all")
        qs = generate_queries(BIRTHDAY, QueryGenConfig(k=5, fallback=True), be)
        assert qs[0].text == "Is there outdoor seating?"
        assert len(qs) == 5 and validate_query_set(qs) == []
        assert len(be.prompts) == 4  # first attempt plus three re-prompts
        assert "Is there outdoor seating?" in be.prompts[1]  # accepted queries are passed back to avoid

    def test_unavailable_backend_falls_back_to_template_bank(self):
        qs = generate_queries(BIRTHDAY, QueryGenConfig(), ScriptedBackend(BackendUnavailable("down")))
        assert qs == generate_queries(BIRTHDAY, QueryGenConfig(), RuleBackend())

    def test_unavailable_backend_without_fallback_raises(self):
        with pytest.raises(BackendUnavailable):
            generate_queries(BIRTHDAY, QueryGenConfig(fallback=False), ScriptedBackend(BackendUnavailable("down")))


class TestValidate:
    def test_well_formed_set(self):
        assert validate_query_set(fixed_queries(5)) == []

    def test_identical_queries_violate_orthogonality(self):
        q1 = AffordanceQuery(1, "Is it quiet?", frozenset({"review"}))
        q2 = AffordanceQuery(2, "Is it quiet?", frozenset({"review"}))
        v = validate_query_set([q1, q2])
        assert [(x.constraint, x.indices) for x in v] == [("orthogonality", (1, 2))]

    def test_empty_grounding_violates_groundability(self):
        q = type("Q", (), {"index": 1, "text": "Is it quiet?", "grounding": frozenset()})()
        v = validate_query_set([q])
        assert [x.constraint for x in v] == ["groundability"]

    def test_history_reference_violates_isolation(self):
        q = AffordanceQuery(1, "Is this the user's favourite spot?", frozenset({"review"}))
        assert [x.constraint for x in validate_query_set([q])] == ["isolation"]

    @given(st.text(), st.text())
    def test_jaccard_is_symmetric_and_bounded(self, a, b):
        assert jaccard(a, b) == jaccard(b, a)
        assert 0.0 <= jaccard(a, b) <= 1.0


def test_template_bank_has_disjoint_cells():
    bank = load_template_bank()
    cells = {k: {t for _, t in v} for k, v in bank.items()}
    assert any(not (cells[a] & cells[b]) for a in cells for b in cells if a < b)
    for rows in bank.values():
        for g, text in rows:
            assert g and query_dimension(text) is not None


def test_prompt_carries_context_type_and_k():
    ctype = ContextType.from_key("evening|weekday|friends|celebration")
    p = build_prompt(ctype, 7, avoid=["Is it loud?"])
    assert "evening|weekday|friends|celebration" in p and "7" in p and "Is it loud?" in p


def test_parse_accepts_object_form_and_drops_malformed_items():
    text = '{"queries": [{"text": "Is it quiet?", "grounding": ["review"]}, {"grounding": ["visual"]}, 5]}'
    assert parse_query_response(text) == [(frozenset({"review"}), "Is it quiet?")]
    assert parse_query_response(_fenced([{"text": "Q?", "grounding": ["smell"]}])) == [(frozenset(), "Q?")]
