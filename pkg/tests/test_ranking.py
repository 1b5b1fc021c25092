import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from affrec.cot_engine import RuleBackend, infer_affordance
from affrec.domain import Context, LengthMismatch
from affrec.ranking import (
    COMPROMISE_LOSS,
    StaticBilinearModel,
    demonstrate_impossibility,
    explanation_json,
    rank_of,
    render_explanation,
    score,
    top_n,
    top_n_arrays,
)

from conftest import DAY, MON_0900, make_poi, query

MONDAY = Context.at(MON_0900, "solo", intent_text="remote work")


def test_score_by_hand():
    assert score([0.2, 0.3, 0.5], [1.0, 0.5, 0.0]) == pytest.approx(0.35)
    with pytest.raises(LengthMismatch):
        score([0.5, 0.5], [1.0])


def test_ties_break_on_ascending_id():
    got = top_n([("b", 0.5), ("a", 0.5), ("c", 0.9), ("d", 0.1)], 3)
    assert [r.poi_id for r in got] == ["c", "a", "b"]
    with pytest.raises(ValueError):
        top_n([("a", 1.0)], 0)


@given(st.lists(st.integers(0, 5), min_size=1, max_size=60), st.integers(1, 70))
def test_array_selection_matches_heap_selection(levels, n):
    ids = [f"p{i:03d}" for i in range(len(levels))]
    scores = np.array(levels, dtype=np.float64) / 5.0
    a = top_n(list(zip(ids, scores.tolist())), n)
    b = top_n_arrays(ids, scores, n)
    assert [(r.poi_id, r.score) for r in a] == [(r.poi_id, r.score) for r in b]
    order = [r.poi_id for r in top_n(list(zip(ids, scores.tolist())), len(ids))]
    for i in range(len(ids)):
        assert rank_of(i, ids, scores) == order.index(ids[i]) + 1


def test_explanation_shows_the_uncertainty_adjustment():
    poi = make_poi(image="A serene reading-room.", reviews=[("Construction noise all day.", MON_0900 - DAY)])
    q = query("Does visual evidence suggest a quiet, well-lit focused atmosphere?")
    rep = infer_affordance([q], poi.content, MONDAY, RuleBackend(), poi_id="p1")
    text = render_explanation(rep, [1.0])
    assert "uncertainty adjustment: 0.5 × 0.71 = 0.36" in text
    assert "conflict:" in text and "evidence [review]" in text
    assert text.splitlines()[-1] == "score = 1.00×0.36 = 0.36"
    obj = explanation_json(rep, [1.0])
    assert obj["score"] == "0.355000" and obj["weights"] == ["1.000000"]


def test_static_model_scores_unseen_items_zero():
    m = StaticBilinearModel({"a": np.array([1.0, 0.0])}, lambda u, c: np.array([2.0, 3.0]), np.eye(2))
    assert m.score("u", None, "a") == 2.0
    assert m.score("u", None, "zzz") == 0.0
    assert m.score_all("u", None, ["a", "zzz"]).tolist() == [2.0, 0.0]
    with pytest.raises(LengthMismatch):
        StaticBilinearModel({"a": np.zeros(3)}, lambda u, c: np.zeros(2), np.eye(2))


@pytest.mark.parametrize("d", [2, 3, 10, 257])
def test_static_compromise_is_dimension_free(d):
    r = demonstrate_impossibility(d)
    assert r.compromise_loss == pytest.approx(COMPROMISE_LOSS, abs=1e-12)
    assert np.linalg.norm(r.static_vector) == pytest.approx(1.0)


def test_impossibility_input_checks():
    with pytest.raises(ValueError):
        demonstrate_impossibility(1)
    with pytest.raises(ValueError):
        demonstrate_impossibility(3, np.ones((2, 3)))
