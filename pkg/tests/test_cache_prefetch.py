import threading

import pytest

from affrec.cache_prefetch import AffordanceCache, Prefetcher, QuerySetCache, project_position
from affrec.domain import Answer, Context, GeoPoint, Metadata, OpeningHours
from affrec.lexicon import query_dimension
from affrec.pipeline import Recommender, ServiceConfig
from affrec.querygen import discretize_context

from conftest import DAY, FRI_1930, MON_0900, SAT_1930, checkin, make_poi

FRIDAY = Context.at(FRI_1930, "friends", group_size=4, intent_text="birthday celebration")


@pytest.fixture
def plain(monkeypatch):
    """The cache round-trips values through encode/decode; make that trivial for plain strings."""
    import affrec.cache_prefetch as cp
    monkeypatch.setattr(cp, "encode", lambda rep: repr(rep))
    monkeypatch.setattr(cp, "decode", lambda text: text)
    return AffordanceCache


class TestCache:
    def test_lru_eviction(self, plain):
        c = plain(capacity=2)
        c.get_or_infer(("a", "t"), lambda: "A")
        c.get_or_infer(("b", "t"), lambda: "B")
        c.get_or_infer(("a", "t"), lambda: "A")
        c.get_or_infer(("c", "t"), lambda: "C")
        assert c.contains(("a", "t")) and c.contains(("c", "t")) and not c.contains(("b", "t"))
        assert c.evictions == 1 and len(c) == 2

    def test_ttl(self, plain):
        now = [0.0]
        c = plain(ttl_s=10, clock=lambda: now[0])
        c.get_or_infer(("a", "t"), lambda: "A")
        now[0] = 5.0
        assert c.get_or_infer(("a", "t"), lambda: "X") == ("'A'", True)
        now[0] = 20.0
        assert c.get_or_infer(("a", "t"), lambda: "X") == ("'X'", False)

    def test_invalidate_counts(self, plain):
        c = plain()
        for t in ("t1", "t2", "t3"):
            c.get_or_infer(("p", t), lambda: "P")
        c.get_or_infer(("q", "t1"), lambda: "Q")
        assert c.invalidate("p") == 3
        assert c.invalidate("never") == 0
        assert len(c) == 1 and c.version("p") == 1

    def test_failure_reaches_every_waiter_and_caches_nothing(self, plain):
        c = plain()
        gate, started = threading.Event(), threading.Event()
        calls = []

        def boom():
            calls.append(1)
            started.set()
            gate.wait(5)
            raise RuntimeError("backend exploded")

        errors = []

        def call():
            try:
                c.get_or_infer(("p", "t"), boom)
            except RuntimeError as e:
                errors.append(e)

        owner = threading.Thread(target=call)
        owner.start()
        started.wait(5)
        waiters = [threading.Thread(target=call) for _ in range(5)]
        for t in waiters:
            t.start()
        while sum(1 for t in waiters if t.is_alive()) and c.misses < 6:
            pass
        gate.set()
        for t in [owner] + waiters:
            t.join(5)
        assert len(calls) == 1 and len(errors) == 6 and len(c) == 0
        assert c.get_or_infer(("p", "t"), lambda: "ok") == ("'ok'", False)

    def test_invalidation_during_inference_is_not_stored(self, plain):
        c = plain()

        def infer():
            c.invalidate("p")
            return "old"

        rep, hit = c.get_or_infer(("p", "t"), infer)
        assert rep == "'old'" and not hit and not c.contains(("p", "t"))

    def test_uncacheable_results_are_returned_but_not_kept(self, plain):
        c = plain()
        assert c.get_or_infer(("p", "t"), lambda: "E", cacheable=lambda r: False) == ("'E'", False)
        assert len(c) == 0

    def test_prefetch_does_not_count(self, plain):
        c = plain()
        c.get_or_infer(("p", "t"), lambda: "P", prefetch=True)
        assert (c.hits, c.misses, c.prefetch_inferences, c.inferences) == (0, 0, 1, 0)
        c.get_or_infer(("p", "t"), lambda: "P")
        assert c.hit_rate == 1.0

    def test_capacity_must_be_positive(self):
        with pytest.raises(ValueError):
            AffordanceCache(0)


def test_query_sets_are_generated_once():
    qc = QuerySetCache()
    ct = discretize_context(FRIDAY)
    n = []
    assert qc.get_or_generate(ct, lambda: n.append(1) or ["q"]) == (["q"], False)
    assert qc.get_or_generate(ct, lambda: n.append(1) or ["x"]) == (["q"], True)
    assert len(n) == 1 and len(qc) == 1


class TestProjection:
    def test_linear_extrapolation(self):
        pts = [(GeoPoint(40.0, -74.0), 0.0), (GeoPoint(40.01, -74.0), 600.0)]
        p = project_position(pts, 600.0, 600.0)
        assert p.lat == pytest.approx(40.02) and p.lon == pytest.approx(-74.0)

    def test_degenerate_inputs(self):
        a = GeoPoint(40.0, -74.0)
        assert project_position([], 0, 60) is None
        assert project_position([(a, 5.0)], 100.0, 720.0) == a
        assert project_position([(GeoPoint(41, -74), 5.0), (a, 5.0)], 5.0, 720.0) == a


def small_world(n=5, **cfg):
    pois = {f"p{i}": make_poi(f"p{i}", image="A cosy room.", lat=40.73 + 0.001 * i) for i in range(n)}
    pois["far"] = make_poi("far", lat=41.5)
    rec = Recommender(pois, [checkin("u", "p0", MON_0900 - DAY)], ServiceConfig(**cfg), start_prefetch=False)
    return rec


class TestPrefetch:
    def test_stationary_user_then_dedup_then_all_hits(self):
        rec = small_world()
        try:
            tasks = rec.prefetch("u", [("p2", FRI_1930 - 60)], FRI_1930, FRIDAY)
            assert sorted(t.poi_id for t in tasks) == [f"p{i}" for i in range(5)]
            assert tasks == sorted(tasks)
            assert rec.prefetch("u", [("p2", FRI_1930 - 60)], FRI_1930, FRIDAY) == []
            rec.prefetcher.start()
            assert rec.prefetcher.drain(10)
            out = rec.recommend("u", FRIDAY, [f"p{i}" for i in range(5)], n=3)
            assert (out.cache_hits, out.misses) == (5, 0)
            assert rec.cache.inferences == 0 and rec.cache.prefetch_inferences == 5
        finally:
            rec.close()

    def test_cached_keys_are_skipped(self):
        rec = small_world()
        try:
            rec.recommend("u", FRIDAY, ["p0", "p1"])
            tasks = rec.prefetch("u", [("p2", FRI_1930 - 60)], FRI_1930, FRIDAY)
            assert sorted(t.poi_id for t in tasks) == ["p2", "p3", "p4"]
        finally:
            rec.close()

    def test_radius(self):
        pf = Prefetcher(AffordanceCache(), {"a": GeoPoint(0, 0), "b": GeoPoint(0, 0.017), "c": GeoPoint(0, 0.019)},
                        lambda p, c: None, autostart=False)
        assert [p for p, _ in pf.candidates(GeoPoint(0, 0))] == ["a", "b"]


def late_verdict(rec, pid):
    ctype = discretize_context(FRIDAY)
    rep, _ = rec.representation(pid, ctype)
    [(q, v)] = [(q, v) for q, v in rep.entries if query_dimension(q.text) == "late_hours"]
    return v.answer


def test_hours_change_invalidates_and_flips_late_hours():
    rec = small_world()
    try:
        old = rec.store["p1"].content.metadata
        rec.invalidate("p1", Metadata(old.category, old.price_tier, OpeningHours.daily(17 * 60, 18 * 60),
                                      old.location, old.review_count))
        assert late_verdict(rec, "p1") is Answer.NO
        assert rec.representation("p1", discretize_context(FRIDAY))[1]
        assert rec.invalidate("p1", Metadata(old.category, old.price_tier, OpeningHours.daily(17 * 60, 23 * 60),
                                             old.location, old.review_count)) == 1
        assert late_verdict(rec, "p1") is Answer.YES
    finally:
        rec.close()


def test_replay_is_identical_with_and_without_cache():
    rec, cold = small_world(), small_world()
    try:
        ctxs = [FRIDAY, Context.at(SAT_1930, "solo"), FRIDAY, Context.at(MON_0900, "family", group_size=3)]
        warm = [rec.recommend("u", c).to_dict()["ranked"] for c in ctxs]
        fresh = []
        for c in ctxs:
            cold.cache.clear()
            fresh.append(cold.recommend("u", c).to_dict()["ranked"])
        assert warm == fresh and rec.cache.hits > 0
    finally:
        rec.close()
        cold.close()
