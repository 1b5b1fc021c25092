import json
import urllib.error
import urllib.request

import pytest

from affrec.cot_engine import BackendUnavailable
from affrec.domain import Context, ValidationError
from affrec.pipeline import Recommender, ServiceConfig
from affrec.service import ServiceThread

from conftest import DAY, FRI_1930, MON_0900, checkin, make_poi

FRIDAY = Context.at(FRI_1930, "friends", group_size=4, intent_text="birthday celebration").to_dict()


def world(cfg=ServiceConfig(), backend=None):
    pois = {f"p{i}": make_poi(f"p{i}", image="A cosy room.", lat=40.73 + 0.001 * i) for i in range(5)}
    return Recommender(pois, [checkin("u", "p0", MON_0900 - DAY)], cfg, backend, start_prefetch=False)


def call(base, path, body=None, raw=None):
    data = raw if raw is not None else (json.dumps(body).encode() if body is not None else None)
    req = urllib.request.Request(base + path, data=data, method="POST" if data is not None else "GET",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=10) as r:
            return r.status, json.loads(r.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


@pytest.fixture
def svc():
    rec = world()
    with ServiceThread(rec) as s:
        yield s.url, rec
    rec.close()


def test_recommend_and_metrics(svc):
    url, _ = svc
    st, out = call(url, "/recommend", {"user_id": "u", "context": FRIDAY, "n": 3})
    assert st == 200 and len(out["ranked"]) == 3
    assert out["context_type"] == "evening|weekday|friends|celebration"
    assert out["weights_source"] == "uniform_fallback"
    assert "score =" in out["ranked"][0]["explanation"]
    st, m = call(url, "/metrics")
    assert st == 200 and m["misses"] == 5 and m["inferences"] == 5
    assert call(url, "/health") == (200, {"status": "ok"})


@pytest.mark.parametrize("body,status", [
    ({"user_id": "u", "context": {"timestamp": "soon"}}, 400),
    ({"user_id": "u", "context": FRIDAY, "candidate_poi_ids": []}, 400),
    ({"user_id": "u", "context": FRIDAY, "n": 0}, 400),
    ({"context": FRIDAY}, 400),
    ({"user_id": "ghost", "context": FRIDAY}, 404),
    ({"user_id": "u", "context": FRIDAY, "candidate_poi_ids": ["p0", "nope"]}, 404),
])
def test_recommend_errors(svc, body, status):
    st, out = call(svc[0], "/recommend", body)
    assert st == status and "error" in out


def test_transport_errors(svc):
    url, _ = svc
    assert call(url, "/recommend", raw=b"{not json")[0] == 400
    assert call(url, "/recommend", raw=b"[1, 2]")[0] == 400
    assert call(url, "/nowhere")[0] == 404
    assert call(url, "/recommend")[0] == 405


def test_invalidate(svc):
    url, rec = svc
    call(url, "/recommend", {"user_id": "u", "context": FRIDAY, "candidate_poi_ids": ["p1"]})
    assert call(url, "/admin/invalidate", {"poi_id": "p1"}) == (200, {"evicted": 1})
    assert call(url, "/admin/invalidate", {"poi_id": "p1"}) == (200, {"evicted": 0})
    assert call(url, "/admin/invalidate", {"poi_id": "zz"})[0] == 404
    assert call(url, "/admin/invalidate", {"poi_id": "p1", "metadata": {"price_tier": 9}})[0] == 400


def test_prefetch(svc):
    url, rec = svc
    body = {"user_id": "u", "trajectory": [["p2", FRI_1930 - 60]], "context": FRIDAY}
    st, out = call(url, "/prefetch", body)
    assert st == 200 and out["enqueued"] == 5
    assert call(url, "/prefetch", body)[1]["enqueued"] == 0
    assert call(url, "/prefetch", {"trajectory": []})[0] == 400
    assert call(url, "/prefetch", {"trajectory": [["zz", 1.0]]})[0] == 404


class Down:
    def answer(self, *a, **k):
        raise BackendUnavailable("connection refused")

    def generate(self, *a, **k):
        raise BackendUnavailable("connection refused")


def test_fail_closed_gives_503_and_fail_open_degrades():
    closed = world(ServiceConfig(fail_mode="closed"), Down())
    opened = world(ServiceConfig(fail_mode="open"), Down())
    try:
        with ServiceThread(closed) as s:
            st, out = call(s.url, "/recommend", {"user_id": "u", "context": FRIDAY})
            assert st == 503 and "backend unavailable" in out["error"]
        with ServiceThread(opened) as s:
            st, out = call(s.url, "/recommend", {"user_id": "u", "context": FRIDAY})
            assert st == 200 and all(r["score"] == 0.0 for r in out["ranked"])
        # error representations are never cached
        assert len(opened.cache) == 0
    finally:
        closed.close()
        opened.close()


class TestConfig:
    def test_precedence(self, tmp_path):
        f = tmp_path / "affrec.conf"
        f.write_text("alpha = 0.3  # from file\nk = 4\nfail_mode = closed\n")
        env = {"AFFREC_ALPHA": "0.7", "AFFREC_K": "6", "HOME": "/x"}
        cfg = ServiceConfig.load(f, env, {"alpha": 0.9, "k": None})
        assert (cfg.alpha, cfg.k, cfg.fail_mode, cfg.backend) == (0.9, 6, "closed", "rule")
        assert ServiceConfig.load(f, {}).alpha == 0.3

    @pytest.mark.parametrize("raw", [{"colour": "red"}, {"k": "five"}, {"alpha": "0"}, {"backend": "remote"},
                                     {"fail_mode": "maybe"}, {"ablation": "A99"}])
    def test_rejects_bad_values(self, raw):
        with pytest.raises(ValidationError):
            ServiceConfig.load(None, {}, raw)

    def test_malformed_file(self, tmp_path):
        f = tmp_path / "bad.conf"
        f.write_text("alpha 0.3\n")
        with pytest.raises(ValidationError):
            ServiceConfig.load(f, {})
