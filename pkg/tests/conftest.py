import pytest

from affrec.domain import (
    AffordanceQuery,
    CheckIn,
    Context,
    GeoPoint,
    Metadata,
    MultimodalContent,
    OpeningHours,
    Poi,
    Review,
)

MON_0900 = 1704099600.0   # 2024-01-01 09:00 UTC, Monday
FRI_1930 = 1704483000.0   # 2024-01-05 19:30 UTC, Friday
SAT_1930 = 1704569400.0   # 2024-01-06 19:30 UTC, Saturday
DAY = 86400.0


def hours(open_min=0, close_min=1440, days=range(7)):
    return OpeningHours(tuple(((open_min, close_min),) if d in days else () for d in range(7)))


def make_poi(pid="p1", image="", reviews=(), tier=2, hrs=None, lat=40.73, lon=-73.99, review_count=None,
             category="restaurant"):
    rs = tuple(r if isinstance(r, Review) else Review(r[0], float(r[1])) for r in reviews)
    rs = tuple(sorted(rs, key=lambda r: r.created_at))
    meta = Metadata(category, tier, hrs or hours(), GeoPoint(lat, lon),
                    len(rs) if review_count is None else review_count)
    return Poi(pid, MultimodalContent(image, rs, meta))


def query(text, index=1, grounding=("visual", "review")):
    return AffordanceQuery(index, text, frozenset(grounding))


def checkin(user, poi, ts, social="solo", **kw):
    return CheckIn(user, poi, ts, Context.at(ts, social, **kw))


@pytest.fixture(scope="session")
def seed0():
    """The default synthetic corpus with its evaluation engine (built once per run)."""
    from affrec.data_eval import Corpus, Engine
    from affrec.synth import generate_synthetic_corpus

    corpus = Corpus.from_synthetic(generate_synthetic_corpus(0))
    return corpus, Engine(corpus)


CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        CRITERIA[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
