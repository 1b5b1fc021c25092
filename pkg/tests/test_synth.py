import pytest

from affrec.synth import SCENARIOS, START, WINDOW_DAYS, DAY, generate_synthetic_corpus


def small(seed):
    return generate_synthetic_corpus(seed, n_users=12, n_pois=60, n_checkins=400)


def test_same_seed_same_corpus():
    a, b = small(3), small(3)
    assert a.pois == b.pois and a.checkins == b.checkins and a.profiles == b.profiles


def test_different_seeds_differ():
    assert small(3).checkins != small(4).checkins


def test_minimum_sizes():
    with pytest.raises(ValueError):
        generate_synthetic_corpus(0, n_users=9)
    with pytest.raises(ValueError):
        generate_synthetic_corpus(0, n_pois=49)


def test_shape():
    s = small(5)
    assert len(s.pois) == 60 and len(s.checkins) == 400
    assert len({c.user_id for c in s.checkins}) <= 12
    assert all(START <= c.timestamp < START + WINDOW_DAYS * DAY for c in s.checkins)
    assert set(s.profiles) == {(p, sc.key) for p in s.pois for sc in SCENARIOS}
    for poi in s.pois.values():
        ts = [r.created_at for r in poi.content.reviews]
        assert ts == sorted(ts)
    for values in s.profiles.values():
        assert all(0.0 <= v <= 1.0 for v in values.values())
