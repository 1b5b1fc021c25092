import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affrec.domain import (
    AffordanceQuery,
    AffordanceRepresentation,
    Answer,
    CheckIn,
    Context,
    ContextType,
    DayOfWeek,
    GeoPoint,
    LengthMismatch,
    Metadata,
    OpeningHours,
    PreferenceSource,
    PreferenceVector,
    Review,
    ValidationError,
    Verdict,
    haversine_km,
)
from affrec.querygen import discretize_context

from conftest import FRI_1930, hours

points = st.builds(GeoPoint, st.floats(-90, 90), st.floats(-180, 180))


def _reference_haversine(lat1, lon1, lat2, lon2):
    """Textbook formula written out independently (atan2 form)."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 6371.0 * 2 * math.atan2(math.sqrt(a), math.sqrt(1 - a))


class TestHaversine:
    def test_identity(self):
        x = GeoPoint(40.7, -74.0)
        assert haversine_km(x, x) == 0.0

    def test_one_degree_of_longitude_on_the_equator(self):
        assert haversine_km(GeoPoint(0, 0), GeoPoint(0, 1)) == pytest.approx(6371 * math.pi / 180, abs=1e-9)
        assert abs(haversine_km(GeoPoint(0, 0), GeoPoint(0, 1)) - 111.19) < 0.01

    def test_manhattan_pair_against_reference(self):
        a, b = GeoPoint(40.7128, -74.0060), GeoPoint(40.7589, -73.9851)
        assert abs(haversine_km(a, b) - _reference_haversine(40.7128, -74.0060, 40.7589, -73.9851)) < 0.01

    @given(points, points)
    def test_symmetric_bitwise(self, a, b):
        assert haversine_km(a, b) == haversine_km(b, a)
        assert haversine_km(a, b) >= 0

    @settings(max_examples=300)
    @given(points, points, points)
    def test_triangle_inequality(self, a, b, c):
        assert haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-9

    def test_out_of_range_coordinates_rejected(self):
        with pytest.raises(ValidationError):
            GeoPoint(91, 0)
        with pytest.raises(ValidationError):
            GeoPoint(0, -180.5)


class TestContext:
    def test_group_size_only_for_group_situations(self):
        Context.at(FRI_1930, "friends", group_size=4)
        with pytest.raises(ValidationError):
            Context.at(FRI_1930, "solo", group_size=2)
        with pytest.raises(ValidationError):
            Context.at(FRI_1930, "friends", group_size=0)

    def test_trajectory_must_increase_and_precede_timestamp(self):
        Context.at(FRI_1930, trajectory=[("a", FRI_1930 - 60), ("b", FRI_1930)])
        with pytest.raises(ValidationError):
            Context.at(FRI_1930, trajectory=[("a", FRI_1930 - 60), ("b", FRI_1930 - 60)])
        with pytest.raises(ValidationError):
            Context.at(FRI_1930, trajectory=[("a", FRI_1930 + 1)])

    def test_unknown_social_situation_is_a_typed_error(self):
        with pytest.raises(ValidationError):
            Context.at(FRI_1930, "crowd")

    def test_round_trip_through_dict(self):
        c = Context.at(FRI_1930, "friends", group_size=4, intent_text="birthday celebration",
                       trajectory=[("p1", FRI_1930 - 600)])
        assert Context.from_dict(c.to_dict()) == c

    def test_day_of_week_accepts_labels(self):
        c = Context(FRI_1930, "Fri", "solo")
        assert c.day_of_week is DayOfWeek.FRI
        with pytest.raises(ValidationError):
            Context(FRI_1930, "Funday", "solo")

    def test_from_dict_rejects_missing_timestamp(self):
        with pytest.raises(ValidationError):
            Context.from_dict({"social_situation": "solo"})

    @given(st.integers(0, 2 * 10**9), st.sampled_from(["solo", "friends", "family", "date", "group"]))
    def test_discretization_is_a_total_deterministic_function(self, ts, social):
        c = Context.at(float(ts), social)
        t = discretize_context(c)
        assert all(discretize_context(c) == t for _ in range(20))
        assert ContextType.from_key(t.key) == t


def test_context_type_mapping_is_stable_over_many_calls():
    c = Context.at(FRI_1930, "friends", group_size=4, intent_text="birthday celebration")
    first = discretize_context(c)
    assert all(discretize_context(c) == first for _ in range(10_000))


def test_checkin_requires_matching_context_timestamp():
    with pytest.raises(ValidationError):
        CheckIn("u", "p", FRI_1930, Context.at(FRI_1930 + 1))


def test_review_and_metadata_constraints():
    with pytest.raises(ValidationError):
        Review("   ", 0.0)
    with pytest.raises(ValidationError):
        Review("fine", 0.0, rating=6)
    with pytest.raises(ValidationError):
        Metadata("cafe", 5, hours(), GeoPoint(0, 0))
    with pytest.raises(ValidationError):
        Metadata("cafe", 2, hours(), GeoPoint(0, 0), review_count=-1)


def test_metadata_round_trip():
    m = Metadata("bar", 3, hours(17 * 60, 26 * 60, days=(4, 5)), GeoPoint(40.7, -74.0), 12)
    assert Metadata.from_dict(m.to_dict()) == m


def test_query_requires_grounding():
    with pytest.raises(ValidationError):
        AffordanceQuery(1, "Is it quiet?", frozenset())
    with pytest.raises(ValueError):
        AffordanceQuery(1, "Is it quiet?", frozenset({"smell"}))


def test_conflict_forces_uncertain():
    Verdict(Answer.UNCERTAIN, 0.71, conflict="image vs reviews")
    with pytest.raises(ValidationError):
        Verdict(Answer.YES, 0.71, conflict="image vs reviews")
    with pytest.raises(ValidationError):
        Verdict(Answer.YES, 1.2)


def test_representation_lengths_must_agree():
    q = AffordanceQuery(1, "Is it quiet?", frozenset({"review"}))
    ctype = discretize_context(Context.at(FRI_1930))
    with pytest.raises(LengthMismatch):
        AffordanceRepresentation("p", ctype, ((q, Verdict(Answer.YES, 0.8)),), (0.8, 0.1))
    with pytest.raises(ValidationError):
        AffordanceRepresentation("p", ctype, ((q, Verdict(Answer.YES, 0.8)),), (1.5,))


def test_preference_vector_must_be_on_the_simplex():
    PreferenceVector((0.25, 0.75), PreferenceSource.ESTIMATED)
    with pytest.raises(ValidationError):
        PreferenceVector((0.5, 0.6), PreferenceSource.ESTIMATED)
    with pytest.raises(ValidationError):
        PreferenceVector((1.5, -0.5), PreferenceSource.ESTIMATED)


class TestOpeningHours:
    def test_past_midnight_interval_spills_into_next_day(self):
        bar = OpeningHours.daily(17 * 60, 26 * 60, closed_days=("Sun",))
        assert bar.is_open(DayOfWeek.FRI, 23 * 60)
        assert bar.is_open(DayOfWeek.SAT, 90)          # 01:30 after Friday night
        assert not bar.is_open(DayOfWeek.SAT, 2 * 60)  # closes at 02:00 sharp
        assert not bar.is_open(DayOfWeek.MON, 90)      # Sunday was closed

    def test_invalid_intervals_rejected(self):
        with pytest.raises(ValidationError):
            OpeningHours.daily(600, 600)
        with pytest.raises(ValidationError):
            OpeningHours.daily(600, 2881)
        with pytest.raises(ValidationError):
            OpeningHours((((600, 800), (700, 900)),) + ((),) * 6)

    def test_round_trip(self):
        h = OpeningHours.daily(8 * 60, 16 * 60, closed_days=("Mon", "Tue"))
        assert OpeningHours.from_dict(h.to_dict()) == h
