"""Core data model: contexts, POIs and their multimodal content, verdicts and
representations.

All types are frozen dataclasses validated in ``__post_init__``; an invalid
field raises :class:`ValidationError` rather than being clamped.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

EARTH_RADIUS_KM = 6371.0


class ValidationError(ValueError):
    """Raised when a domain object is constructed with invalid fields."""


class LengthMismatch(ValueError):
    """Raised when vectors that must share the query dimension K disagree."""


class DayOfWeek(enum.IntEnum):
    MON = 0
    TUE = 1
    WED = 2
    THU = 3
    FRI = 4
    SAT = 5
    SUN = 6

    @classmethod
    def parse(cls, value) -> "DayOfWeek":
        if isinstance(value, DayOfWeek):
            return value
        if isinstance(value, int):
            return cls(value)
        key = str(value).strip().upper()[:3]
        try:
            return cls[key]
        except KeyError:
            raise ValidationError(f"unknown day_of_week {value!r}") from None

    @property
    def label(self) -> str:
        return self.name.capitalize()


class SocialSituation(str, enum.Enum):
    SOLO = "solo"
    FRIENDS = "friends"
    FAMILY = "family"
    DATE = "date"
    GROUP = "group"


GROUP_SIZED = {SocialSituation.FRIENDS, SocialSituation.FAMILY, SocialSituation.GROUP}


class DayPart(str, enum.Enum):
    MORNING = "morning"
    AFTERNOON = "afternoon"
    EVENING = "evening"
    LATE_NIGHT = "late_night"


class DayClass(str, enum.Enum):
    WEEKDAY = "weekday"
    WEEKEND = "weekend"


class Answer(str, enum.Enum):
    YES = "yes"
    NO = "no"
    UNCERTAIN = "uncertain"


class Modality(str, enum.Enum):
    VISUAL = "visual"
    REVIEW = "review"
    METADATA = "metadata"


class PreferenceSource(str, enum.Enum):
    ESTIMATED = "estimated"
    UNIFORM_FALLBACK = "uniform_fallback"
    BM25 = "bm25"
    TRAINED = "trained"


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def minute_of_day(timestamp: float) -> int:
    """Minutes since midnight (UTC is treated as local time)."""
    dt = datetime.fromtimestamp(timestamp, tz=timezone.utc)
    return dt.hour * 60 + dt.minute


def weekday_of(timestamp: float) -> DayOfWeek:
    return DayOfWeek(datetime.fromtimestamp(timestamp, tz=timezone.utc).weekday())


@dataclass(frozen=True)
class Context:
    timestamp: float
    day_of_week: DayOfWeek
    social_situation: SocialSituation
    group_size: Optional[int] = None
    trajectory: tuple = ()
    intent_text: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "day_of_week", DayOfWeek.parse(self.day_of_week))
        try:
            social = SocialSituation(self.social_situation)
        except ValueError:
            raise ValidationError(f"unknown social_situation {self.social_situation!r}") from None
        object.__setattr__(self, "social_situation", social)
        _check(math.isfinite(self.timestamp), "timestamp must be finite")
        if self.group_size is not None:
            _check(social in GROUP_SIZED,
                   f"group_size only allowed for {sorted(s.value for s in GROUP_SIZED)}")
            _check(int(self.group_size) == self.group_size and self.group_size >= 1,
                   "group_size must be a positive integer")
        traj = tuple((str(p), float(t)) for p, t in self.trajectory)
        for (_, t0), (_, t1) in zip(traj, traj[1:]):
            _check(t0 < t1, "trajectory timestamps must be strictly increasing")
        if traj:
            _check(traj[-1][1] <= self.timestamp, "trajectory must not extend past the context timestamp")
        object.__setattr__(self, "trajectory", traj)

    @property
    def minute(self) -> int:
        return minute_of_day(self.timestamp)

    @classmethod
    def at(cls, timestamp: float, social_situation="solo", **kw) -> "Context":
        """Build a context whose day_of_week is taken from the timestamp."""
        return cls(timestamp=timestamp, day_of_week=weekday_of(timestamp),
                   social_situation=social_situation, **kw)

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "day_of_week": self.day_of_week.label,
            "social_situation": self.social_situation.value,
            "group_size": self.group_size,
            "trajectory": [[p, t] for p, t in self.trajectory],
            "intent_text": self.intent_text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Context":
        if not isinstance(d, dict):
            raise ValidationError("context must be an object")
        try:
            return cls(
                timestamp=float(d["timestamp"]),
                day_of_week=d["day_of_week"] if d.get("day_of_week") is not None
                else weekday_of(float(d["timestamp"])),
                social_situation=d.get("social_situation", "solo"),
                group_size=d.get("group_size"),
                trajectory=tuple(tuple(x) for x in d.get("trajectory") or ()),
                intent_text=d.get("intent_text"),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed context: {exc}") from None


@dataclass(frozen=True, order=True)
class ContextType:
    day_part: DayPart
    day_class: DayClass
    social_situation: SocialSituation
    intent_cluster: str

    def __post_init__(self):
        object.__setattr__(self, "day_part", DayPart(self.day_part))
        object.__setattr__(self, "day_class", DayClass(self.day_class))
        object.__setattr__(self, "social_situation", SocialSituation(self.social_situation))
        _check(bool(self.intent_cluster), "intent_cluster must be non-empty")

    @property
    def key(self) -> str:
        return "|".join((self.day_part.value, self.day_class.value,
                         self.social_situation.value, self.intent_cluster))

    @classmethod
    def from_key(cls, key: str) -> "ContextType":
        parts = key.split("|")
        _check(len(parts) == 4, f"bad context-type key {key!r}")
        return cls(*parts)

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        _check(-90.0 <= self.lat <= 90.0, f"lat out of range: {self.lat}")
        _check(-180.0 <= self.lon <= 180.0, f"lon out of range: {self.lon}")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km on a sphere of radius 6371 km."""
    # order-independent form so that d(a, b) == d(b, a) bit-for-bit
    if (a.lat, a.lon) > (b.lat, b.lon):
        a, b = b, a
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class Review:
    text: str
    created_at: float
    rating: Optional[int] = None

    def __post_init__(self):
        _check(isinstance(self.text, str) and self.text.strip() != "", "review text must be non-empty")
        if self.rating is not None:
            _check(self.rating in (1, 2, 3, 4, 5), f"rating must be 1..5, got {self.rating}")

    def to_dict(self) -> dict:
        return {"text": self.text, "created_at": self.created_at, "rating": self.rating}

    @classmethod
    def from_dict(cls, d: dict) -> "Review":
        return cls(text=d["text"], created_at=float(d["created_at"]), rating=d.get("rating"))


@dataclass(frozen=True)
class OpeningHours:
    """Per-day lists of (open_minute, close_minute); close may exceed 1440."""

    days: tuple = ((),) * 7

    def __post_init__(self):
        _check(len(self.days) == 7, "opening hours need exactly 7 days")
        norm = []
        for intervals in self.days:
            ivs = tuple(sorted((int(o), int(c)) for o, c in intervals))
            for o, c in ivs:
                _check(0 <= o < c <= 2880, f"bad interval ({o}, {c})")
            for (_, c0), (o1, _) in zip(ivs, ivs[1:]):
                _check(c0 <= o1, "intervals within a day must not overlap")
            norm.append(ivs)
        object.__setattr__(self, "days", tuple(norm))

    @classmethod
    def daily(cls, open_minute: int, close_minute: int, closed_days=()) -> "OpeningHours":
        closed = {DayOfWeek.parse(d) for d in closed_days}
        return cls(tuple(() if DayOfWeek(i) in closed else ((open_minute, close_minute),)
                         for i in range(7)))

    def is_open(self, day: DayOfWeek, minute: int) -> bool:
        day = DayOfWeek.parse(day)
        if any(o <= minute < c for o, c in self.days[day]):
            return True
        # spill-over from the previous day's past-midnight interval
        prev = self.days[(day - 1) % 7]
        return any(c > 1440 and minute + 1440 < c for _, c in prev)

    def to_dict(self) -> dict:
        return {DayOfWeek(i).label.lower(): [list(iv) for iv in ivs] for i, ivs in enumerate(self.days)}

    @classmethod
    def from_dict(cls, d: dict) -> "OpeningHours":
        return cls(tuple(tuple(tuple(iv) for iv in d.get(DayOfWeek(i).label.lower(), []))
                         for i in range(7)))


@dataclass(frozen=True)
class Metadata:
    category: str
    price_tier: int
    hours: OpeningHours
    location: GeoPoint
    review_count: int = 0

    def __post_init__(self):
        _check(self.price_tier in (1, 2, 3, 4), f"price_tier must be 1..4, got {self.price_tier}")
        _check(int(self.review_count) == self.review_count and self.review_count >= 0,
               "review_count must be a non-negative integer")

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "price_tier": self.price_tier,
            "hours": self.hours.to_dict(),
            "location": {"lat": self.location.lat, "lon": self.location.lon},
            "review_count": self.review_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Metadata":
        return cls(
            category=d["category"],
            price_tier=int(d["price_tier"]),
            hours=OpeningHours.from_dict(d.get("hours", {})),
            location=GeoPoint(float(d["location"]["lat"]), float(d["location"]["lon"])),
            review_count=int(d.get("review_count", 0)),
        )


@dataclass(frozen=True)
class MultimodalContent:
    image_description: str
    reviews: tuple
    metadata: Metadata

    def __post_init__(self):
        object.__setattr__(self, "reviews", tuple(self.reviews))
        for r in self.reviews:
            _check(isinstance(r, Review), "reviews must be Review instances")


@dataclass(frozen=True)
class Poi:
    poi_id: str
    content: MultimodalContent

    @property
    def location(self) -> GeoPoint:
        return self.content.metadata.location

    def to_dict(self, with_reviews: bool = False) -> dict:
        d = {
            "poi_id": self.poi_id,
            "image_description": self.content.image_description,
            "metadata": self.content.metadata.to_dict(),
        }
        if with_reviews:
            d["reviews"] = [r.to_dict() for r in self.content.reviews]
        return d

    @classmethod
    def from_dict(cls, d: dict, reviews=()) -> "Poi":
        own = tuple(Review.from_dict(r) for r in d.get("reviews", ()))
        return cls(
            poi_id=str(d["poi_id"]),
            content=MultimodalContent(
                image_description=d.get("image_description", ""),
                reviews=own + tuple(reviews),
                metadata=Metadata.from_dict(d["metadata"]),
            ),
        )


@dataclass(frozen=True)
class CheckIn:
    user_id: str
    poi_id: str
    timestamp: float
    context: Context

    def __post_init__(self):
        _check(self.context.timestamp == self.timestamp, "context.timestamp must equal the check-in timestamp")

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "poi_id": self.poi_id,
                "timestamp": self.timestamp, "context": self.context.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CheckIn":
        return cls(user_id=str(d["user_id"]), poi_id=str(d["poi_id"]),
                   timestamp=float(d["timestamp"]), context=Context.from_dict(d["context"]))


@dataclass(frozen=True)
class AffordanceQuery:
    index: int
    text: str
    grounding: frozenset

    def __post_init__(self):
        object.__setattr__(self, "grounding", frozenset(Modality(g) for g in self.grounding))
        _check(self.index >= 1, "query index is 1-based")
        _check(bool(self.text.strip()), "query text must be non-empty")
        _check(len(self.grounding) > 0, "query grounding must be non-empty")

    def to_dict(self) -> dict:
        return {"index": self.index, "text": self.text,
                "grounding": sorted(g.value for g in self.grounding)}

    @classmethod
    def from_dict(cls, d: dict) -> "AffordanceQuery":
        return cls(index=int(d["index"]), text=d["text"], grounding=frozenset(d["grounding"]))


@dataclass(frozen=True)
class StepTrace:
    step: str  # visual | review | metadata | synthesis | verdict
    signal: str  # supports | refutes | neutral
    note: str = ""

    def to_dict(self) -> dict:
        return {"step": self.step, "signal": self.signal, "note": self.note}


@dataclass(frozen=True)
class Verdict:
    answer: Answer
    confidence: float
    evidence: tuple = ()  # ((modality, citation), ...)
    emergent: Optional[str] = None
    conflict: Optional[str] = None
    steps: tuple = field(default=(), compare=True)

    def __post_init__(self):
        object.__setattr__(self, "answer", Answer(self.answer))
        _check(isinstance(self.confidence, (int, float)) and 0.0 <= self.confidence <= 1.0,
               f"confidence must lie in [0,1], got {self.confidence}")
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "evidence", tuple((Modality(m).value, str(c)) for m, c in self.evidence))
        if self.conflict:
            _check(self.answer is Answer.UNCERTAIN, "a conflict forces answer=uncertain")

    def evidence_for(self, modality) -> list:
        m = Modality(modality).value
        return [c for mm, c in self.evidence if mm == m]


@dataclass(frozen=True)
class AffordanceRepresentation:
    poi_id: str
    context_type: ContextType
    entries: tuple  # ((AffordanceQuery, Verdict), ...)
    effective: tuple
    alpha: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "effective", tuple(float(x) for x in self.effective))
        if len(self.entries) != len(self.effective):
            raise LengthMismatch("entries and effective confidences differ in length")
        for x in self.effective:
            _check(0.0 <= x <= 1.0, "effective confidences must lie in [0,1]")

    @property
    def k(self) -> int:
        return len(self.entries)

    @property
    def queries(self) -> list:
        return [q for q, _ in self.entries]

    @property
    def verdicts(self) -> list:
        return [v for _, v in self.entries]


@dataclass(frozen=True)
class PreferenceVector:
    weights: tuple
    source: PreferenceSource

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "source", PreferenceSource(self.source))
        _check(len(self.weights) > 0, "preference vector must be non-empty")
        _check(all(w >= 0 for w in self.weights), "preference weights must be non-negative")
        _check(abs(math.fsum(self.weights) - 1.0) <= 1e-12, "preference weights must sum to 1")

    @property
    def k(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class RankedItem:
    poi_id: str
    score: float
    explanation: str = ""
