"""Synthetic corpora with planted affordances.

Every POI gets a latent state per affordance dimension (strong, weak,
absent, neg, conflict) plus opening hours and a price tier.  Images and
reviews are rendered from those states through the lexicon cues, so the
rule reasoner can read the states back.  ``planted_value`` is the effective
confidence a faithful reasoner should report for each state at alpha 0.5;
it is computed here from the rendering recipe, not by running the reasoner.

Users carry a scenario mix and, per scenario, a taste vector over that
scenario's query dimensions.  A check-in picks a scenario, then a venue open
in it with probability proportional to exp(beta * taste . planted).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lexicon
from .domain import (
    CheckIn,
    Context,
    ContextType,
    DayOfWeek,
    GeoPoint,
    Metadata,
    MultimodalContent,
    OpeningHours,
    Poi,
    Review,
)

DAY = 86400.0
START = 1704067200.0  # 2024-01-01 00:00 UTC, a Monday
WINDOW_DAYS = 150
REVIEW_HISTORY_DAYS = 365
CITY = GeoPoint(40.73, -73.99)
CITY_HALF_SPAN_KM = 5.0

STATES = ("strong", "weak", "absent", "neg", "conflict")
METADATA_DIMS = ("late_hours", "budget")
DIMS = tuple(d.name for d in lexicon.DIMENSIONS)

# booking has no direct visual cue; its strong state is the cross-modal one
EMERGENT_IMAGE = "dense static seating"
EMERGENT_REVIEW = "always full"
EMERGENT_MIN_REVIEWS = 50


@dataclass(frozen=True)
class Scenario:
    key: str               # ContextType key the rendered contexts discretize to
    social: str
    weekend: bool
    minutes: tuple         # [lo, hi] minute-of-day range for visit times
    intent_text: str | None = None
    group_size: int | None = None


SCENARIOS = (
    Scenario("morning|weekday|solo|work", "solo", False, (480, 690), "remote work"),
    Scenario("afternoon|weekday|solo|general", "solo", False, (780, 990)),
    Scenario("evening|weekday|friends|general", "friends", False, (1080, 1290), None, 4),
    Scenario("evening|weekend|friends|celebration", "friends", True, (1110, 1290), "birthday party", 5),
    Scenario("afternoon|weekend|family|general", "family", True, (750, 990), None, 4),
    Scenario("evening|weekend|date|romance", "date", True, (1110, 1290), "date night"),
)


@dataclass(frozen=True)
class Archetype:
    name: str
    weight: float
    open_minute: int
    close_minute: int
    price: tuple                      # probabilities of tiers 1..4
    states: dict = field(default_factory=dict)   # dim -> probabilities over STATES
    closed_days: tuple = ()
    base_image: str = ""


def _p(strong, weak, neg=0.05, conflict=0.0):
    return (strong, weak, max(0.0, 1.0 - strong - weak - neg - conflict), neg, conflict)


ARCHETYPES = (
    Archetype("cafe", 0.22, 7 * 60, 18 * 60, (0.5, 0.4, 0.1, 0.0), {
        "coffee": _p(0.55, 0.3), "wifi": _p(0.45, 0.3, 0.1), "outlets": _p(0.4, 0.25, 0.1),
        "quiet": _p(0.35, 0.25, 0.1, 0.15), "outdoor": _p(0.2, 0.2), "family": _p(0.05, 0.1),
    }, base_image="A small room with a counter near the entrance and wooden floors"),
    Archetype("bar", 0.18, 17 * 60, 26 * 60, (0.1, 0.5, 0.35, 0.05), {
        "drinks": _p(0.6, 0.3), "lively": _p(0.45, 0.3, 0.05, 0.1), "group_seating": _p(0.35, 0.25, 0.1, 0.1),
        "celebration": _p(0.3, 0.25), "quiet": _p(0.0, 0.05, 0.5), "outdoor": _p(0.15, 0.15),
        "booking": _p(0.2, 0.15, 0.0), "romance": _p(0.05, 0.1),
    }, base_image="A dim room with stools along a long counter"),
    Archetype("restaurant", 0.22, 11 * 60 + 30, 23 * 60, (0.1, 0.4, 0.4, 0.1), {
        "group_seating": _p(0.4, 0.25, 0.1, 0.1), "booking": _p(0.35, 0.25, 0.0),
        "celebration": _p(0.3, 0.25), "romance": _p(0.2, 0.25, 0.05, 0.1), "drinks": _p(0.3, 0.3),
        "quiet": _p(0.15, 0.2, 0.15, 0.1), "family": _p(0.15, 0.2), "outdoor": _p(0.15, 0.15),
    }, base_image="A dining room with white walls and framed prints"),
    Archetype("fine_dining", 0.1, 18 * 60, 23 * 60 + 30, (0.0, 0.0, 0.3, 0.7), {
        "romance": _p(0.55, 0.3, 0.0, 0.1), "quiet": _p(0.45, 0.3, 0.0, 0.15), "booking": _p(0.55, 0.3, 0.0),
        "drinks": _p(0.5, 0.3), "celebration": _p(0.15, 0.2), "family": _p(0.0, 0.0, 0.3),
    }, closed_days=(DayOfWeek.MON,), base_image="An elegant room with linen-covered tables"),
    Archetype("family_spot", 0.14, 9 * 60, 20 * 60, (0.4, 0.5, 0.1, 0.0), {
        "family": _p(0.55, 0.3, 0.0, 0.05), "outdoor": _p(0.45, 0.3), "group_seating": _p(0.4, 0.3),
        "quiet": _p(0.05, 0.15, 0.3), "lively": _p(0.15, 0.2), "coffee": _p(0.1, 0.2),
        "celebration": _p(0.15, 0.2),
    }, base_image="A bright open space with wide aisles"),
    Archetype("brunch", 0.14, 8 * 60, 16 * 60, (0.3, 0.5, 0.2, 0.0), {
        "coffee": _p(0.45, 0.3), "outdoor": _p(0.35, 0.3), "family": _p(0.25, 0.3),
        "quiet": _p(0.15, 0.2, 0.15, 0.1), "wifi": _p(0.15, 0.2), "group_seating": _p(0.2, 0.25),
    }, base_image="A sunny corner room with plants on the windowsills"),
)

DEFAULT_STATE = _p(0.03, 0.07, 0.05)

FILLER_REVIEWS = (
    "Friendly staff and tidy tables.", "Service was quick and polite.", "Decent spot, nothing special.",
    "The menu changes every season.", "Staff helped with directions.", "Clean restrooms, easy to find.",
    "Came back a second time, still fine.", "Prices were as listed on the board.",
    "Parking nearby was easy.", "Nice music at a reasonable volume.",
)
REVIEW_FRAMES = ("{cue} here.", "Honestly, {cue}.", "{cue}, would return.", "Worth noting: {cue}.")


def _cap(s: str) -> str:
    return s[:1].upper() + s[1:]


def planted_value(dim: str, state: str) -> float:
    """Effective confidence (alpha 0.5) that the rendering of ``state`` should yield."""
    d = lexicon.BY_NAME[dim]
    has_image = bool(d.image_pos)
    if state == "strong":
        if dim == "booking":
            return 0.8  # emergent conclusion: base + three modalities
        return 0.5 + 0.1 * (int(has_image) + 2)
    if state == "weak":
        return 0.6
    if state == "absent":
        return 0.1  # uncertain 0.2 halved
    if state == "neg":
        return 0.0
    if state == "conflict":
        return 0.5 * 0.71  # image versus one newer refuting review, reviews take precedence
    raise ValueError(state)


def metadata_value(dim: str, hours: OpeningHours, price_tier: int, scenario: Scenario) -> float:
    days = (DayOfWeek.SAT, DayOfWeek.SUN) if scenario.weekend else tuple(DayOfWeek(i) for i in range(5))
    if dim == "late_hours":
        late = [hours.is_open(d, 22 * 60 + 30) for d in days]
        return 0.6 if all(late) else 0.0 if not any(late) else 0.1
    if dim == "budget":
        return 0.6 if price_tier <= 2 else 0.0 if price_tier == 4 else 0.1
    raise ValueError(dim)


def scenario_anchor(s: Scenario) -> int:
    return {"morning": 9 * 60, "afternoon": 14 * 60, "evening": 19 * 60 + 30}[s.key.split("|")[0]]


def open_in(hours: OpeningHours, s: Scenario) -> bool:
    days = (DayOfWeek.SAT, DayOfWeek.SUN) if s.weekend else tuple(DayOfWeek(i) for i in range(5))
    return any(hours.is_open(d, scenario_anchor(s)) for d in days)


@dataclass
class SyntheticCorpus:
    pois: dict                 # poi_id -> Poi (reviews attached, ascending by time)
    checkins: list
    profiles: dict             # (poi_id, ctype key) -> {dim: planted value}
    states: dict               # poi_id -> {dim: state}
    seed: int = 0


def _offset_point(rng, center: GeoPoint, half_span_km: float) -> GeoPoint:
    dy, dx = rng.uniform(-half_span_km, half_span_km, size=2)
    lat = center.lat + dy / 111.195
    lon = center.lon + dx / (111.195 * math.cos(math.radians(center.lat)))
    return GeoPoint(round(lat, 6), round(lon, 6))


def _render(rng, states: dict, arch: Archetype, t_lo: float, t_hi: float, recent_lo: float,
            in_window: tuple):
    """Image description and reviews for one POI's latent states."""
    img_bits, first, second, negs, late_negs = [], [], [], [], []
    for dim, st in states.items():
        d = lexicon.BY_NAME[dim]
        if dim in METADATA_DIMS:
            continue
        if dim == "booking":
            if st == "strong":
                img_bits.append(EMERGENT_IMAGE)
                first.append(f"{EMERGENT_REVIEW} on weekends")
            elif st == "weak":
                first.append(d.review_pos[0])
            continue
        if st == "strong":
            if d.image_pos:
                img_bits.append(d.image_pos[0])
            first.append(d.review_pos[0])
            second.append(d.review_pos[-1])
        elif st == "weak":
            first.append(d.review_pos[-1])
        elif st == "neg":
            if d.image_neg:
                img_bits.append(d.image_neg[0])
            negs.append(d.review_neg[0])
            negs.append(d.review_neg[-1])
        elif st == "conflict":
            img_bits.append(d.image_pos[-1])
            late_negs.append(d.review_neg[-1])
    image = arch.base_image + "".join(f", {b}" for b in img_bits) + "."

    reviews = []

    def add(texts, lo, hi):
        for text in texts:
            reviews.append(Review(text, float(math.floor(rng.uniform(lo, hi))), int(rng.integers(1, 6))))

    def bundle(cues):
        # one review carrying every cue of the group; a dimension never gets
        # a supporting and a refuting cue in the same review
        if not cues:
            return []
        frames = rng.integers(len(REVIEW_FRAMES), size=len(cues))
        return [" ".join(REVIEW_FRAMES[int(f)].format(cue=_cap(c)) for f, c in zip(frames, cues))]

    add(bundle(first), t_lo, recent_lo)
    add(bundle(second), t_lo, recent_lo)
    add(bundle(negs), t_lo, recent_lo)
    add(bundle(late_negs), recent_lo, t_hi)
    n_fill = int(rng.integers(2, 6))
    add([FILLER_REVIEWS[int(i)] for i in rng.integers(len(FILLER_REVIEWS), size=n_fill)], t_lo, t_hi)
    n_late = int(rng.binomial(3, in_window[2]))
    add([FILLER_REVIEWS[int(i)] for i in rng.integers(len(FILLER_REVIEWS), size=n_late)],
        in_window[0], in_window[1])
    reviews.sort(key=lambda r: (r.created_at, r.text))
    return image, tuple(reviews)


def generate_synthetic_corpus(seed: int = 0, n_users: int = 50, n_pois: int = 200, n_checkins: int = 5000, *,
                              beta: float = 10.0, taste_concentration: float = 1.0, taste_share: float = 0.2,
                              in_window_review_share: float = 0.3, mixed_evidence: float = 0.3) -> SyntheticCorpus:
    """Deterministic planted corpus.

    A user's taste in a scenario is ``taste_share * Dirichlet + (1 - taste_share) * uniform``
    over that scenario's query dimensions, so everybody shares the context's
    needs to a degree and differs in emphasis.
    """
    if n_users < 10 or n_pois < 50:
        raise ValueError("need at least 10 users and 50 POIs")
    from .querygen import template_queries

    rng = np.random.default_rng(seed)
    t_start, t_end = START, START + WINDOW_DAYS * DAY
    rev_lo, rev_recent = t_start - REVIEW_HISTORY_DAYS * DAY, t_start - 25 * DAY

    scen_ctypes = [ContextType.from_key(s.key) for s in SCENARIOS]
    scen_dims = [[lexicon.query_dimension(t) for _, t in template_queries(ct)[:5]] for ct in scen_ctypes]

    weights = np.array([a.weight for a in ARCHETYPES])
    pois, states, profiles = {}, {}, {}
    width = len(str(n_pois - 1))
    for j in range(n_pois):
        pid = f"p{j:0{width}d}"
        arch = ARCHETYPES[int(rng.choice(len(ARCHETYPES), p=weights / weights.sum()))]
        st = {}
        for dim in DIMS:
            if dim in METADATA_DIMS:
                continue
            probs = np.array(arch.states.get(dim, DEFAULT_STATE), dtype=float)
            if mixed_evidence:
                # part of the clear-cut mass becomes mixed evidence
                moved = mixed_evidence * (probs[0] + probs[1])
                probs[0] -= mixed_evidence * probs[0]
                probs[1] -= mixed_evidence * probs[1]
                probs[4] += moved
            d = lexicon.BY_NAME[dim]
            if not d.image_pos or dim == "booking":
                probs[3] += probs[4]  # no visual cue to contradict: conflict becomes neg
                probs[4] = 0.0
            if not d.review_neg:
                probs[2] += probs[3]  # nothing to render a refutation with
                probs[3] = 0.0
            st[dim] = STATES[int(rng.choice(len(STATES), p=probs / probs.sum()))]
        close = arch.close_minute + 30 * int(rng.integers(-2, 3))
        opening = arch.open_minute + 30 * int(rng.integers(-1, 2))
        closed_days = arch.closed_days if rng.random() < 0.7 else ()
        hours = OpeningHours.daily(opening, min(close, 2880), closed_days)
        tier = int(rng.choice(4, p=np.array(arch.price)) + 1)
        booking_strong = st.get("booking") == "strong"
        review_count = int(rng.integers(EMERGENT_MIN_REVIEWS, 400)) if booking_strong \
            else int(rng.integers(5, 400))
        loc = _offset_point(rng, CITY, CITY_HALF_SPAN_KM)
        image, reviews = _render(rng, st, arch, rev_lo, t_start, rev_recent,
                                 (t_start, t_end, in_window_review_share))
        meta = Metadata(arch.name, tier, hours, loc, review_count)
        pois[pid] = Poi(pid, MultimodalContent(image, reviews, meta))
        states[pid] = dict(st, late_hours="metadata", budget="metadata")
        for s in SCENARIOS:
            if not open_in(hours, s):
                profiles[(pid, s.key)] = {d: 0.0 for d in DIMS}
                continue
            vals = {}
            for dim in DIMS:
                vals[dim] = metadata_value(dim, hours, tier, s) if dim in METADATA_DIMS \
                    else planted_value(dim, st[dim])
            profiles[(pid, s.key)] = vals

    ids = sorted(pois)
    planted = []
    for s, dims in zip(SCENARIOS, scen_dims):
        planted.append(np.array([[profiles[(p, s.key)][d] for d in dims] for p in ids]))
    open_mask = [np.array([open_in(pois[p].content.metadata.hours, s) for p in ids]) for s in SCENARIOS]

    users = [f"u{i:0{len(str(n_users - 1))}d}" for i in range(n_users)]
    mix = rng.dirichlet(np.ones(len(SCENARIOS)), size=n_users)
    taste = rng.dirichlet(np.full(5, taste_concentration), size=(n_users, len(SCENARIOS)))
    taste = taste_share * taste + (1.0 - taste_share) / 5.0

    weekday_days = [d for d in range(WINDOW_DAYS) if (d % 7) < 5]
    weekend_days = [d for d in range(WINDOW_DAYS) if (d % 7) >= 5]
    per_user = np.full(n_users, n_checkins // n_users)
    per_user[: n_checkins - per_user.sum()] += 1
    checkins = []
    for ui, u in enumerate(users):
        used = set()
        for _ in range(per_user[ui]):
            si = int(rng.choice(len(SCENARIOS), p=mix[ui]))
            s = SCENARIOS[si]
            logits = beta * planted[si] @ taste[ui, si]
            logits = np.where(open_mask[si], logits, -np.inf)
            pr = np.exp(logits - logits.max())
            pj = int(rng.choice(len(ids), p=pr / pr.sum()))
            while True:
                day = int(rng.choice(weekend_days if s.weekend else weekday_days))
                ts = t_start + day * DAY + 60.0 * int(rng.integers(s.minutes[0], s.minutes[1] + 1)) \
                    + float(rng.integers(0, 60))
                if ts not in used:
                    used.add(ts)
                    break
            ctx = Context.at(ts, s.social, group_size=s.group_size, intent_text=s.intent_text)
            checkins.append(CheckIn(u, ids[pj], ts, ctx))
    checkins.sort(key=lambda c: (c.timestamp, c.user_id))
    return SyntheticCorpus(pois, checkins, profiles, states, seed)
