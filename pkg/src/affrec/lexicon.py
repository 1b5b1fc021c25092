"""Keyword lexicons for the deterministic rule reasoner.

Each affordance dimension lists the phrases that identify a query about it
(``query``), and supporting / refuting cue phrases per modality.  The
synthetic corpus generator renders content from the same phrases, which is
what lets the rule backend recover planted profiles.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache


@dataclass(frozen=True)
class Dimension:
    name: str
    query: tuple
    image_pos: tuple = ()
    image_neg: tuple = ()
    review_pos: tuple = ()
    review_neg: tuple = ()
    # metadata predicate name understood by cot_engine.metadata_signal
    metadata: str = ""


# Order matters: query detection returns the first dimension whose cue matches.
DIMENSIONS = (
    Dimension("late_hours", query=("operating hours",), review_pos=("open late",),
              metadata="late_hours"),
    Dimension("booking", query=("booking", "reservation"),
              review_pos=("reservations recommended", "book ahead")),
    Dimension("group_seating", query=("group seating",),
              image_pos=("large communal tables", "long banquet tables"),
              image_neg=("tiny two-top tables",),
              review_pos=("room for our whole group",), review_neg=("cramped",)),
    Dimension("celebration", query=("celebrations", "celebration"),
              image_pos=("festive decorations", "balloons"),
              review_pos=("birthday", "celebrated"), review_neg=("stuffy atmosphere",)),
    Dimension("quiet", query=("quiet",),
              image_pos=("serene", "hushed"), image_neg=("crowded and loud",),
              review_pos=("peaceful", "so quiet"),
              review_neg=("noisy", "loud", "construction noise")),
    Dimension("wifi", query=("wi-fi", "wifi"),
              review_pos=("fast wifi", "reliable wifi"), review_neg=("wifi is spotty", "no wifi")),
    Dimension("outlets", query=("power outlets",), image_pos=("outlets along the wall",),
              review_pos=("plenty of outlets",), review_neg=("no outlets",)),
    Dimension("coffee", query=("coffee",), image_pos=("espresso bar",),
              review_pos=("excellent coffee", "great espresso"), review_neg=("burnt coffee",)),
    Dimension("drinks", query=("drinks",), image_pos=("full bar",),
              review_pos=("great cocktails",), review_neg=("no alcohol",)),
    Dimension("lively", query=("lively",), image_pos=("dance floor",),
              review_pos=("great vibe", "buzzing"), review_neg=("dead inside",)),
    Dimension("family", query=("children",), image_pos=("play corner", "high chairs"),
              review_pos=("kid-friendly", "our kids loved"), review_neg=("not suitable for kids",)),
    Dimension("outdoor", query=("outdoor",), image_pos=("patio", "garden terrace"),
              review_pos=("sat outside",), review_neg=("no outdoor space",)),
    Dimension("romance", query=("romantic", "intimate"), image_pos=("candlelit",),
              review_pos=("romantic",), review_neg=("harsh lighting",)),
    Dimension("budget", query=("budget",), review_pos=("cheap eats", "great value"),
              review_neg=("overpriced",), metadata="budget"),
)

BY_NAME = {d.name: d for d in DIMENSIONS}


def _pattern(phrases) -> re.Pattern | None:
    if not phrases:
        return None
    alts = "|".join(re.escape(p) for p in sorted(phrases, key=len, reverse=True))
    return re.compile(rf"(?<![\w-])(?:{alts})(?!\w)", re.IGNORECASE)


@lru_cache(maxsize=None)
def compiled(name: str, slot: str) -> re.Pattern | None:
    return _pattern(getattr(BY_NAME[name], slot))


@lru_cache(maxsize=4096)
def query_dimension(text: str) -> str | None:
    """Name of the affordance dimension a query asks about, if recognised."""
    for d in DIMENSIONS:
        if compiled(d.name, "query").search(text):
            return d.name
    return None


def find(name: str, slot: str, text: str) -> str | None:
    pat = compiled(name, slot)
    if pat is None or not text:
        return None
    m = pat.search(text)
    return m.group(0) if m else None
