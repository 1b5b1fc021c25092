"""Context discretization and affordance-query generation."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

from .domain import (
    AffordanceQuery,
    Context,
    ContextType,
    DayClass,
    DayOfWeek,
    DayPart,
    Modality,
    ValidationError,
)

log = logging.getLogger(__name__)

MAX_REPROMPTS = 3

# minute-of-day boundaries: [05:00, 12:00) morning, [12:00, 17:00) afternoon, [17:00, 22:00) evening
DAY_PART_BOUNDS = ((300, 720, DayPart.MORNING), (720, 1020, DayPart.AFTERNOON),
                   (1020, 1320, DayPart.EVENING))

ISOLATION_BANNED = re.compile(
    r"\b(user|users|your|history|previously|past visits?|last time|usually|favou?rite|again)\b",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class QueryGenConfig:
    k: int = 5
    temperature: float = 0.0
    similarity_dedup_threshold: float = 0.8
    # fill from the template bank when the backend is unreachable
    fallback: bool = True
    data_dir: Optional[str] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if not 0.0 <= self.similarity_dedup_threshold <= 1.0:
            raise ValidationError("similarity_dedup_threshold must lie in [0,1]")


@dataclass(frozen=True)
class Violation:
    constraint: str  # groundability | isolation | orthogonality
    indices: tuple
    detail: str = ""


def _read_data(name: str, data_dir: Optional[str]) -> str:
    if data_dir:
        return Path(data_dir, name).read_text(encoding="utf-8")
    return resources.files("affrec").joinpath("data", name).read_text(encoding="utf-8")


def _tsv_rows(text: str):
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        yield line.rstrip("\n").split("\t")


@lru_cache(maxsize=8)
def load_synonyms(data_dir: Optional[str] = None) -> tuple:
    """(phrase, cluster) pairs, longest phrase first."""
    pairs = [(phrase.strip().lower(), cluster.strip()) for cluster, phrase in
             _tsv_rows(_read_data("intent_synonyms.tsv", data_dir))]
    return tuple(sorted(pairs, key=lambda p: (-len(p[0]), p[0])))


@lru_cache(maxsize=8)
def load_template_bank(data_dir: Optional[str] = None) -> dict:
    """cell key -> tuple of (grounding, text)."""
    bank: dict = {}
    for cell, grounding, text in _tsv_rows(_read_data("templates.tsv", data_dir)):
        g = frozenset(x.strip() for x in grounding.split(",") if x.strip())
        bank.setdefault(cell.strip(), []).append((g, text.strip()))
    return {k: tuple(v) for k, v in bank.items()}


def _stem(token: str) -> str:
    for suffix in ("ing", "es", "ed", "s"):
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            return token[: -len(suffix)]
    return token


def canonical_intent(intent_text: Optional[str], data_dir: Optional[str] = None) -> str:
    if intent_text is None or not intent_text.strip():
        return "general"
    words = re.findall(r"[a-z0-9]+", intent_text.lower())
    # phrases match on stems too, so "studying" finds "study"
    texts = (" ".join(words), " ".join(_stem(w) for w in words))
    for phrase, cluster in load_synonyms(data_dir):
        stemmed = " ".join(_stem(w) for w in phrase.split())
        if any(re.search(rf"\b{re.escape(p)}\b", t) for p, t in zip((phrase, stemmed), texts)):
            return cluster
    return texts[1].replace(" ", "_") or "general"


def day_part_of(minute: int) -> DayPart:
    for lo, hi, part in DAY_PART_BOUNDS:
        if lo <= minute < hi:
            return part
    return DayPart.LATE_NIGHT


def day_class_of(day: DayOfWeek) -> DayClass:
    return DayClass.WEEKEND if day in (DayOfWeek.SAT, DayOfWeek.SUN) else DayClass.WEEKDAY


def discretize_context(c: Context, data_dir: Optional[str] = None) -> ContextType:
    return ContextType(
        day_part=day_part_of(c.minute),
        day_class=day_class_of(c.day_of_week),
        social_situation=c.social_situation,
        intent_cluster=canonical_intent(c.intent_text, data_dir),
    )


def template_chain(ctype: ContextType) -> list:
    """Cell keys tried for a context type, most specific first."""
    dp, soc = ctype.day_part.value, ctype.social_situation.value
    return [f"{dp}|{soc}|{ctype.intent_cluster}", f"{dp}|{soc}", soc, "*"]


def template_queries(ctype: ContextType, data_dir: Optional[str] = None) -> list:
    """All (grounding, text) candidates along the fallback chain, deduplicated."""
    bank = load_template_bank(data_dir)
    seen, out = set(), []
    for cell in template_chain(ctype):
        for g, text in bank.get(cell, ()):
            if text not in seen:
                seen.add(text)
                out.append((g, text))
    return out


def fixed_queries(k: int = 5, data_dir: Optional[str] = None) -> list:
    """The context-blind generic query set (used by the fixed-queries ablation)."""
    bank = load_template_bank(data_dir)
    return [AffordanceQuery(i + 1, text, g) for i, (g, text) in enumerate(bank["*"][:k])]


def tokens(text: str) -> frozenset:
    return frozenset(re.findall(r"[a-z0-9]+", text.lower()))


def jaccard(a: str, b: str) -> float:
    ta, tb = tokens(a), tokens(b)
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


def validate_query_set(queries, threshold: float = 0.8) -> list:
    """List constraint violations; empty iff the set is grounded, isolated and orthogonal."""
    violations = []
    for q in queries:
        grounding = getattr(q, "grounding", None)
        if not grounding:
            violations.append(Violation("groundability", (q.index,), "empty grounding"))
        elif not set(grounding) <= set(Modality):
            violations.append(Violation("groundability", (q.index,), "unknown modality"))
        m = ISOLATION_BANNED.search(q.text)
        if m:
            violations.append(Violation("isolation", (q.index,), f"references {m.group(0)!r}"))
    qs = list(queries)
    for i in range(len(qs)):
        for j in range(i + 1, len(qs)):
            sim = jaccard(qs[i].text, qs[j].text)
            if sim >= threshold:
                violations.append(Violation("orthogonality", (qs[i].index, qs[j].index),
                                            f"token jaccard {sim:.2f}"))
    return violations


@lru_cache(maxsize=4)
def _prompt_template(version: str = "v1") -> str:
    return resources.files("affrec").joinpath("prompts", version, "querygen.txt").read_text(encoding="utf-8")


def build_prompt(ctype: ContextType, k: int, avoid=()) -> str:
    avoid_block = "\n".join(f"- {t}" for t in avoid) or "(none)"
    return _prompt_template().format(
        k=k,
        context_type=ctype.key,
        day_part=ctype.day_part.value,
        day_class=ctype.day_class.value,
        social=ctype.social_situation.value,
        intent=ctype.intent_cluster,
        avoid=avoid_block,
    )


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def parse_query_response(text: str) -> list:
    """Extract [(grounding, text), ...] from a backend response; malformed items are dropped."""
    m = _FENCE.search(text)
    body = m.group(1) if m else text
    try:
        data = json.loads(body)
    except json.JSONDecodeError:
        return []
    if isinstance(data, dict):
        data = data.get("queries", [])
    out = []
    for item in data if isinstance(data, list) else []:
        if not isinstance(item, dict) or not isinstance(item.get("text"), str):
            continue
        g = item.get("grounding") or []
        try:
            g = frozenset(Modality(x).value for x in g)
        except ValueError:
            g = frozenset()
        out.append((g, item["text"].strip()))
    return out


def _accept(candidates, accepted: list, k: int, threshold: float) -> None:
    for g, text in candidates:
        if len(accepted) >= k:
            return
        if not g or not text or ISOLATION_BANNED.search(text):
            continue
        if any(jaccard(text, t) >= threshold for _, t in accepted):
            continue
        accepted.append((g, text))


def generate_queries(c: Context, cfg: QueryGenConfig, backend) -> list:
    """Produce exactly ``cfg.k`` grounded, isolated, mutually distinct queries for ``c``."""
    return generate_queries_for_type(discretize_context(c, cfg.data_dir), cfg, backend)


def generate_queries_for_type(ctype: ContextType, cfg: QueryGenConfig, backend) -> list:
    """Query generation for an already discretized context (the query-cache key)."""
    from .cot_engine import BackendUnavailable

    accepted: list = []
    try:
        for attempt in range(1 + MAX_REPROMPTS):
            prompt = build_prompt(ctype, cfg.k, avoid=[t for _, t in accepted])
            _accept(parse_query_response(backend.generate(prompt, cfg.temperature)),
                    accepted, cfg.k, cfg.similarity_dedup_threshold)
            if len(accepted) >= cfg.k:
                break
            log.info("query set for %s short (%d/%d) after attempt %d",
                     ctype.key, len(accepted), cfg.k, attempt + 1)
    except BackendUnavailable:
        if not cfg.fallback:
            raise
        log.warning("backend unavailable; using template bank for %s", ctype.key)
    if len(accepted) < cfg.k:
        _accept(template_queries(ctype, cfg.data_dir), accepted, cfg.k, cfg.similarity_dedup_threshold)
    if len(accepted) < cfg.k:
        # bank exhausted: last resort, the generic cell without the similarity check
        _accept(template_queries(ctype, cfg.data_dir), accepted, cfg.k, 1.01)
    if len(accepted) < cfg.k:
        raise ValidationError(f"cannot produce {cfg.k} distinct queries for {ctype.key}")
    return [AffordanceQuery(i + 1, text, g) for i, (g, text) in enumerate(accepted[: cfg.k])]
