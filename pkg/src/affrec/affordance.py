"""Uncertainty-adjusted confidences and the canonical representation encoding."""
from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional

from .domain import (
    AffordanceQuery,
    AffordanceRepresentation,
    Answer,
    ContextType,
    LengthMismatch,
    StepTrace,
    ValidationError,
    Verdict,
)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class UncertaintyConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0,1], got {self.alpha}")


def effective_confidence(v: Verdict, cfg: UncertaintyConfig = UncertaintyConfig()) -> float:
    if v.answer is Answer.YES:
        return v.confidence
    if v.answer is Answer.UNCERTAIN:
        return cfg.alpha * v.confidence
    return 0.0


def assemble_representation(poi_id: str, c_type: ContextType, entries, cfg: UncertaintyConfig = UncertaintyConfig(),
                            k: Optional[int] = None) -> AffordanceRepresentation:
    entries = [(q, v) for q, v in entries]
    if k is not None and len(entries) != k:
        raise LengthMismatch(f"expected {k} entries, got {len(entries)}")
    for i, (q, _) in enumerate(entries):
        if q.index != i + 1:
            raise ValidationError(f"entry {i} carries query index {q.index}")
    eff = [effective_confidence(v, cfg) for _, v in entries]
    return AffordanceRepresentation(poi_id, c_type, tuple(entries), tuple(eff), cfg.alpha)


def fmt6(x: float) -> str:
    return f"{x:.6f}"


def display2(x: float) -> str:
    """Two-decimal display, rounding half up on the shortest decimal form (0.355 -> 0.36)."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _verdict_obj(v: Verdict) -> dict:
    return {
        "answer": v.answer.value,
        "confidence": fmt6(v.confidence),
        "evidence": [list(e) for e in v.evidence],
        "emergent": v.emergent,
        "conflict": v.conflict,
        "steps": [s.to_dict() for s in v.steps],
    }


def to_canonical_obj(rep: AffordanceRepresentation) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "poi_id": rep.poi_id,
        "context_type": rep.context_type.key,
        "alpha": fmt6(rep.alpha),
        "entries": [{"query": q.to_dict(), "verdict": _verdict_obj(v)} for q, v in rep.entries],
        "effective": [fmt6(x) for x in rep.effective],
    }


def encode(rep: AffordanceRepresentation) -> str:
    return json.dumps(to_canonical_obj(rep), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def decode(text: str) -> AffordanceRepresentation:
    obj = json.loads(text)
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {obj.get('schema_version')!r}")
    entries = []
    for e in obj["entries"]:
        v = e["verdict"]
        entries.append((
            AffordanceQuery.from_dict(e["query"]),
            Verdict(
                answer=v["answer"],
                confidence=float(v["confidence"]),
                evidence=tuple(tuple(x) for x in v["evidence"]),
                emergent=v["emergent"],
                conflict=v["conflict"],
                steps=tuple(StepTrace(**s) for s in v["steps"]),
            ),
        ))
    rep = assemble_representation(obj["poi_id"], ContextType.from_key(obj["context_type"]), entries,
                                  UncertaintyConfig(float(obj["alpha"])))
    if [fmt6(x) for x in rep.effective] != obj["effective"]:
        raise ValidationError("encoded effective confidences disagree with the verdicts")
    return rep
