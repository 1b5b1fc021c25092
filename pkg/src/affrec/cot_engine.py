"""Per-(query, POI) cross-modal reasoning.

:func:`infer_affordance` runs the five steps (visual, review, metadata,
synthesis, verdict) for every query through a :class:`ReasonerBackend`.
Two backends ship: :class:`RuleBackend`, a deterministic keyword reasoner
used for tests and the synthetic experiments, and :class:`RemoteBackend`,
which posts prompts to an HTTP text-generation endpoint.
"""
from __future__ import annotations

import bisect
import json
import logging
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

from . import lexicon
from .domain import (
    AffordanceQuery,
    Answer,
    Context,
    ContextType,
    DayClass,
    DayOfWeek,
    DayPart,
    Metadata,
    Modality,
    MultimodalContent,
    Review,
    StepTrace,
    ValidationError,
    Verdict,
)

log = logging.getLogger(__name__)

RECENT_REVIEWS = 20
IMAGE_STALENESS_DAYS = 180.0

# minute of day at which a context type is checked against opening hours
DAY_PART_ANCHOR = {DayPart.MORNING: 9 * 60, DayPart.AFTERNOON: 14 * 60,
                   DayPart.EVENING: 19 * 60 + 30, DayPart.LATE_NIGHT: 23 * 60 + 30}
LATE_ANCHOR = 22 * 60 + 30
CLASS_DAYS = {DayClass.WEEKDAY: tuple(DayOfWeek(i) for i in range(5)),
              DayClass.WEEKEND: (DayOfWeek.SAT, DayOfWeek.SUN)}

# rule-backend calibration, in hundredths
BASE = 50
STEP = 10
NO_EVIDENCE = 20
PRECEDENCE_BONUS = 11


class BackendUnavailable(RuntimeError):
    """The reasoner backend could not be reached."""


class ResponseFormatError(ValueError):
    """A backend response failed schema validation."""


@dataclass(frozen=True)
class AblationFlags:
    fixed_queries: bool = False       # A1
    late_fusion_only: bool = False    # A2
    disable_emergent: bool = False    # A3
    disable_conflict: bool = False    # A4
    drop_image: bool = False          # A5
    drop_reviews: bool = False        # A6
    drop_metadata: bool = False       # A7
    alpha_one: bool = False           # A8
    bm25_user_weights: bool = False   # A11

    CODES = {"A1": "fixed_queries", "A2": "late_fusion_only", "A3": "disable_emergent",
             "A4": "disable_conflict", "A5": "drop_image", "A6": "drop_reviews",
             "A7": "drop_metadata", "A8": "alpha_one", "A11": "bm25_user_weights"}

    @classmethod
    def parse(cls, text: str | None) -> "AblationFlags":
        """Parse ``"A1,A3"`` (or flag names) into flags; empty or ``full`` means none."""
        if not text or text.strip().lower() in ("full", "none"):
            return cls()
        kw = {}
        for tok in re.split(r"[,+\s]+", text.strip()):
            if not tok:
                continue
            name = cls.CODES.get(tok.upper(), tok)
            if name not in cls.CODES.values():
                raise ValueError(f"unknown ablation flag {tok!r}")
            kw[name] = True
        return cls(**kw)

    @property
    def label(self) -> str:
        on = [code for code, name in self.CODES.items() if getattr(self, name)]
        return "+".join(on) or "full"

    @property
    def inference_key(self) -> tuple:
        """Flags that change Phase-2 output (used to key memoized verdicts)."""
        return (self.late_fusion_only, self.disable_emergent, self.disable_conflict,
                self.drop_image, self.drop_reviews, self.drop_metadata)


@dataclass(frozen=True)
class EmergentRule:
    dimension: str
    image_cues: tuple
    review_cues: tuple
    min_review_count: int
    conclusion: str


@lru_cache(maxsize=4)
def load_emergent_rules(data_dir: Optional[str] = None) -> tuple:
    if data_dir:
        text = Path(data_dir, "emergent_rules.tsv").read_text(encoding="utf-8")
    else:
        text = resources.files("affrec").joinpath("data", "emergent_rules.tsv").read_text(encoding="utf-8")
    rules = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        dim, img, rev, n, concl = line.split("\t")
        rules.append(EmergentRule(dim, tuple(img.split("|")), tuple(rev.split("|")), int(n), concl))
    return tuple(rules)


def _phrase_re(phrases) -> re.Pattern:
    alts = "|".join(re.escape(p) for p in sorted(phrases, key=len, reverse=True))
    return re.compile(rf"(?<![\w-])(?:{alts})(?!\w)", re.IGNORECASE)


def select_recent_reviews(reviews, l: int = RECENT_REVIEWS, cutoff: float = float("inf")) -> list:
    """The ``l`` newest reviews created at or before ``cutoff``, newest first."""
    if l <= 0:
        return []
    eligible = [(i, r) for i, r in enumerate(reviews) if r.created_at <= cutoff]
    eligible.sort(key=lambda ir: (-ir[1].created_at, ir[0]))
    return [r for _, r in eligible[:l]]


def class_days(ctype: ContextType) -> tuple:
    return CLASS_DAYS[ctype.day_class]


def open_for(metadata: Metadata, ctype: ContextType, minute: Optional[int] = None) -> tuple:
    """Per class day, whether the venue is open at the anchor minute."""
    minute = DAY_PART_ANCHOR[ctype.day_part] if minute is None else minute
    return tuple(metadata.hours.is_open(d, minute) for d in class_days(ctype))


def _hhmm(minute: int) -> str:
    return f"{minute // 60:02d}:{minute % 60:02d}"


def _ctype(c) -> ContextType:
    if isinstance(c, ContextType):
        return c
    from .querygen import discretize_context
    return discretize_context(c)


def evaluate_hard_constraints(m: Optional[Metadata], c, query: AffordanceQuery) -> Optional[Verdict]:
    """A definitive ``no`` when metadata logically rules the query out, else None.

    Opening hours are checked at the context type's anchor minute on every
    day of its day class; the venue is vetoed only when it is closed on all
    of them, so the verdict stays a function of the context type.
    """
    if m is None:
        return None
    ctype = _ctype(c)
    dim = lexicon.query_dimension(query.text)
    anchor = DAY_PART_ANCHOR[ctype.day_part]
    days = "/".join(d.label for d in class_days(ctype))
    reason = None
    if not any(open_for(m, ctype)):
        reason = f"closed at {_hhmm(anchor)} on {days}"
    elif dim == "late_hours" and not any(open_for(m, ctype, LATE_ANCHOR)):
        reason = f"closed by {_hhmm(LATE_ANCHOR)} on {days}"
    elif dim == "budget" and m.price_tier == 4:
        reason = "price tier 4"
    if reason is None:
        return None
    steps = (StepTrace("metadata", "refutes", f"hard constraint: {reason}"),
             StepTrace("verdict", "refutes", "metadata veto overrides other evidence"))
    return Verdict(Answer.NO, 1.0, evidence=((Modality.METADATA.value, reason),), steps=steps)


def metadata_signal(dim: Optional[str], m: Optional[Metadata], ctype: ContextType) -> tuple:
    """(signal, citation) for the metadata modality."""
    if m is None or dim is None:
        return "neutral", None
    if not any(open_for(m, ctype)):
        return "refutes", f"closed at {_hhmm(DAY_PART_ANCHOR[ctype.day_part])}"
    if dim == "late_hours":
        late = open_for(m, ctype, LATE_ANCHOR)
        if all(late):
            return "supports", f"open past {_hhmm(LATE_ANCHOR)}"
        if not any(late):
            return "refutes", f"closed by {_hhmm(LATE_ANCHOR)}"
    elif dim == "budget":
        if m.price_tier <= 2:
            return "supports", f"price tier {m.price_tier}"
        if m.price_tier == 4:
            return "refutes", "price tier 4"
    return "neutral", None


class ReasonerBackend:
    """Interface for Phase-1 query generation and Phase-2 verdicts."""

    def answer(self, query: AffordanceQuery, image_description: str, reviews,
               metadata: Optional[Metadata], c, flags: Optional[AblationFlags] = None) -> Verdict:
        raise NotImplementedError

    def generate(self, prompt: str, temperature: float = 0.0) -> str:
        raise NotImplementedError


def _signal(pos: int, neg: int) -> str:
    if pos > neg:
        return "supports"
    if neg > pos:
        return "refutes"
    return "neutral"


class RuleBackend(ReasonerBackend):
    """Deterministic lexicon reasoner.  Stateless and safe for concurrent use."""

    def __init__(self, staleness_days: float = IMAGE_STALENESS_DAYS, data_dir: Optional[str] = None):
        self.staleness_s = staleness_days * 86400.0
        self.data_dir = data_dir
        self.rules = load_emergent_rules(data_dir)

    def generate(self, prompt: str, temperature: float = 0.0) -> str:
        from .querygen import template_queries

        m = re.search(r"context_type:\s*(\S+)", prompt)
        if not m:
            return "```json\n[]\n```"
        ctype = ContextType.from_key(m.group(1))
        items = [{"text": t, "grounding": sorted(g)} for g, t in template_queries(ctype, self.data_dir)]
        return "```json\n" + json.dumps(items) + "\n```"

    def answer(self, query, image_description, reviews, metadata, c, flags=None) -> Verdict:
        flags = flags or AblationFlags()
        ctype = _ctype(c)
        dim = lexicon.query_dimension(query.text)
        reviews = list(reviews)
        if dim is None:
            return Verdict(Answer.UNCERTAIN, NO_EVIDENCE / 100, steps=(
                StepTrace("verdict", "neutral", "query not covered by the rule lexicon"),))

        veto = evaluate_hard_constraints(metadata, ctype, query)
        evidence = []
        steps = []

        # step 1: visual
        ipos = lexicon.find(dim, "image_pos", image_description)
        ineg = lexicon.find(dim, "image_neg", image_description)
        img = _signal(bool(ipos), bool(ineg))
        for cue in (ipos, ineg):
            if cue:
                evidence.append((Modality.VISUAL.value, f"image: '{cue}'"))
        steps.append(StepTrace("visual", img, f"cues: {ipos or '-'} / {ineg or '-'}"))

        # step 2: reviews (already newest-first)
        pos_reviews, neg_reviews = [], []
        for r in reviews:
            p = lexicon.find(dim, "review_pos", r.text)
            n = lexicon.find(dim, "review_neg", r.text)
            if p and not n:
                pos_reviews.append((r, p))
            elif n and not p:
                neg_reviews.append((r, n))
        for r, cue in pos_reviews + neg_reviews:
            evidence.append((Modality.REVIEW.value, f"[t={r.created_at:.0f}] '{cue}'"))
        rev = _signal(len(pos_reviews), len(neg_reviews))
        steps.append(StepTrace("review", rev, f"{len(pos_reviews)} supporting, {len(neg_reviews)} refuting"))

        # step 3: metadata
        meta, meta_cite = metadata_signal(dim, metadata, ctype)
        if meta_cite:
            evidence.append((Modality.METADATA.value, meta_cite))
        steps.append(StepTrace("metadata", meta, meta_cite or "no applicable predicate"))

        if veto is not None:
            steps.append(StepTrace("verdict", "refutes", "metadata veto overrides other evidence"))
            return replace(veto, evidence=tuple(evidence) or veto.evidence, steps=tuple(steps))

        # step 4: synthesis
        emergent = None
        if not flags.disable_emergent:
            for rule in self.rules:
                if rule.dimension != dim or metadata is None:
                    continue
                icue = _phrase_re(rule.image_cues).search(image_description or "")
                rcue = next((r for r in reviews if _phrase_re(rule.review_cues).search(r.text)), None)
                if icue and rcue and metadata.review_count >= rule.min_review_count:
                    emergent = rule.conclusion
                    evidence.append((Modality.VISUAL.value, f"image: '{icue.group(0)}'"))
                    evidence.append((Modality.REVIEW.value, f"[t={rcue.created_at:.0f}] "
                                     f"'{_phrase_re(rule.review_cues).search(rcue.text).group(0)}'"))
                    evidence.append((Modality.METADATA.value, f"review_count {metadata.review_count}"))
                    break
            steps.append(StepTrace("synthesis", "supports" if emergent else "neutral",
                                   emergent or "no cross-modal conclusion"))

        # step 5: verdict
        signals = {"visual": img, "review": rev, "metadata": meta}
        sup = [m for m, s in signals.items() if s == "supports"]
        ref = [m for m, s in signals.items() if s == "refutes"]
        n_sup = (img == "supports") + len(pos_reviews) + (meta == "supports")
        n_ref = (img == "refutes") + len(neg_reviews) + (meta == "refutes")
        conflict = None
        if emergent:
            answer, h = Answer.YES, BASE + STEP * (3 + n_sup)
        elif sup and ref and not flags.disable_conflict:
            answer = Answer.UNCERTAIN
            h, conflict = self._conflict(signals, ipos or ineg, pos_reviews, neg_reviews,
                                         meta_cite, reviews)
        elif sup and ref:
            net = n_sup - n_ref
            answer = Answer.YES if net > 0 else Answer.NO if net < 0 else Answer.UNCERTAIN
            h = BASE + STEP * abs(net)
        elif sup:
            weak = len(neg_reviews) if rev != "refutes" else 0
            answer, h = Answer.YES, BASE + STEP * (n_sup - weak)
        elif ref:
            weak = len(pos_reviews) if rev != "supports" else 0
            answer, h = Answer.NO, BASE + STEP * (n_ref - weak)
        elif pos_reviews or neg_reviews:
            answer, h = Answer.UNCERTAIN, BASE
        else:
            answer, h = Answer.UNCERTAIN, NO_EVIDENCE
        h = max(0, min(100, h))
        steps.append(StepTrace("verdict", {"yes": "supports", "no": "refutes"}.get(answer.value, "neutral"),
                               conflict or f"{answer.value} at {h / 100:.2f}"))
        return Verdict(answer, h / 100, evidence=tuple(evidence), emergent=emergent,
                       conflict=conflict, steps=tuple(steps))

    def _conflict(self, signals, img_cue, pos_reviews, neg_reviews, meta_cite, reviews):
        """Confidence (hundredths) and description for contradictory modalities."""
        review_side = pos_reviews if signals["review"] == "supports" else neg_reviews
        reference = max((r.created_at for r in reviews), default=None)
        if signals["review"] != "neutral" and signals["visual"] not in ("neutral", signals["review"]):
            newest = max(r.created_at for r, _ in review_side)
            cue = review_side[0][1]
            if reference is not None and reference - newest <= self.staleness_s:
                h = BASE + STEP * len(review_side) + PRECEDENCE_BONUS
                return h, (f"Visual/textual contradiction: image shows '{img_cue}' but recent "
                           f"reviews report '{cue}'; recent reviews take precedence over the image")
            return BASE, f"Visual/textual contradiction: image shows '{img_cue}' but reviews report '{cue}'"
        a, b = [m for m, s in signals.items() if s == "supports"][0], \
            [m for m, s in signals.items() if s == "refutes"][0]
        return BASE, f"{a} evidence supports the query but {b} evidence ({meta_cite or 'reviews'}) refutes it"


@lru_cache(maxsize=4)
def _verdict_template(version: str = "v1") -> str:
    return resources.files("affrec").joinpath("prompts", version, "verdict.txt").read_text(encoding="utf-8")


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def parse_verdict_response(text: str) -> Verdict:
    """Strictly validate a fenced JSON verdict block."""
    m = _FENCE.search(text)
    if not m:
        raise ResponseFormatError("no fenced JSON block in response")
    try:
        data = json.loads(m.group(1))
    except json.JSONDecodeError as exc:
        raise ResponseFormatError(f"invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ResponseFormatError("verdict must be a JSON object")
    expected = {"answer", "confidence", "evidence", "emergent", "conflict"}
    if set(data) != expected:
        raise ResponseFormatError(f"verdict keys must be exactly {sorted(expected)}")
    if data["answer"] not in ("yes", "no", "uncertain"):
        raise ResponseFormatError(f"bad answer {data['answer']!r}")
    conf = data["confidence"]
    if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0 <= conf <= 1:
        raise ResponseFormatError(f"bad confidence {conf!r}")
    ev = data["evidence"]
    if not isinstance(ev, dict) or not set(ev) <= {m.value for m in Modality}:
        raise ResponseFormatError("evidence must map modalities to citation lists")
    evidence = []
    for mod in sorted(ev):
        if not isinstance(ev[mod], list) or not all(isinstance(x, str) for x in ev[mod]):
            raise ResponseFormatError(f"evidence[{mod}] must be a list of strings")
        evidence.extend((mod, x) for x in ev[mod])
    for key in ("emergent", "conflict"):
        if data[key] is not None and not isinstance(data[key], str):
            raise ResponseFormatError(f"{key} must be a string or null")
    if data["conflict"] and data["answer"] != "uncertain":
        raise ResponseFormatError("a conflict requires answer=uncertain")
    answer = Answer(data["answer"])
    steps = tuple(StepTrace(m.value, "supports" if ev.get(m.value) else "neutral",
                            "; ".join(ev.get(m.value, [])) or "no evidence cited") for m in Modality)
    steps += (StepTrace("synthesis", "supports" if data["emergent"] else "neutral",
                        data["emergent"] or "no cross-modal conclusion"),
              StepTrace("verdict", {"yes": "supports", "no": "refutes"}.get(answer.value, "neutral"),
                        data["conflict"] or answer.value))
    return Verdict(answer, float(conf), evidence=tuple(evidence), emergent=data["emergent"] or None,
                   conflict=data["conflict"] or None, steps=steps)


class RemoteBackend(ReasonerBackend):
    """Backend calling an HTTP endpoint: POST {prompt, temperature, max_tokens} -> {text}."""

    def __init__(self, url: str, timeout_ms: int = 30000, max_tokens: int = 512, temperature: float = 0.0):
        if not url:
            raise ValidationError("remote backend requires a url")
        self.url = url
        self.timeout = timeout_ms / 1000.0
        self.max_tokens = max_tokens
        self.temperature = temperature

    def generate(self, prompt: str, temperature: float = 0.0) -> str:
        body = json.dumps({"prompt": prompt, "temperature": temperature,
                           "max_tokens": self.max_tokens}).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode())
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            raise BackendUnavailable(f"{self.url}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ResponseFormatError(f"non-JSON body from {self.url}") from exc
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise ResponseFormatError("response body must be {\"text\": str}")
        return payload["text"]

    def answer(self, query, image_description, reviews, metadata, c, flags=None) -> Verdict:
        ctype = _ctype(c)
        review_block = "\n".join(f"- [t={r.created_at:.0f}] {r.text}" for r in reviews) or "(none)"
        meta_block = json.dumps(metadata.to_dict(), sort_keys=True) if metadata else "(none)"
        ctx = ctype.key if isinstance(c, ContextType) else json.dumps(c.to_dict(), sort_keys=True)
        prompt = _verdict_template().format(context=ctx, query=query.text, image=image_description or "(none)",
                                            reviews=review_block, metadata=meta_block)
        if flags and flags.disable_emergent:
            prompt += "\nSkip step 4; report emergent as null.\n"
        if flags and flags.disable_conflict:
            prompt += "\nDo not flag conflicts; average the modalities instead.\n"
        return parse_verdict_response(self.generate(prompt, self.temperature))


def _fuse_late(per_modality: list) -> Verdict:
    """Average independent single-modality verdicts (no veto, emergence or conflict flag)."""
    votes = [{"yes": 1, "no": -1}.get(v.answer.value, 0) * v.confidence for v in per_modality]
    total = sum(votes)
    if total > 1e-12:
        answer = Answer.YES
    elif total < -1e-12:
        answer = Answer.NO
    else:
        answer = Answer.UNCERTAIN
    agree = [v.confidence for v in per_modality if v.answer is answer] or [v.confidence for v in per_modality]
    conf = round(sum(agree) / len(agree), 6)
    evidence = tuple(e for v in per_modality for e in v.evidence)
    steps = tuple(StepTrace(m.value, {"yes": "supports", "no": "refutes"}.get(v.answer.value, "neutral"),
                            f"independent {m.value} agent: {v.answer.value} {v.confidence:.2f}")
                  for m, v in zip(Modality, per_modality))
    steps += (StepTrace("verdict", "neutral", f"late fusion: {answer.value}"),)
    return Verdict(answer, conf, evidence=evidence, steps=steps)


def _error_verdict(exc: Exception) -> Verdict:
    return Verdict(Answer.UNCERTAIN, 0.0, evidence=((Modality.METADATA.value, "backend_error"),),
                   steps=(StepTrace("verdict", "neutral", f"backend_error: {exc}"),))


def infer_verdicts(queries, content: MultimodalContent, c, backend: ReasonerBackend,
                   ablation: Optional[AblationFlags] = None, *, cutoff: float = float("inf"),
                   l: int = RECENT_REVIEWS, fail_open: bool = False) -> list:
    """Phase 2 for every query: one Verdict per query, in query order."""
    flags = ablation or AblationFlags()
    image = "" if flags.drop_image else content.image_description
    reviews = [] if flags.drop_reviews else select_recent_reviews(content.reviews, l, cutoff)
    metadata = None if flags.drop_metadata else content.metadata
    out = []
    for q in queries:
        try:
            if flags.late_fusion_only:
                parts = [backend.answer(q, image, [], None, c, flags),
                         backend.answer(q, "", reviews, None, c, flags),
                         backend.answer(q, "", [], metadata, c, flags)]
                out.append(_fuse_late(parts))
                continue
            veto = evaluate_hard_constraints(metadata, c, q)
            v = backend.answer(q, image, reviews, metadata, c, flags)
            if veto is not None and v.answer is not Answer.NO:
                v = veto
            elif veto is not None:
                v = replace(v, confidence=1.0, conflict=None, emergent=None)
            out.append(v)
        except (BackendUnavailable, ResponseFormatError) as exc:
            if not fail_open:
                raise
            log.warning("backend failure on query %d: %s", q.index, exc)
            out.append(_error_verdict(exc))
    return out


def infer_affordance(queries, content: MultimodalContent, c, backend: ReasonerBackend,
                     ablation: Optional[AblationFlags] = None, *, poi_id: str = "", alpha: float = 0.5,
                     cutoff: float = float("inf"), l: int = RECENT_REVIEWS, fail_open: bool = False):
    """JointInfer: the context-conditioned representation of one POI."""
    from .affordance import UncertaintyConfig, assemble_representation

    flags = ablation or AblationFlags()
    verdicts = infer_verdicts(queries, content, c, backend, flags, cutoff=cutoff, l=l, fail_open=fail_open)
    cfg = UncertaintyConfig(1.0 if flags.alpha_one else alpha)
    return assemble_representation(poi_id, _ctype(c), list(zip(queries, verdicts)), cfg)


def review_cutoff_index(sorted_times: list, cutoff: float) -> int:
    """Number of reviews created at or before ``cutoff`` given ascending times."""
    return bisect.bisect_right(sorted_times, cutoff)
