"""Corpus ingestion, preprocessing, evaluation splits, metrics and experiment runners."""
from __future__ import annotations

import bisect
import csv
import io
import json
import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import lexicon
from .affordance import UncertaintyConfig, assemble_representation, effective_confidence
from .cot_engine import AblationFlags, RuleBackend, infer_verdicts
from .domain import (
    Answer,
    CheckIn,
    Context,
    ContextType,
    DayClass,
    Poi,
    Review,
    SocialSituation,
)
from .preference import HistoryIndex, PreferenceConfig, bm25_weights, estimate_weights
from .querygen import QueryGenConfig, discretize_context, fixed_queries, generate_queries_for_type
from .synth import DIMS, SCENARIOS, SyntheticCorpus, generate_synthetic_corpus

__all__ = [
    "AblationFlags", "Corpus", "EmptyAfterFilter", "EvalSplit", "Engine", "EvalReport",
    "ten_core_filter", "derive_social_situation", "compute_metrics", "metrics_from_ranks",
    "make_split", "check_split", "generate_synthetic_corpus", "run_eval", "run_baseline",
    "sweep_alpha", "ablation_grid", "load_corpus", "save_corpus", "prepare_split", "profile_recovery",
    "format_table", "reports_csv", "leakage_violations", "tie_broken_rank",
]

log = logging.getLogger(__name__)

SPLIT_CONFIGS = ("standard", "cold_start", "context_shift")
ALPHA_SWEEP = (0.1, 0.25, 0.5, 0.75, 1.0)
ABLATION_SETS = ("full", "A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A11")
METRIC_KEYS = ("recall@5", "recall@10", "ndcg@5", "ndcg@10")
MIN_TEST_CASES = 3
CORE = 10


class EmptyAfterFilter(ValueError):
    """The k-core filter removed every interaction."""


class SplitInvariantViolation(AssertionError):
    pass


# ---------------------------------------------------------------- corpus io

@dataclass
class Corpus:
    pois: dict                       # poi_id -> Poi with reviews ascending by created_at
    checkins: list
    profiles: Optional[dict] = None  # (poi_id, ctype key) -> {dim: value}, synthetic only

    def __post_init__(self):
        self.ids = sorted(self.pois)
        self._times = {p: [r.created_at for r in self.pois[p].content.reviews] for p in self.ids}
        for p, ts in self._times.items():
            if any(a > b for a, b in zip(ts, ts[1:])):
                raise ValueError(f"reviews of {p} are not sorted by created_at")

    def review_count_before(self, poi_id, cutoff: float) -> int:
        return bisect.bisect_right(self._times[poi_id], cutoff)

    @classmethod
    def from_synthetic(cls, s: SyntheticCorpus) -> "Corpus":
        return cls(dict(s.pois), list(s.checkins), dict(s.profiles))

    def restrict(self, checkins) -> "Corpus":
        return Corpus(self.pois, list(checkins), self.profiles)


def _dump(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in rows)


def save_corpus(corpus, directory) -> None:
    """Write pois.jsonl, reviews.jsonl, checkins.jsonl (and profiles.jsonl when known)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    pois = corpus.pois
    ids = sorted(pois)
    (d / "pois.jsonl").write_text(_dump(pois[p].to_dict() for p in ids), encoding="utf-8")
    (d / "reviews.jsonl").write_text(
        _dump(dict(r.to_dict(), poi_id=p) for p in ids for r in pois[p].content.reviews), encoding="utf-8")
    (d / "checkins.jsonl").write_text(_dump(c.to_dict() for c in corpus.checkins), encoding="utf-8")
    if corpus.profiles:
        rows = [{"poi_id": p, "context_type": k, "values": v} for (p, k), v in sorted(corpus.profiles.items())]
        (d / "profiles.jsonl").write_text(_dump(rows), encoding="utf-8")


def _read_jsonl(path: Path):
    with path.open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path.name}:{n}: {exc}") from None


_SOCIAL_KEYWORDS = (
    (SocialSituation.FAMILY, re.compile(r"\bfamily\b", re.I)),
    (SocialSituation.DATE, re.compile(r"\bdate\b", re.I)),
    (SocialSituation.GROUP, re.compile(r"\bgroup\b", re.I)),
    (SocialSituation.FRIENDS, re.compile(r"\bwe\b", re.I)),
)
_GROUP_TYPES = {"friends": SocialSituation.FRIENDS, "family": SocialSituation.FAMILY,
                "solo": SocialSituation.SOLO}


def derive_social_situation(raw: dict, review_texts=()) -> tuple:
    """(SocialSituation, group_size) from a raw check-in's groupType or a keyword scan."""
    gt = raw.get("groupType")
    if gt is not None and str(gt).lower() in _GROUP_TYPES:
        social = _GROUP_TYPES[str(gt).lower()]
        size = raw.get("group_size", raw.get("groupSize"))
        return social, (int(size) if size and social is not SocialSituation.SOLO else None)
    texts = list(review_texts)
    for social, pat in _SOCIAL_KEYWORDS:
        if any(pat.search(t) for t in texts):
            return social, None
    return SocialSituation.SOLO, None


def load_corpus(directory) -> Corpus:
    """Read the three JSONL files; raw check-ins without a context get one derived."""
    d = Path(directory)
    for name in ("pois.jsonl", "reviews.jsonl", "checkins.jsonl"):
        if not (d / name).exists():
            raise FileNotFoundError(f"missing {d / name}")
    reviews = defaultdict(list)
    for r in _read_jsonl(d / "reviews.jsonl"):
        reviews[r["poi_id"]].append(Review.from_dict(r))
    pois = {}
    for row in _read_jsonl(d / "pois.jsonl"):
        pid = row["poi_id"]
        rs = sorted(reviews.get(pid, ()), key=lambda r: (r.created_at, r.text))
        pois[pid] = Poi.from_dict(row, reviews=tuple(rs))
    checkins = []
    for row in _read_jsonl(d / "checkins.jsonl"):
        if row["poi_id"] not in pois:
            raise ValueError(f"check-in references unknown POI {row['poi_id']!r}")
        if isinstance(row.get("context"), dict):
            checkins.append(CheckIn.from_dict(row))
            continue
        social, size = derive_social_situation(row, [row["review_text"]] if row.get("review_text") else ())
        ts = float(row["timestamp"])
        ctx = Context.at(ts, social, group_size=size, intent_text=row.get("intent_text"))
        checkins.append(CheckIn(str(row["user_id"]), row["poi_id"], ts, ctx))
    profiles = None
    if (d / "profiles.jsonl").exists():
        profiles = {(r["poi_id"], r["context_type"]): r["values"] for r in _read_jsonl(d / "profiles.jsonl")}
    checkins.sort(key=lambda c: (c.timestamp, c.user_id, c.poi_id))
    return Corpus(pois, checkins, profiles)


# ------------------------------------------------------------ preprocessing

def ten_core_filter(checkins, k: int = CORE) -> list:
    """Drop users and POIs with fewer than ``k`` interactions until nothing changes."""
    kept = list(checkins)
    while True:
        users = Counter(c.user_id for c in kept)
        pois = Counter(c.poi_id for c in kept)
        nxt = [c for c in kept if users[c.user_id] >= k and pois[c.poi_id] >= k]
        if len(nxt) == len(kept):
            break
        kept = nxt
    if not kept:
        raise EmptyAfterFilter(f"no interactions survive the {k}-core filter")
    return kept


# ------------------------------------------------------------------ splits

@dataclass
class EvalSplit:
    train: list
    valid: list
    test: list
    config: str
    cold_pois: frozenset = frozenset()

    @property
    def history(self) -> list:
        """Everything observable before the test period."""
        return self.train + self.valid


def _by_user(checkins) -> dict:
    out = defaultdict(list)
    for c in checkins:
        out[c.user_id].append(c)
    for u in out:
        out[u].sort(key=lambda c: (c.timestamp, c.poi_id))
    return out


def _chrono_cut(seq, fractions=(0.8, 0.1)):
    """Cut points of a time-sorted list; equal timestamps never straddle a boundary."""
    n = len(seq)
    a = int(math.floor(fractions[0] * n))
    b = int(math.floor((fractions[0] + fractions[1]) * n))

    def settle(i):
        while 0 < i < n and seq[i].timestamp == seq[i - 1].timestamp:
            i += 1
        return i

    a = settle(a)
    return a, max(a, settle(b))


def make_split(checkins, config: str = "standard", seed: int = 0, cold_fraction: float = 0.3) -> EvalSplit:
    config = config.replace("-", "_")
    users = _by_user(checkins)
    train, valid, test = [], [], []
    if config == "standard":
        for u in sorted(users):
            seq = users[u]
            a, b = _chrono_cut(seq)
            train += seq[:a]
            valid += seq[a:b]
            test += seq[b:]
        return EvalSplit(train, valid, test, config)
    if config == "cold_start":
        pois = sorted({c.poi_id for c in checkins})
        rng = np.random.default_rng(seed)
        n_cold = max(1, int(round(cold_fraction * len(pois))))
        cold = frozenset(pois[i] for i in rng.choice(len(pois), size=n_cold, replace=False))
        for u in sorted(users):
            seq = users[u]
            a, _ = _chrono_cut(seq)
            head, tail = seq[:a], seq[a:]
            warm = [c for c in head if c.poi_id not in cold]
            cut = int(math.floor(len(warm) * 8 / 9))
            train += warm[:cut]
            valid += warm[cut:]
            test += [c for c in tail if c.poi_id in cold]
        return EvalSplit(train, valid, test, config, cold)
    if config == "context_shift":
        for u in sorted(users):
            seq = users[u]
            wk = [c for c in seq if discretize_context(c.context).day_class is DayClass.WEEKDAY]
            cut = int(math.floor(0.9 * len(wk)))
            train += wk[:cut]
            valid += wk[cut:]
            test += [c for c in seq if discretize_context(c.context).day_class is DayClass.WEEKEND]
        return EvalSplit(train, valid, test, config)
    raise ValueError(f"unknown split config {config!r}")


def check_split(split: EvalSplit) -> None:
    """Raise SplitInvariantViolation when the split breaks its configuration's contract."""
    if split.config == "standard":
        tr, va, te = _by_user(split.train), _by_user(split.valid), _by_user(split.test)
        for u in set(tr) | set(va) | set(te):
            parts = [p for p in (tr.get(u), va.get(u), te.get(u)) if p]
            for x, y in zip(parts, parts[1:]):
                if not max(c.timestamp for c in x) < min(c.timestamp for c in y):
                    raise SplitInvariantViolation(f"user {u}: partitions overlap in time")
    elif split.config == "cold_start":
        seen = {c.poi_id for c in split.train} | {c.poi_id for c in split.valid}
        leaked = {c.poi_id for c in split.test} & seen
        if leaked:
            raise SplitInvariantViolation(f"{len(leaked)} test POIs have training check-ins")
    elif split.config == "context_shift":
        for c in split.train + split.valid:
            if discretize_context(c.context).day_class is not DayClass.WEEKDAY:
                raise SplitInvariantViolation("weekend check-in in training data")
        for c in split.test:
            if discretize_context(c.context).day_class is not DayClass.WEEKEND:
                raise SplitInvariantViolation("weekday check-in in test data")
    else:
        raise SplitInvariantViolation(f"unknown config {split.config!r}")


# ----------------------------------------------------------------- metrics

def metrics_from_ranks(ranks, ks=(5, 10)) -> dict:
    """Recall@k and binary-relevance NDCG@k over 1-based ranks of held-out items."""
    r = np.asarray(list(ranks), dtype=np.float64)
    out = {"n_cases": int(r.size)}
    for k in ks:
        hit = r <= k
        out[f"recall@{k}"] = float(hit.mean()) if r.size else 0.0
        gain = np.where(hit, 1.0 / np.log2(r + 1.0), 0.0)
        out[f"ndcg@{k}"] = float(gain.mean()) if r.size else 0.0
    return out


def compute_metrics(ranked_lists, ground_truth, ks=(5, 10)) -> dict:
    ranks = []
    for ranked, target in zip(ranked_lists, ground_truth, strict=True):
        ranked = list(ranked)
        ranks.append(ranked.index(target) + 1 if target in ranked else math.inf)
    return metrics_from_ranks(ranks, ks)


def tie_broken_rank(scores: np.ndarray, target: int) -> int:
    """Rank of ``target`` when ties go to the smaller index (ids are pre-sorted)."""
    t = scores[target]
    return 1 + int(np.count_nonzero(scores > t)) + int(np.count_nonzero(scores[:target] == t))


# --------------------------------------------------------- memoized engine

class Engine:
    """Phase 1 and 2 over a fixed catalog, memoized for evaluation.

    Verdicts are keyed by (POI, context type, query texts, the number of
    reviews visible at the cutoff, inference-relevant flags), so a POI is only
    re-read when new evidence has appeared.
    """

    def __init__(self, corpus: Corpus, backend=None, k: int = 5, l: int = 20):
        self.corpus = corpus
        self.backend = backend or RuleBackend()
        self.k = k
        self.l = l
        self.qcfg = QueryGenConfig(k=k)
        self._queries: dict = {}
        self._verdicts: dict = {}
        self._eff: dict = {}
        self.backend_calls = 0

    def queries(self, ctype: ContextType, flags: AblationFlags = AblationFlags()) -> list:
        key = "*" if flags.fixed_queries else ctype.key
        qs = self._queries.get(key)
        if qs is None:
            qs = fixed_queries(self.k) if flags.fixed_queries \
                else generate_queries_for_type(ctype, self.qcfg, self.backend)
            self._queries[key] = qs
        return qs

    def verdicts(self, poi_id, ctype: ContextType, queries, flags: AblationFlags, cutoff: float) -> tuple:
        n = self.corpus.review_count_before(poi_id, cutoff)
        key = (poi_id, ctype.key, tuple(q.text for q in queries), n, flags.inference_key)
        v = self._verdicts.get(key)
        if v is None:
            content = self.corpus.pois[poi_id].content
            # cutting by count is the same as cutting by time, and shares the key
            eff_cutoff = content.reviews[n - 1].created_at if n else -math.inf
            v = tuple(infer_verdicts(queries, content, ctype, self.backend, flags, cutoff=eff_cutoff, l=self.l))
            self.backend_calls += len(queries)
            self._verdicts[key] = v
        return v

    def effective(self, poi_id, ctype, queries, flags: AblationFlags, alpha: float, cutoff: float) -> np.ndarray:
        a = 1.0 if flags.alpha_one else alpha
        n = self.corpus.review_count_before(poi_id, cutoff)
        key = (poi_id, ctype.key, tuple(q.text for q in queries), n, flags.inference_key, a)
        e = self._eff.get(key)
        if e is None:
            cfg = UncertaintyConfig(a)
            e = np.array([effective_confidence(v, cfg)
                          for v in self.verdicts(poi_id, ctype, queries, flags, cutoff)])
            self._eff[key] = e
        return e

    def representation(self, poi_id, ctype, queries, flags: AblationFlags, alpha: float, cutoff: float):
        a = 1.0 if flags.alpha_one else alpha
        vs = self.verdicts(poi_id, ctype, queries, flags, cutoff)
        return assemble_representation(poi_id, ctype, list(zip(queries, vs)), UncertaintyConfig(a))

    def matrix(self, ctype, queries, flags, alpha, cutoff) -> np.ndarray:
        return np.stack([self.effective(p, ctype, queries, flags, alpha, cutoff) for p in self.corpus.ids])

    def history_index(self, checkins, flags: AblationFlags, alpha: float, leak_cutoff: bool = True):
        def represent(poi_id, visit_context, queries, cutoff):
            return self.representation(poi_id, discretize_context(visit_context), queries, flags, alpha, cutoff)

        return HistoryIndex(checkins, self.corpus.pois, represent, leak_cutoff=leak_cutoff)


# ----------------------------------------------------------------- reports

@dataclass
class EvalReport:
    method: str
    config: str
    flags: str
    alpha: Optional[float]
    metrics: dict
    n_users: int
    dropped_users: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"method": self.method, "config": self.config, "flags": self.flags, "alpha": self.alpha,
                "metrics": self.metrics, "n_users": self.n_users, "dropped_users": self.dropped_users,
                **self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def format_table(reports) -> str:
    """Aligned plain-text table of reports."""
    head = ["method", "config", "flags", "alpha", *METRIC_KEYS, "cases"]
    rows = [[r.method, r.config, r.flags, "-" if r.alpha is None else f"{r.alpha:g}",
             *(f"{r.metrics[k]:.4f}" for k in METRIC_KEYS), str(r.metrics["n_cases"])] for r in reports]
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join(fmt.format(*r) for r in [head, *rows])


def _test_cases(split: EvalSplit, min_cases: int = MIN_TEST_CASES):
    per_user = Counter(c.user_id for c in split.test)
    keep = {u for u, n in per_user.items() if n >= min_cases}
    dropped = len(per_user) - len(keep)
    if dropped:
        log.info("%s split: dropping %d users with fewer than %d test cases", split.config, dropped, min_cases)
    cases = sorted((c for c in split.test if c.user_id in keep), key=lambda c: (c.user_id, c.timestamp))
    return cases, len(keep), dropped


def prepare_split(corpus: Corpus, config: str, seed: int = 0, core: bool = True) -> EvalSplit:
    checkins = ten_core_filter(corpus.checkins) if core else list(corpus.checkins)
    split = make_split(checkins, config, seed)
    check_split(split)
    return split


def run_eval(corpus: Corpus, config: str = "standard", flags: AblationFlags = AblationFlags(),
             alpha: float = 0.5, *, engine: Optional[Engine] = None, split: Optional[EvalSplit] = None,
             seed: int = 0, ks=(5, 10), pref_cfg: PreferenceConfig = PreferenceConfig()) -> EvalReport:
    """Full-catalog evaluation of the affordance pipeline on one split."""
    engine = engine or Engine(corpus)
    split = split or prepare_split(corpus, config, seed)
    cases, n_users, dropped = _test_cases(split)
    idx = engine.history_index(split.history, flags, alpha)
    ids = corpus.ids
    pos = {p: i for i, p in enumerate(ids)}
    ranks = []
    fallbacks = 0
    for ci in cases:
        ctype = discretize_context(ci.context)
        queries = engine.queries(ctype, flags)
        weigh = bm25_weights if flags.bm25_user_weights else estimate_weights
        phi = weigh(ci.user_id, ctype, queries, idx, pref_cfg)
        fallbacks += phi.source.value == "uniform_fallback"
        scores = engine.matrix(ctype, queries, flags, alpha, ci.timestamp) @ np.array(phi.weights)
        ranks.append(tie_broken_rank(scores, pos[ci.poi_id]))
    metrics = metrics_from_ranks(ranks, ks)
    return EvalReport("affordance", split.config, flags.label, alpha, metrics, n_users, dropped,
                      {"uniform_fallback_cases": fallbacks})


# ------------------------------------------------------------ static baseline

def static_item_embeddings(corpus: Corpus, seen=None) -> dict:
    """Context-averaged planted profile over every dimension (the best static encoder)."""
    if corpus.profiles is None:
        raise ValueError("static baseline needs planted profiles")
    keys = [s.key for s in SCENARIOS]
    out = {}
    for p in corpus.ids:
        if seen is not None and p not in seen:
            continue
        vecs = [[corpus.profiles[(p, k)][d] for d in DIMS] for k in keys if (p, k) in corpus.profiles]
        if vecs:
            out[p] = np.mean(np.array(vecs), axis=0)
    return out


def run_baseline(corpus: Corpus, config: str = "standard", *, split: Optional[EvalSplit] = None,
                 seed: int = 0, ks=(5, 10)) -> EvalReport:
    """Bilinear scorer e_u(c)^T W e_p with W = I and a context-free item embedding.

    e_u(c) is the mean embedding of the user's past visits in the same
    context type, or of all past visits when there are none; items without
    training check-ins keep a zero embedding.
    """
    from .ranking import StaticBilinearModel

    split = split or prepare_split(corpus, config, seed)
    cases, n_users, dropped = _test_cases(split)
    seen = {c.poi_id for c in split.history}
    emb = static_item_embeddings(corpus, seen)
    dim = len(DIMS)
    hist = _by_user(split.history)

    def encoder(u, ctype):
        visits = hist.get(u, [])
        same = [c for c in visits if discretize_context(c.context) == ctype]
        use = same or visits
        vecs = [emb[c.poi_id] for c in use if c.poi_id in emb]
        return np.mean(vecs, axis=0) if vecs else np.zeros(dim)

    model = StaticBilinearModel(emb, encoder, np.eye(dim))
    E = np.stack([model.embedding(p) for p in corpus.ids])
    pos = {p: i for i, p in enumerate(corpus.ids)}
    enc_cache: dict = {}
    ranks = []
    for ci in cases:
        ctype = discretize_context(ci.context)
        key = (ci.user_id, ctype)
        if key not in enc_cache:
            enc_cache[key] = model.W.T @ encoder(ci.user_id, ctype)
        ranks.append(tie_broken_rank(E @ enc_cache[key], pos[ci.poi_id]))
    return EvalReport("static_bilinear", split.config, "-", None, metrics_from_ranks(ranks, ks), n_users, dropped)


# ------------------------------------------------------------------- grids

def sweep_alpha(corpus: Corpus, config: str = "standard", alphas=ALPHA_SWEEP, *, engine=None,
                split=None, seed: int = 0) -> list:
    engine = engine or Engine(corpus)
    split = split or prepare_split(corpus, config, seed)
    return [run_eval(corpus, config, AblationFlags(), a, engine=engine, split=split) for a in alphas]


def ablation_grid(corpus: Corpus, config: str = "standard", flag_sets=ABLATION_SETS, alpha: float = 0.5,
                  *, engine=None, split=None, seed: int = 0) -> list:
    engine = engine or Engine(corpus)
    split = split or prepare_split(corpus, config, seed)
    return [run_eval(corpus, config, AblationFlags.parse(f), alpha, engine=engine, split=split)
            for f in flag_sets]


def reports_csv(reports, key: str = "flag_set") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([key, *METRIC_KEYS])
    for r in reports:
        label = f"{r.alpha:g}" if key == "alpha" else r.flags
        w.writerow([label, *(f"{r.metrics[k]:.6f}" for k in METRIC_KEYS)])
    return buf.getvalue()


# ------------------------------------------------------- planted recovery

def profile_recovery(corpus: Corpus, engine: Optional[Engine] = None, tol: float = 0.2) -> float:
    """Share of (POI, scenario) pairs whose inferred effective vector is within ``tol`` (L-inf)."""
    engine = engine or Engine(corpus)
    ok = total = 0
    for s in SCENARIOS:
        ctype = ContextType.from_key(s.key)
        queries = engine.queries(ctype)
        dims = [lexicon.query_dimension(q.text) for q in queries]
        for p in corpus.ids:
            got = engine.effective(p, ctype, queries, AblationFlags(), 0.5, math.inf)
            want = np.array([corpus.profiles[(p, s.key)][d] for d in dims])
            ok += bool(np.max(np.abs(got - want)) <= tol + 1e-12)
            total += 1
    return ok / total


def leakage_violations(engine: Engine, checkins, flags: AblationFlags = AblationFlags()) -> int:
    """Count cited reviews newer than the check-in that produced a training representation."""
    bad = 0
    for ci in checkins:
        ctype = discretize_context(ci.context)
        queries = engine.queries(ctype, flags)
        for v in engine.verdicts(ci.poi_id, ctype, queries, flags, ci.timestamp):
            for mod, cite in v.evidence:
                if mod != "review":
                    continue
                bad += sum(float(t) > ci.timestamp for t in re.findall(r"\[t=(-?\d+)\]", cite))
    return bad
