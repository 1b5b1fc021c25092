"""The online recommendation path and its configuration.

``Recommender.recommend`` runs, in order: discretize the context, fetch or
generate the query set, estimate user weights, fetch or infer each
candidate's representation, score, and select the top N with explanations.
"""
from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .cache_prefetch import AffordanceCache, Prefetcher, QuerySetCache, invalidate_on_metadata_update
from .cot_engine import AblationFlags, BackendUnavailable, RemoteBackend, RuleBackend, infer_affordance
from .domain import Context, ContextType, Metadata, PreferenceVector, RankedItem, ValidationError
from .preference import HistoryIndex, PreferenceConfig, bm25_weights, estimate_weights
from .querygen import QueryGenConfig, discretize_context, fixed_queries, generate_queries_for_type
from .ranking import render_explanation, score_matrix, top_n_arrays

log = logging.getLogger(__name__)

ENV_PREFIX = "AFFREC_"


class UnknownEntity(LookupError):
    """A referenced user or POI does not exist."""


@dataclass(frozen=True)
class ServiceConfig:
    k: int = 5
    alpha: float = 0.5
    geo_negative_radius_km: float = 2.0
    prefetch_radius_km: float = 2.0
    prefetch_workers: int = 4
    cache_capacity: int = 10**6
    backend: str = "rule"
    backend_url: Optional[str] = None
    timeout_ms: int = 30000
    fail_mode: str = "open"
    data_dir: Optional[str] = None
    listen_addr: str = "127.0.0.1:8080"
    ablation: str = ""

    def __post_init__(self):
        for name in ("k", "geo_negative_radius_km", "prefetch_radius_km", "prefetch_workers",
                     "cache_capacity", "timeout_ms"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValidationError("alpha must lie in (0, 1]")
        if self.backend not in ("rule", "remote"):
            raise ValidationError(f"backend must be rule or remote, got {self.backend!r}")
        if self.backend == "remote" and not self.backend_url:
            raise ValidationError("remote backend requires backend_url")
        if self.fail_mode not in ("open", "closed"):
            raise ValidationError(f"fail_mode must be open or closed, got {self.fail_mode!r}")
        try:
            AblationFlags.parse(self.ablation)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None

    @property
    def flags(self) -> AblationFlags:
        return AblationFlags.parse(self.ablation)

    @classmethod
    def _coerce(cls, raw: dict) -> dict:
        types = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, value in raw.items():
            if key not in types:
                raise ValidationError(f"unknown config key {key!r}")
            if value is None or value == "":
                out[key] = None if "Optional" in str(types[key]) else value
                continue
            t = str(types[key])
            try:
                if t == "int":
                    out[key] = int(value)
                elif t == "float":
                    out[key] = float(value)
                else:
                    out[key] = str(value)
            except ValueError:
                raise ValidationError(f"bad value for {key}: {value!r}") from None
        return out

    @classmethod
    def load(cls, path=None, env=None, overrides: Optional[dict] = None) -> "ServiceConfig":
        """Merge sources with precedence: overrides > environment > file > defaults."""
        merged: dict = {}
        if path:
            merged.update(read_config_file(path))
        env = os.environ if env is None else env
        names = {f.name for f in fields(cls)}
        for key, value in env.items():
            if key.startswith(ENV_PREFIX) and key[len(ENV_PREFIX):].lower() in names:
                merged[key[len(ENV_PREFIX):].lower()] = value
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(**cls._coerce(merged))


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{n}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.lower()] = value
    return out


def make_backend(cfg: ServiceConfig):
    if cfg.backend == "remote":
        return RemoteBackend(cfg.backend_url, timeout_ms=cfg.timeout_ms)
    return RuleBackend()


def _is_error(rep) -> bool:
    return any(c == "backend_error" for v in rep.verdicts for _, c in v.evidence)


@dataclass
class Recommendation:
    ranked: list
    cache_hits: int
    misses: int
    scoring_us: float
    context_type: str
    weights: PreferenceVector

    def to_dict(self) -> dict:
        return {
            "context_type": self.context_type,
            "weights": list(self.weights.weights),
            "weights_source": self.weights.source.value,
            "ranked": [{"poi_id": r.poi_id, "score": r.score, "explanation": r.explanation} for r in self.ranked],
            "timing": {"cache_hits": self.cache_hits, "misses": self.misses, "scoring_us": self.scoring_us},
        }


class Recommender:
    """Stateful online recommender over an in-memory POI store."""

    def __init__(self, pois: dict, checkins=(), cfg: ServiceConfig = ServiceConfig(), backend=None,
                 *, start_prefetch: bool = True):
        self.cfg = cfg
        self.flags = cfg.flags
        self.backend = backend or make_backend(cfg)
        self.store = dict(pois)
        self._store_lock = threading.Lock()
        self.cache = AffordanceCache(cfg.cache_capacity)
        self.qcache = QuerySetCache()
        self.qcfg = QueryGenConfig(k=cfg.k, fallback=cfg.fail_mode == "open")
        self.pref_cfg = PreferenceConfig()
        self.users = {c.user_id for c in checkins}
        # history representations come from the same cache, keyed by the visit's context type
        self.history = HistoryIndex(checkins, self.store, self._represent_visit, leak_cutoff=False,
                                    memoize=False)
        self.prefetcher = Prefetcher(self.cache, {p: poi.location for p, poi in self.store.items()},
                                     self._infer, key_for=self._key, workers=cfg.prefetch_workers,
                                     radius_km=cfg.prefetch_radius_km, autostart=start_prefetch)

    def close(self) -> None:
        self.prefetcher.close()

    @staticmethod
    def _key(poi_id, ctype: ContextType) -> tuple:
        return (poi_id, ctype.key)

    def queries(self, ctype: ContextType) -> list:
        if self.flags.fixed_queries:
            return fixed_queries(self.cfg.k)
        qs, _ = self.qcache.get_or_generate(ctype, lambda: generate_queries_for_type(ctype, self.qcfg, self.backend))
        return qs

    def _infer(self, poi_id, ctype: ContextType):
        with self._store_lock:
            poi = self.store[poi_id]
        return infer_affordance(self.queries(ctype), poi.content, ctype, self.backend, self.flags,
                                poi_id=poi_id, alpha=self.cfg.alpha, fail_open=self.cfg.fail_mode == "open")

    def representation(self, poi_id, ctype: ContextType):
        """(representation, hit) through the affordance cache."""
        return self.cache.get_or_infer(self._key(poi_id, ctype), lambda: self._infer(poi_id, ctype),
                                       cacheable=lambda rep: not _is_error(rep))

    def _represent_visit(self, poi_id, visit_context, queries, cutoff):
        return self.representation(poi_id, discretize_context(visit_context))[0]

    def weights(self, user_id, ctype: ContextType, queries) -> PreferenceVector:
        weigh = bm25_weights if self.flags.bm25_user_weights else estimate_weights
        return weigh(user_id, ctype, queries, self.history, self.pref_cfg)

    def recommend(self, user_id, context: Context, candidate_ids=None, n: int = 10) -> Recommendation:
        if n < 1:
            raise ValidationError("n must be >= 1")
        if user_id not in self.users:
            raise UnknownEntity(f"unknown user {user_id!r}")
        if candidate_ids is None:
            candidate_ids = sorted(self.store)
        else:
            candidate_ids = sorted(set(candidate_ids))
            if not candidate_ids:
                raise ValidationError("candidate list is empty")
            missing = [p for p in candidate_ids if p not in self.store]
            if missing:
                raise UnknownEntity(f"unknown POI {missing[0]!r}")
        ctype = discretize_context(context)
        queries = self.queries(ctype)
        phi = self.weights(user_id, ctype, queries)
        reps, hits, misses = [], 0, 0
        for pid in candidate_ids:
            rep, hit = self.representation(pid, ctype)
            reps.append(rep)
            hits += hit
            misses += not hit
        eff = np.array([r.effective for r in reps], dtype=np.float64)
        t0 = time.perf_counter()
        scores = score_matrix(phi, eff)
        top = top_n_arrays(candidate_ids, scores, n)
        scoring_us = (time.perf_counter() - t0) * 1e6
        by_id = dict(zip(candidate_ids, reps))
        ranked = [RankedItem(r.poi_id, r.score, render_explanation(by_id[r.poi_id], phi)) for r in top]
        return Recommendation(ranked, hits, misses, scoring_us, ctype.key, phi)

    def invalidate(self, poi_id, metadata: Optional[Metadata] = None) -> int:
        with self._store_lock:
            if poi_id not in self.store:
                raise UnknownEntity(f"unknown POI {poi_id!r}")
            return invalidate_on_metadata_update(self.cache, poi_id, metadata, self.store)

    def prefetch(self, user_id, trajectory, now: float, context: Optional[Context] = None) -> list:
        if not trajectory:
            raise ValidationError("trajectory must be non-empty")
        for p, _ in trajectory:
            if p not in self.store:
                raise UnknownEntity(f"unknown POI {p!r}")
        ctx = context or Context.at(now, "solo")
        return self.prefetcher.prefetch_for_trajectory(user_id, trajectory, now, discretize_context(ctx))

    def metrics(self) -> dict:
        snap = self.cache.snapshot()
        snap["pending_prefetch"] = self.prefetcher.pending_count()
        snap["query_sets"] = len(self.qcache)
        return snap


def recommender_from_corpus(corpus, cfg: ServiceConfig = ServiceConfig(), backend=None, **kw) -> Recommender:
    return Recommender(corpus.pois, corpus.checkins, cfg, backend, **kw)


__all__ = ["ServiceConfig", "Recommender", "Recommendation", "UnknownEntity", "BackendUnavailable",
           "read_config_file", "recommender_from_corpus"]
