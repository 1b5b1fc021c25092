"""User-side preference weights over the current query set.

``estimate_weights`` averages the effective confidences of the user's past
visits whose context type matches the current one and softmax-normalizes
them.  ``bm25_weights`` is the LLM-free variant scoring query terms against
review text.  ``PreferenceEstimator`` is the optional trainable layer fitted
with a BPR objective on geographically constrained negatives.
"""
from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .domain import (
    CheckIn,
    ContextType,
    GeoPoint,
    PreferenceSource,
    PreferenceVector,
    haversine_km,
)
from .querygen import discretize_context

log = logging.getLogger(__name__)

MIN_MATCHED_HISTORY = 5
GEO_NEGATIVE_RADIUS_KM = 2.0
WEIGHTS_SCHEMA_VERSION = 1

STOPWORDS = frozenset("""
a an and are as at be by can do does for from has have here in into is it its of on or such
than that the there this to venue with well enough any most more place this when
""".split())


class NoNegativeAvailable(LookupError):
    """No other POI lies within the negative-sampling radius."""


class DivergenceDetected(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class PreferenceConfig:
    min_history: int = MIN_MATCHED_HISTORY
    bm25_k1: float = 1.2
    bm25_b: float = 0.75


def softmax(x) -> np.ndarray:
    z = np.asarray(x, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def uniform(k: int) -> PreferenceVector:
    return PreferenceVector((1.0 / k,) * k, PreferenceSource.UNIFORM_FALLBACK)


def simplex_weights(raw, source) -> PreferenceVector:
    w = softmax(raw)
    # one renormalization pass keeps fsum(w) within an ulp or two of 1
    w = w / math.fsum(w)
    return PreferenceVector(tuple(w.tolist()), source)


class HistoryIndex:
    """Users' check-ins with their visit-time context types.

    ``represent(poi_id, visit_context, queries, cutoff)`` must return the
    representation of a past visit; it is always called with the visit
    context, never the query context.  Results are memoized unless
    ``memoize`` is off (when ``represent`` is itself backed by a cache that
    honours invalidation).
    """

    def __init__(self, checkins, pois: dict, represent: Callable, *, leak_cutoff: bool = True,
                 memoize: bool = True):
        self.pois = pois
        self.represent = represent
        self.leak_cutoff = leak_cutoff
        self.memoize = memoize
        self._by_user: dict = defaultdict(list)
        for ci in sorted(checkins, key=lambda x: (x.user_id, x.timestamp, x.poi_id)):
            self._by_user[ci.user_id].append((ci, discretize_context(ci.context)))
        self._reps: dict = {}

    def users(self) -> list:
        return sorted(self._by_user)

    def checkins(self, user_id) -> list:
        return [ci for ci, _ in self._by_user.get(user_id, ())]

    def matched(self, user_id, ctype: ContextType) -> list:
        return [ci for ci, t in self._by_user.get(user_id, ()) if t == ctype]

    def cutoff(self, ci: CheckIn) -> float:
        return ci.timestamp if self.leak_cutoff else float("inf")

    def representation(self, ci: CheckIn, queries):
        key = (ci.poi_id, discretize_context(ci.context).key, tuple(q.text for q in queries), self.cutoff(ci))
        rep = self._reps.get(key)
        if rep is None:
            rep = self.represent(ci.poi_id, ci.context, queries, self.cutoff(ci))
            if self.memoize:
                self._reps[key] = rep
        return rep


def estimate_weights(u, c, queries, idx: HistoryIndex, cfg: PreferenceConfig = PreferenceConfig()) -> PreferenceVector:
    k = len(queries)
    ctype = c if isinstance(c, ContextType) else discretize_context(c)
    matched = idx.matched(u, ctype)
    if len(matched) < cfg.min_history:
        return uniform(k)
    eff = np.array([idx.representation(ci, queries).effective for ci in matched], dtype=np.float64)
    return simplex_weights(eff.mean(axis=0), PreferenceSource.ESTIMATED)


def phi_hat(u, c, queries, idx: HistoryIndex, cfg: PreferenceConfig = PreferenceConfig()) -> Optional[np.ndarray]:
    """The pre-softmax affinity vector, or None when the fallback applies."""
    ctype = c if isinstance(c, ContextType) else discretize_context(c)
    matched = idx.matched(u, ctype)
    if len(matched) < cfg.min_history:
        return None
    return np.array([idx.representation(ci, queries).effective for ci in matched]).mean(axis=0)


_WORD = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list:
    return _WORD.findall(text.lower())


def query_terms(text: str) -> list:
    seen, out = set(), []
    for t in tokenize(text):
        if t not in STOPWORDS and t not in seen:
            seen.add(t)
            out.append(t)
    return out


def bm25_scores(terms, documents, k1: float = 1.2, b: float = 0.75) -> np.ndarray:
    """Okapi BM25 of one term list against each tokenized document."""
    n = len(documents)
    if n == 0:
        return np.zeros(0)
    lengths = np.array([len(d) for d in documents], dtype=np.float64)
    avgdl = lengths.mean() if lengths.sum() > 0 else 1.0
    tfs = [Counter(d) for d in documents]
    scores = np.zeros(n)
    for t in terms:
        df = sum(1 for tf in tfs if t in tf)
        if df == 0:
            continue
        idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
        for j, tf in enumerate(tfs):
            f = tf.get(t, 0)
            if f:
                scores[j] += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * lengths[j] / avgdl))
    return scores


def bm25_weights(u, c, queries, idx: HistoryIndex, cfg: PreferenceConfig = PreferenceConfig()) -> PreferenceVector:
    """BM25 affinity of each query against the user's context-matched past POIs' reviews."""
    k = len(queries)
    ctype = c if isinstance(c, ContextType) else discretize_context(c)
    matched = idx.matched(u, ctype)
    if len(matched) < cfg.min_history:
        return uniform(k)
    docs = []
    for ci in matched:
        poi = idx.pois[ci.poi_id]
        cutoff = idx.cutoff(ci)
        docs.append(tokenize(" ".join(r.text for r in poi.content.reviews if r.created_at <= cutoff)))
    raw = [bm25_scores(query_terms(q.text), docs, cfg.bm25_k1, cfg.bm25_b).mean() for q in queries]
    return simplex_weights(raw, PreferenceSource.BM25)


class GeoNegativeSampler:
    """Uniform negatives from the disk of radius ``radius_km`` around a positive."""

    def __init__(self, locations: dict, radius_km: float = GEO_NEGATIVE_RADIUS_KM):
        self.radius_km = radius_km
        self.ids = sorted(locations)
        self.locations = {p: locations[p] for p in self.ids}
        self._neighbours: dict = {}

    def neighbours(self, positive) -> list:
        if positive not in self._neighbours:
            here = self.locations[positive]
            self._neighbours[positive] = [p for p in self.ids if p != positive
                                          and haversine_km(here, self.locations[p]) <= self.radius_km]
        return self._neighbours[positive]

    def sample(self, positive, rng: np.random.Generator):
        near = self.neighbours(positive)
        if not near:
            raise NoNegativeAvailable(f"no POI within {self.radius_km} km of {positive}")
        return near[int(rng.integers(len(near)))]

    def sample_or_global(self, positive, rng: np.random.Generator):
        try:
            return self.sample(positive, rng)
        except NoNegativeAvailable:
            log.info("no geo-negative for %s; sampling globally", positive)
            others = [p for p in self.ids if p != positive]
            return others[int(rng.integers(len(others)))]


def _locations(catalog) -> dict:
    out = {}
    for pid, v in catalog.items():
        out[pid] = v if isinstance(v, GeoPoint) else v.location
    return out


def sample_geo_negative(positive, catalog, rng_seed, radius_km: float = GEO_NEGATIVE_RADIUS_KM):
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return GeoNegativeSampler(_locations(catalog), radius_km).sample(positive, rng)


@dataclass
class BPRDataset:
    """Training triples: affinity features, context-type index, and positive / negative confidences."""

    phi_hat: np.ndarray   # (B, K)
    ctype: np.ndarray     # (B,) int index into ctype_keys
    pos: np.ndarray       # (B, K) effective confidences of p+
    neg: np.ndarray       # (B, K) effective confidences of p-
    ctype_keys: tuple

    def __len__(self) -> int:
        return len(self.ctype)


class PreferenceEstimator:
    """phi = softmax(phi_hat + W x), x = [one_hot(context type); phi_hat]."""

    def __init__(self, k: int, ctype_keys):
        self.k = k
        self.ctype_keys = tuple(ctype_keys)
        self.index = {key: i for i, key in enumerate(self.ctype_keys)}
        self.W = np.zeros((k, len(self.ctype_keys) + k))

    def features(self, phi_hat: np.ndarray, ctype_idx: np.ndarray) -> np.ndarray:
        phi_hat = np.atleast_2d(phi_hat)
        onehot = np.zeros((phi_hat.shape[0], len(self.ctype_keys)))
        onehot[np.arange(phi_hat.shape[0]), np.asarray(ctype_idx)] = 1.0
        return np.hstack([onehot, phi_hat])

    def _phi(self, phi_hat, ctype_idx, W=None) -> np.ndarray:
        W = self.W if W is None else W
        z = np.atleast_2d(phi_hat) + self.features(phi_hat, ctype_idx) @ W.T
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def weights(self, phi_hat, ctype: ContextType | str) -> PreferenceVector:
        key = ctype.key if isinstance(ctype, ContextType) else ctype
        if key not in self.index:
            return simplex_weights(phi_hat, PreferenceSource.TRAINED)
        phi = self._phi(np.asarray(phi_hat, dtype=np.float64), [self.index[key]])[0]
        return PreferenceVector(tuple((phi / math.fsum(phi)).tolist()), PreferenceSource.TRAINED)

    def loss_and_grad(self, data: BPRDataset, W=None, l2: float = 0.0):
        """Mean BPR loss -ln sigmoid(phi.(a+ - a-)) and its gradient w.r.t. W."""
        W = self.W if W is None else W
        x = self.features(data.phi_hat, data.ctype)
        phi = self._phi(data.phi_hat, data.ctype, W)
        delta = data.pos - data.neg
        s = np.sum(phi * delta, axis=1)
        loss = np.mean(np.logaddexp(0.0, -s)) + 0.5 * l2 * np.sum(W * W)
        dl_ds = -0.5 * (1.0 - np.tanh(s / 2.0))  # -sigmoid(-s), overflow-free
        dz = dl_ds[:, None] * phi * (delta - s[:, None])
        grad = dz.T @ x / len(s) + l2 * W
        return float(loss), grad

    def to_json(self) -> str:
        return json.dumps({"schema_version": WEIGHTS_SCHEMA_VERSION, "k": self.k,
                           "ctype_keys": list(self.ctype_keys), "W": self.W.tolist()},
                          sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "PreferenceEstimator":
        obj = json.loads(text)
        if obj.get("schema_version") != WEIGHTS_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {obj.get('schema_version')!r}")
        est = cls(obj["k"], obj["ctype_keys"])
        est.W = np.array(obj["W"], dtype=np.float64).reshape(est.W.shape)
        return est


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.5
    steps: int = 100
    l2: float = 0.0


def train_preference_estimator(dataset: BPRDataset, cfg: TrainConfig = TrainConfig(),
                               estimator: Optional[PreferenceEstimator] = None):
    """Full-batch gradient descent on the BPR loss; returns (estimator, loss history)."""
    est = estimator or PreferenceEstimator(dataset.pos.shape[1], dataset.ctype_keys)
    history = []
    for _ in range(cfg.steps):
        loss, grad = est.loss_and_grad(dataset, l2=cfg.l2)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise DivergenceDetected(f"non-finite loss after {len(history)} steps")
        history.append(loss)
        est.W -= cfg.lr * grad
    loss, _ = est.loss_and_grad(dataset, l2=cfg.l2)
    if not math.isfinite(loss):
        raise DivergenceDetected("non-finite final loss")
    history.append(loss)
    return est, history


def build_bpr_dataset(train_checkins, idx: HistoryIndex, queries_for: Callable, represent: Callable,
                      sampler: GeoNegativeSampler, seed: int = 0, cfg: PreferenceConfig = PreferenceConfig()):
    """Triples (u, p+, p-, c) from training check-ins with geo-constrained negatives.

    ``queries_for(ctype)`` gives the query set; ``represent(poi_id, context,
    queries, cutoff)`` the representation used for both sides of a pair.
    """
    rng = np.random.default_rng(seed)
    rows_phi, rows_ct, rows_pos, rows_neg, keys = [], [], [], [], {}
    for ci in sorted(train_checkins, key=lambda x: (x.user_id, x.timestamp)):
        ctype = discretize_context(ci.context)
        queries = queries_for(ctype)
        ph = phi_hat(ci.user_id, ctype, queries, idx, cfg)
        if ph is None:
            ph = np.zeros(len(queries))
        neg = sampler.sample_or_global(ci.poi_id, rng)
        rows_phi.append(ph)
        rows_ct.append(keys.setdefault(ctype.key, len(keys)))
        rows_pos.append(represent(ci.poi_id, ci.context, queries, ci.timestamp).effective)
        rows_neg.append(represent(neg, ci.context, queries, ci.timestamp).effective)
    return BPRDataset(np.array(rows_phi), np.array(rows_ct, dtype=int), np.array(rows_pos),
                      np.array(rows_neg), tuple(keys))
