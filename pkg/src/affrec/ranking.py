"""Affordance-need alignment scoring, top-N selection, explanations, and the
static bilinear baseline together with its impossibility demonstration."""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .affordance import display2, to_canonical_obj
from .domain import (
    AffordanceRepresentation,
    Answer,
    LengthMismatch,
    PreferenceVector,
    RankedItem,
)


@dataclass
class OpCounter:
    enabled: bool = False
    multiplies: int = 0
    adds: int = 0

    def reset(self) -> None:
        self.multiplies = self.adds = 0


# debug instrumentation for score(); off by default
OPS = OpCounter()


def _weights(phi) -> tuple:
    return phi.weights if isinstance(phi, PreferenceVector) else tuple(phi)


def _effective(rep) -> tuple:
    return rep.effective if isinstance(rep, AffordanceRepresentation) else tuple(rep)


def score(phi, rep) -> float:
    """sum_i phi_i * effective_i: K multiplies and K-1 adds."""
    w, e = _weights(phi), _effective(rep)
    if len(w) != len(e):
        raise LengthMismatch(f"phi has {len(w)} weights, representation has {len(e)} entries")
    acc = w[0] * e[0]
    for i in range(1, len(w)):
        acc += w[i] * e[i]
    if OPS.enabled:
        OPS.multiplies += len(w)
        OPS.adds += len(w) - 1
    return acc


def score_matrix(phi, effective: np.ndarray) -> np.ndarray:
    """Scores for an (N, K) matrix of effective confidences.

    Accumulates column by column in the same order as ``score`` so both give
    bit-identical results.
    """
    w = _weights(phi)
    if effective.shape[1] != len(w):
        raise LengthMismatch(f"phi has {len(w)} weights, matrix has {effective.shape[1]} columns")
    acc = w[0] * effective[:, 0]
    for i in range(1, len(w)):
        acc += w[i] * effective[:, i]
    return acc


def top_n(candidates, n: int, explanations: Optional[dict] = None) -> list:
    """Highest scores first; ties broken by ascending poi_id."""
    if n < 1:
        raise ValueError("n must be >= 1")
    best = heapq.nsmallest(n, candidates, key=lambda ps: (-ps[1], ps[0]))
    explanations = explanations or {}
    return [RankedItem(pid, s, explanations.get(pid, "")) for pid, s in best]


def top_n_arrays(ids, scores: np.ndarray, n: int) -> list:
    """``top_n`` over parallel arrays, selecting with argpartition first."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = len(scores)
    if m == 0:
        return []
    if n < m:
        kth = np.partition(scores, m - n)[m - n]
        sel = np.flatnonzero(scores >= kth)
    else:
        sel = np.arange(m)
    picked = sorted(((ids[i], float(scores[i])) for i in sel), key=lambda ps: (-ps[1], ps[0]))
    return [RankedItem(pid, s) for pid, s in picked[:n]]


def rank_of(target_index: int, ids, scores: np.ndarray) -> int:
    """1-based position of one candidate in the full tie-broken ranking."""
    t = scores[target_index]
    above = int(np.count_nonzero(scores > t))
    tied = np.flatnonzero(scores == t)
    tid = ids[target_index]
    return above + 1 + sum(1 for i in tied if ids[i] < tid)


def render_explanation(rep: AffordanceRepresentation, phi) -> str:
    w = _weights(phi)
    if len(w) != rep.k:
        raise LengthMismatch("phi and representation disagree on K")
    lines = [f"POI {rep.poi_id} | context {rep.context_type.key}"]
    for (q, v), eff, wi in zip(rep.entries, rep.effective, w):
        lines.append(f"Q{q.index}: {q.text}")
        lines.append(f"  answer {v.answer.value} | confidence {display2(v.confidence)} | "
                     f"effective {display2(eff)} | weight {display2(wi)}")
        if v.answer is Answer.UNCERTAIN:
            lines.append(f"  uncertainty adjustment: {rep.alpha:g} × {display2(v.confidence)} = {display2(eff)}")
        for mod in ("visual", "review", "metadata"):
            cites = v.evidence_for(mod)
            if cites:
                lines.append(f"  evidence [{mod}]: " + "; ".join(cites))
        if v.emergent:
            lines.append(f"  emergent: {v.emergent}")
        if v.conflict:
            lines.append(f"  conflict: {v.conflict}")
    total = score(w, rep)
    terms = " + ".join(f"{display2(wi)}×{display2(e)}" for wi, e in zip(w, rep.effective))
    lines.append(f"score = {terms} = {display2(total)}")
    return "\n".join(lines)


def explanation_json(rep: AffordanceRepresentation, phi) -> dict:
    obj = to_canonical_obj(rep)
    obj["weights"] = [f"{x:.6f}" for x in _weights(phi)]
    obj["score"] = f"{score(phi, rep):.6f}"
    return obj


@dataclass
class StaticBilinearModel:
    """s(u, p, c) = e_u(c)^T W e_p with a context-free item embedding."""

    item_embeddings: dict
    user_context_encoder: Callable
    W: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.dim = self.W.shape[1]
        for pid, e in self.item_embeddings.items():
            if np.shape(e) != (self.dim,):
                raise LengthMismatch(f"embedding of {pid} has shape {np.shape(e)}, expected ({self.dim},)")

    def embedding(self, poi_id) -> np.ndarray:
        # unseen items get a zero embedding
        return np.asarray(self.item_embeddings.get(poi_id, np.zeros(self.dim)), dtype=np.float64)

    def score(self, u, c, poi_id) -> float:
        return float(self.user_context_encoder(u, c) @ self.W @ self.embedding(poi_id))

    def score_all(self, u, c, poi_ids) -> np.ndarray:
        E = np.stack([self.embedding(p) for p in poi_ids])
        return E @ (self.W.T @ self.user_context_encoder(u, c))


@dataclass(frozen=True)
class ImpossibilityReport:
    d: int
    per_context_shortfall: tuple
    compromise_loss: float
    static_vector: tuple = ()

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "shortfall": list(self.per_context_shortfall),
                           "loss": self.compromise_loss})


def demonstrate_impossibility(d: int, directions: Optional[np.ndarray] = None) -> ImpossibilityReport:
    """Best unit-norm static vector for two contexts each demanding score 1.

    For orthonormal constraint directions the optimum is their bisector and
    every context falls short by 1 - 1/sqrt(2) whatever ``d`` is.
    """
    if d < 2:
        raise ValueError("need d >= 2")
    if directions is None:
        directions = np.eye(2, d)
    U = np.asarray(directions, dtype=np.float64)
    if U.shape != (2, d):
        raise ValueError(f"directions must have shape (2, {d})")
    if not np.allclose(np.linalg.norm(U, axis=1), 1.0, atol=1e-12):
        raise ValueError("constraint directions must be unit vectors")
    x, *_ = np.linalg.lstsq(U, np.ones(2), rcond=None)
    e = x / np.linalg.norm(x)
    shortfall = 1.0 - U @ e
    shortfall = np.where(np.abs(shortfall) < 1e-15, 0.0, shortfall)
    return ImpossibilityReport(d, tuple(shortfall.tolist()), float(shortfall.max()), tuple(e.tolist()))


def remark_identity_error(n: int = 1000, d_u: int = 8, d: int = 16, seed: int = 0) -> float:
    """Largest |e_u^T W(c) e_p - (W(c)^T e_u)^T e_p| over random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        e_u, W, e_p = rng.normal(size=d_u), rng.normal(size=(d_u, d)), rng.normal(size=d)
        lhs = e_u @ (W @ e_p)
        rhs = (W.T @ e_u) @ e_p
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return worst


COMPROMISE_LOSS = 1.0 - 1.0 / math.sqrt(2.0)
