"""Affordance and query-set caches, invalidation, and trajectory prefetching.

Cache keys are ``(poi_id, context_type_key, *variant)``; the first element
must be the POI so metadata updates can evict every context of a venue.
Misses are single-flight: concurrent callers for one key share one
computation.
"""
from __future__ import annotations

import itertools
import logging
import math
import queue
import threading
import time
from collections import OrderedDict
from concurrent.futures import Future
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .affordance import decode, encode
from .domain import AffordanceRepresentation, ContextType, GeoPoint

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 10**6
EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class CacheEntry:
    key: tuple
    value: str                      # canonical encoding
    inserted_at: float
    metadata_version: int
    rep: AffordanceRepresentation = field(compare=False, repr=False)


class AffordanceCache:
    """Bounded LRU of canonical-encoded representations with single-flight misses."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY, ttl_s: Optional[float] = None,
                 clock: Callable[[], float] = time.time):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.ttl_s = ttl_s
        self.clock = clock
        self._lock = threading.Lock()
        self._entries: OrderedDict = OrderedDict()
        self._by_poi: dict = {}
        self._inflight: dict = {}
        self._versions: dict = {}
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.inferences = 0
        self.prefetch_inferences = 0

    def version(self, poi_id) -> int:
        with self._lock:
            return self._versions.get(poi_id, 0)

    def _live(self, key) -> Optional[CacheEntry]:
        e = self._entries.get(key)
        if e is None:
            return None
        if self.ttl_s is not None and self.clock() - e.inserted_at > self.ttl_s:
            self._drop(key)
            return None
        return e

    def _drop(self, key) -> None:
        self._entries.pop(key, None)
        keys = self._by_poi.get(key[0])
        if keys is not None:
            keys.discard(key)
            if not keys:
                del self._by_poi[key[0]]
        self.evictions += 1

    def contains(self, key) -> bool:
        with self._lock:
            return self._live(key) is not None

    def pending(self, key) -> bool:
        with self._lock:
            return key in self._inflight

    def peek(self, key) -> Optional[AffordanceRepresentation]:
        """Cached value without touching counters or recency."""
        with self._lock:
            e = self._live(key)
            return e.rep if e else None

    def get_or_infer(self, key: tuple, infer_fn: Callable[[], AffordanceRepresentation],
                     *, prefetch: bool = False, cacheable: Callable[[AffordanceRepresentation], bool] = None):
        """Return ``(representation, hit)``; at most one ``infer_fn`` runs per key.

        Results rejected by ``cacheable`` are handed to the waiting callers
        but not stored.
        """
        with self._lock:
            e = self._live(key)
            if e is not None:
                self._entries.move_to_end(key)
                if not prefetch:
                    self.hits += 1
                return e.rep, True
            if not prefetch:
                self.misses += 1
            fut = self._inflight.get(key)
            owner = fut is None
            if owner:
                fut = Future()
                self._inflight[key] = fut
                version = self._versions.get(key[0], 0)
                if prefetch:
                    self.prefetch_inferences += 1
                else:
                    self.inferences += 1
        if not owner:
            return fut.result(), False
        try:
            rep = infer_fn()
            text = encode(rep)
            rep = decode(text)
        except BaseException as exc:
            with self._lock:
                if self._inflight.get(key) is fut:
                    del self._inflight[key]
            fut.set_exception(exc)
            raise
        with self._lock:
            if self._inflight.get(key) is fut:
                del self._inflight[key]
            # an invalidation during inference makes the result stale for later readers
            if self._versions.get(key[0], 0) == version and (cacheable is None or cacheable(rep)):
                self._entries[key] = CacheEntry(key, text, self.clock(), version, rep)
                self._entries.move_to_end(key)
                self._by_poi.setdefault(key[0], set()).add(key)
                while len(self._entries) > self.capacity:
                    self._drop(next(iter(self._entries)))
        fut.set_result(rep)
        return rep, False

    def invalidate(self, poi_id) -> int:
        """Evict every cached context of ``poi_id`` and bump its metadata version."""
        with self._lock:
            self._versions[poi_id] = self._versions.get(poi_id, 0) + 1
            keys = list(self._by_poi.get(poi_id, ()))
            for k in keys:
                self._drop(k)
            # later callers must not join computations started on old metadata
            for k in [k for k in self._inflight if k[0] == poi_id]:
                del self._inflight[k]
            return len(keys)

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            self._by_poi.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    @property
    def hit_rate(self) -> float:
        with self._lock:
            total = self.hits + self.misses
            return self.hits / total if total else 0.0

    def snapshot(self) -> dict:
        with self._lock:
            total = self.hits + self.misses
            return {"hits": self.hits, "misses": self.misses,
                    "hit_rate": self.hits / total if total else 0.0,
                    "entries": len(self._entries), "evictions": self.evictions,
                    "inferences": self.inferences, "prefetch_inferences": self.prefetch_inferences}

    def reset_counters(self) -> None:
        with self._lock:
            self.hits = self.misses = self.evictions = 0
            self.inferences = self.prefetch_inferences = 0


class QuerySetCache:
    """Query sets keyed by context type, computed once each."""

    def __init__(self):
        self._lock = threading.Lock()
        self._sets: dict = {}
        self._inflight: dict = {}

    def get_or_generate(self, ctype: ContextType, gen_fn: Callable[[], list]):
        key = ctype.key
        with self._lock:
            if key in self._sets:
                return self._sets[key], True
            fut = self._inflight.get(key)
            owner = fut is None
            if owner:
                fut = self._inflight[key] = Future()
        if not owner:
            return fut.result(), False
        try:
            qs = list(gen_fn())
        except BaseException as exc:
            with self._lock:
                del self._inflight[key]
            fut.set_exception(exc)
            raise
        with self._lock:
            self._sets[key] = qs
            del self._inflight[key]
        fut.set_result(qs)
        return qs, False

    def __len__(self) -> int:
        return len(self._sets)


def invalidate_on_metadata_update(cache: AffordanceCache, poi_id, new_metadata=None,
                                  store: Optional[dict] = None) -> int:
    """Evict the POI's entries and, when a store is given, swap in the new metadata."""
    if store is not None and new_metadata is not None and poi_id in store:
        from dataclasses import replace

        poi = store[poi_id]
        store[poi_id] = replace(poi, content=replace(poi.content, metadata=new_metadata))
    return cache.invalidate(poi_id)


@dataclass(order=True, frozen=True)
class PrefetchTask:
    sort_key: tuple = field(repr=False)
    poi_id: str = field(compare=False)
    context_type: ContextType = field(compare=False)
    enqueued_at: float = field(compare=False)
    priority: float = field(compare=False)


def haversine_many(p: GeoPoint, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    la1, lo1 = math.radians(p.lat), math.radians(p.lon)
    la2, lo2 = np.radians(lats), np.radians(lons)
    h = np.sin((la2 - la1) / 2) ** 2 + math.cos(la1) * np.cos(la2) * np.sin((lo2 - lo1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def project_position(points, now: float, lead_s: float) -> Optional[GeoPoint]:
    """Constant-velocity extrapolation of ``[(GeoPoint, t), ...]`` to ``now + lead_s``."""
    if not points:
        return None
    (p1, t1) = points[-1]
    if len(points) == 1:
        return p1
    (p0, t0) = points[-2]
    dt = t1 - t0
    if dt <= 0:
        return p1
    ahead = (now + lead_s) - t1
    lat = p1.lat + (p1.lat - p0.lat) / dt * ahead
    lon = p1.lon + (p1.lon - p0.lon) / dt * ahead
    lat = min(90.0, max(-90.0, lat))
    lon = (lon + 180.0) % 360.0 - 180.0
    return GeoPoint(lat, lon)


class Prefetcher:
    """Priority queue of (POI, context type) keys drained by background workers.

    ``infer_for(poi_id, ctype)`` computes the representation; workers store it
    through ``cache.get_or_infer`` under ``key_for(poi_id, ctype)``.
    """

    def __init__(self, cache: AffordanceCache, locations: dict, infer_for: Callable,
                 key_for: Callable = lambda pid, ct: (pid, ct.key), *, workers: int = 4,
                 radius_km: float = 2.0, lead_minutes: float = 12.0, autostart: bool = True):
        self.cache = cache
        self.infer_for = infer_for
        self.key_for = key_for
        self.radius_km = radius_km
        self.lead_s = lead_minutes * 60.0
        self.ids = sorted(locations)
        self.locations = {p: locations[p] for p in self.ids}
        self._lats = np.array([self.locations[p].lat for p in self.ids])
        self._lons = np.array([self.locations[p].lon for p in self.ids])
        self._queue: queue.PriorityQueue = queue.PriorityQueue()
        self._pending: set = set()
        self._lock = threading.Lock()
        self._seq = itertools.count()
        self._n_workers = workers
        self._threads: list = []
        self._stop = threading.Event()
        self.completed = 0
        self.failed = 0
        if autostart:
            self.start()

    def start(self) -> None:
        if self._threads:
            return
        self._stop.clear()
        for i in range(self._n_workers):
            t = threading.Thread(target=self._work, name=f"prefetch-{i}", daemon=True)
            t.start()
            self._threads.append(t)

    def close(self) -> None:
        self._stop.set()
        for _ in self._threads:
            self._queue.put((math.inf, math.inf, None))
        for t in self._threads:
            t.join(timeout=5)
        self._threads = []

    def pending_count(self) -> int:
        with self._lock:
            return len(self._pending)

    def drain(self, timeout: Optional[float] = None) -> bool:
        """Block until the queue is empty; False on timeout."""
        deadline = None if timeout is None else time.monotonic() + timeout
        while self.pending_count():
            if deadline is not None and time.monotonic() > deadline:
                return False
            time.sleep(0.002)
        return True

    def candidates(self, center: GeoPoint) -> list:
        """(poi_id, distance_km) within the prefetch radius, nearest first."""
        d = haversine_many(center, self._lats, self._lons)
        sel = np.flatnonzero(d <= self.radius_km)
        return sorted(((self.ids[i], float(d[i])) for i in sel), key=lambda x: (x[1], x[0]))

    def prefetch_for_trajectory(self, u, trajectory, now: float, ctype: ContextType) -> list:
        """Enqueue POIs around the projected position; returns the new tasks."""
        if not trajectory:
            raise ValueError("trajectory must be non-empty")
        points = [(self.locations[p], float(t)) for p, t in trajectory if p in self.locations]
        center = project_position(points, now, self.lead_s)
        if center is None:
            return []
        tasks = []
        for pid, dist in self.candidates(center):
            key = self.key_for(pid, ctype)
            if self.cache.contains(key) or self.cache.pending(key):
                continue
            with self._lock:
                if key in self._pending:
                    continue
                self._pending.add(key)
            prio = 1.0 / (1.0 + dist)
            task = PrefetchTask((-prio, next(self._seq)), pid, ctype, now, prio)
            self._queue.put((-prio, task.sort_key[1], task))
            tasks.append(task)
        log.debug("user %s: %d prefetch tasks", u, len(tasks))
        return tasks

    def _work(self) -> None:
        while not self._stop.is_set():
            _, _, task = self._queue.get()
            if task is None:
                return
            key = self.key_for(task.poi_id, task.context_type)
            try:
                self.cache.get_or_infer(key, lambda: self.infer_for(task.poi_id, task.context_type),
                                        prefetch=True)
                self.completed += 1
            except Exception:
                self.failed += 1
                log.exception("prefetch of %s failed", key)
            finally:
                with self._lock:
                    self._pending.discard(key)

    def snapshot(self) -> dict:
        return {"pending_prefetch": self.pending_count(), "prefetch_completed": self.completed,
                "prefetch_failed": self.failed}
