"""
Serving recommendations
=======================

The online recommender over the default synthetic city: rank the catalog for
a user, warm the cache ahead of a moving user, update opening hours, and talk
to the same thing over HTTP.
"""

# %%
import json
import time
import urllib.request
from collections import Counter
from dataclasses import replace

from affrec.data_eval import Corpus
from affrec.domain import Context, OpeningHours
from affrec.pipeline import ServiceConfig, recommender_from_corpus
from affrec.querygen import discretize_context
from affrec.service import ServiceThread
from affrec.synth import generate_synthetic_corpus

corpus = Corpus.from_synthetic(generate_synthetic_corpus(0))
rec = recommender_from_corpus(corpus, ServiceConfig(prefetch_workers=4))
print(len(corpus.pois), "POIs,", len(corpus.checkins), "check-ins")

# %%
# Pick the busiest (user, context type) pair so the weights are estimated
# from history rather than uniform, and ask again one week after their last
# visit of that kind.
pairs = Counter((c.user_id, discretize_context(c.context)) for c in corpus.checkins)
(user, ctype), n = pairs.most_common(1)[0]
last = max((c for c in corpus.checkins if c.user_id == user and discretize_context(c.context) == ctype),
           key=lambda c: c.timestamp)
ctx = replace(last.context, timestamp=last.timestamp + 7 * 86400, trajectory=())
print(ctype.key, user, n, "matched visits")

# %%
t0 = time.perf_counter()
out = rec.recommend(user, ctx, n=5)
print(f"cold: {time.perf_counter() - t0:.2f}s, hits {out.cache_hits}, misses {out.misses}")
t0 = time.perf_counter()
out = rec.recommend(user, ctx, n=5)
print(f"warm: {time.perf_counter() - t0:.3f}s, hits {out.cache_hits}, misses {out.misses}")
print("weights", [round(w, 3) for w in out.weights.weights], out.weights.source.value)
print(out.ranked[0].explanation)

# %%
# A user walking north: the prefetcher projects their position twelve
# minutes ahead and warms every POI within 2 km for the coming context.
walk = [(corpus.ids[3], ctx.timestamp - 900), (corpus.ids[3], ctx.timestamp - 300)]
late = Context.at(ctx.timestamp + 3 * 3600, "friends", group_size=4)
tasks = rec.prefetch(user, walk, ctx.timestamp, late)
print(len(tasks), "tasks queued; repeat call queues", len(rec.prefetch(user, walk, ctx.timestamp, late)))
rec.prefetcher.drain(60)
print(rec.metrics())

# %%
# New opening hours evict every cached context of the venue.
top = out.ranked[0].poi_id
old = rec.store[top].content.metadata
evicted = rec.invalidate(top, replace(old, hours=OpeningHours.daily(8 * 60, 18 * 60)))
after = rec.recommend(user, ctx, n=5)
print("evicted", evicted, "| new top:", [r.poi_id for r in after.ranked], "| was", [r.poi_id for r in out.ranked])

# %%
# The same recommender behind the JSON endpoints.
with ServiceThread(rec) as svc:
    body = json.dumps({"user_id": user, "context": ctx.to_dict(), "n": 3}).encode()
    req = urllib.request.Request(svc.url + "/recommend", body, {"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as r:
        print([(x["poi_id"], round(x["score"], 3)) for x in json.loads(r.read())["ranked"]])
    with urllib.request.urlopen(svc.url + "/metrics") as r:
        print(json.loads(r.read()))
rec.close()
