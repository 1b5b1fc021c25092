"""
Why one vector per venue is not enough
======================================

Two contexts ask for orthogonal things from the same venue.  The best single
unit vector is their bisector, and it falls short in both by 1 - 1/sqrt(2)
whatever the dimension.  Then: the optional trained preference layer, fitted
with BPR on negatives sampled within 2 km.
"""

# %%
import numpy as np

from affrec.data_eval import Corpus, Engine, prepare_split
from affrec.preference import (GeoNegativeSampler, PreferenceEstimator, TrainConfig, build_bpr_dataset,
                               train_preference_estimator)
from affrec.cot_engine import AblationFlags
from affrec.querygen import discretize_context
from affrec.ranking import demonstrate_impossibility
from affrec.synth import generate_synthetic_corpus

for d in (2, 16, 512):
    r = demonstrate_impossibility(d)
    print(d, r.per_context_shortfall, round(r.compromise_loss, 10))

# %%
# A random pair of orthonormal demands in 64 dimensions gives the same loss.
q, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(64, 2)))
print(demonstrate_impossibility(64, q.T).compromise_loss)

# %%
corpus = Corpus.from_synthetic(generate_synthetic_corpus(0))
engine = Engine(corpus)
split = prepare_split(corpus, "standard")
flags = AblationFlags()
idx = engine.history_index(split.history, flags, 0.5)
sampler = GeoNegativeSampler({p: corpus.pois[p].location for p in corpus.ids})


def represent(pid, ctx, queries, cutoff):
    return engine.representation(pid, discretize_context(ctx), queries, flags, 0.5, cutoff)


data = build_bpr_dataset(split.train[::4], idx, lambda ct: engine.queries(ct, flags), represent, sampler)
print(len(data), "triples over", len(data.ctype_keys), "context types")

# %%
est, history = train_preference_estimator(data, TrainConfig(lr=0.5, steps=150, l2=1e-3))
print(f"BPR loss {history[0]:.4f} -> {history[-1]:.4f}")
phi_hat = data.phi_hat[0]
print("untrained", np.round(PreferenceEstimator(data.pos.shape[1], data.ctype_keys).weights(
    phi_hat, data.ctype_keys[0]).weights, 3))
print("trained  ", np.round(est.weights(phi_hat, data.ctype_keys[0]).weights, 3))
