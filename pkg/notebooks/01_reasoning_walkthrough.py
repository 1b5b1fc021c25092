"""
Reasoning about one venue in one situation
==========================================

A birthday dinner for four on a Friday evening, and a quiet morning of remote
work. We generate the questions each situation cares about, then let the
rule-based reasoner answer them for a handful of hand-made venues.

Run with ``python notebooks/01_reasoning_walkthrough.py``.
"""

# %%
from affrec.affordance import encode
from affrec.cot_engine import AblationFlags, RuleBackend, infer_affordance
from affrec.domain import (Context, GeoPoint, Metadata, MultimodalContent, OpeningHours, Review)
from affrec.querygen import QueryGenConfig, discretize_context, generate_queries
from affrec.ranking import render_explanation

FRI_1930 = 1704483000.0
MON_0900 = 1704099600.0
DAY = 86400.0
backend = RuleBackend()

# %%
# The raw context is reduced to a context type; everything downstream is
# keyed on that type.
birthday = Context.at(FRI_1930, "friends", group_size=4, intent_text="birthday celebration")
work = Context.at(MON_0900, "solo", intent_text="remote work")
for c in (birthday, work):
    print(discretize_context(c).key)

# %%
# Five questions per context type.  Different situations ask different things.
bday_q = generate_queries(birthday, QueryGenConfig(), backend)
work_q = generate_queries(work, QueryGenConfig(), backend)
for q in bday_q:
    print("birthday", q.index, q.text, sorted(q.grounding))
for q in work_q:
    print("work    ", q.index, q.text, sorted(q.grounding))


# %%
def venue(image, reviews, hours=OpeningHours.daily(11 * 60, 24 * 60), tier=2, n_reviews=None):
    rs = tuple(Review(t, ts) for t, ts in sorted(reviews, key=lambda r: r[1]))
    meta = Metadata("restaurant", tier, hours, GeoPoint(40.73, -73.99),
                    len(rs) if n_reviews is None else n_reviews)
    return MultimodalContent(image, rs, meta)


bistro = venue("A busy dining room with dense static seating and a long bar.",
               [("Always full on Fridays.", FRI_1930 - 9 * DAY),
                ("Staff brought out a cake for our table.", FRI_1930 - 30 * DAY)], n_reviews=212)

# %%
# No single source says "book ahead", but crowded fixed seating plus
# "always full" on a popular venue adds up to it.  The emergent line below
# is what the synthesis step contributes.
rep = infer_affordance(bday_q, bistro, birthday, backend, poi_id="bistro")
print(render_explanation(rep, [0.2] * 5))

# %%
# Switching off cross-modal synthesis loses that conclusion.
no_syn = infer_affordance(bday_q, bistro, birthday, backend, AblationFlags.parse("A3"), poi_id="bistro")
print([v.answer.value for v in rep.verdicts], "->", [v.answer.value for v in no_syn.verdicts])

# %%
# The photo looks serene but a recent review complains of construction
# noise.  The reasoner reports the contradiction, answers "uncertain", and
# the representation discounts it by alpha.
library_cafe = venue("A serene reading-room with soft lamps and long tables.",
                     [("Unbearable construction noise next door all week.", MON_0900 - 3 * DAY)],
                     hours=OpeningHours.daily(7 * 60, 19 * 60))
rep = infer_affordance(work_q, library_cafe, work, backend, poi_id="library_cafe")
v = rep.verdicts[0]
print(v.answer.value, v.confidence, v.conflict, rep.effective[0])

# %%
# Opening hours are a hard constraint: a venue that shuts at 18:00 cannot
# host a Friday-evening party, whatever the photos say.
early = venue("Warm lighting and a private room for groups.", [], hours=OpeningHours.daily(8 * 60, 18 * 60))
rep = infer_affordance(bday_q, early, birthday, backend, poi_id="early")
print({q.text[:40]: (v.answer.value, v.confidence) for q, v in rep.entries})

# %%
# Representations have a canonical encoding, which is what the cache stores.
print(encode(rep)[:160], "...")
