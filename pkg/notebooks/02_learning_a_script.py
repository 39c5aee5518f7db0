# %% [markdown]
# # Learning the doorbell script
#
# Sample narratives from a known six-event generator, learn a model from
# scratch and look at what came out.

# %%
import time

from scripthmm import SearchConfig, ScoreConfig, learn, sample_corpus
from scripthmm.synthetic import six_state_script

gen = six_state_script(null=0.15)
corpus = sample_corpus(gen, 120, seed=4)
corpus.narratives[:5]

# %%
corpus.frequencies.most_common()

# %% [markdown]
# Approximate scoring is much faster and usually lands on the same structure.

# %%
models = {}
for mode in ("exact", "approx"):
    t0 = time.perf_counter()
    res = learn(corpus, SearchConfig(score=ScoreConfig(mode=mode)))
    models[mode] = res
    print(mode, len(res.hmm.states), "states", res.hmm.n_transitions, "edges", f"{time.perf_counter() - t0:.1f}s")

# %%
h = models["exact"].hmm
for q in h.states:
    top = sorted(h.emit[q].items(), key=lambda kv: -kv[1])[:3]
    print(q, "->", sorted(h.trans.get(q, {})), [(o, round(p, 2)) for o, p in top])

# %% [markdown]
# Ordering rules mined from the corpus, with (opportunities, violations). A
# model that can produce a forbidden order pays for it in the prior.

# %%
sorted(models["exact"].constraints.rules.items())[:10]

# %% [markdown]
# Score of each accepted change in the last search.

# %%
models["exact"].searches[-1].scores[:10]
