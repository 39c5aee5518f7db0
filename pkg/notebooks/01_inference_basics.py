# %% [markdown]
# # Forward/backward on a tiny model
#
# One state between the sentinels. It emits `a` with probability 0.7 and
# nothing with probability 0.3, so the empty narrative is possible too.

# %%
from scripthmm import NULL, Hmm, posteriors, sequence_likelihood, trellis
from scripthmm.hmm import END, START

h = Hmm((0, 1, 2), {0: {1: 1.0}, 1: {2: 1.0}}, {0: {START: 1.0}, 1: {"a": 0.7, NULL: 0.3}, 2: {END: 1.0}})

# %%
for obs in [(START, END), (START, "a", END), (START, "a", "a", END)]:
    print(obs, sequence_likelihood(h, obs))

# %% [markdown]
# Trellis entries are indexed by (state, time, symbols consumed). Only the
# nonzero ones are dumped.

# %%
tr = trellis(h, (START, "a", END))
print(tr.dump())

# %%
post = posteriors(h, (START, END))
post.visits(), post.delta
