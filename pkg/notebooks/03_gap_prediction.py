# %% [markdown]
# # Filling in a missing event
#
# Hold out 40% of narratives, delete one event from each and ask every
# method for the missing one.

# %%
from scripthmm import sample_corpus
from scripthmm.pipeline import METHODS, RunConfig, hmm_predictions, make_eval_set, run_method
from scripthmm.synthetic import six_state_script

gen = six_state_script()
train, items = make_eval_set(sample_corpus(gen, 200, seed=0), 0.4, seed=0)
len(train), len(items)

# %%
items[0]

# %% [markdown]
# The generator itself gives a ceiling.

# %%
oracle = sum(p == it.truth for p, it in zip(hmm_predictions(gen, train, items), items))
print("generator", oracle, "/", len(items))

# %%
for m in METHODS:
    correct, _ = run_method(m, train, items, RunConfig(), 10)
    print(f"{m:16s} {correct:3d} / {len(items)}")
