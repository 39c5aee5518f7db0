# %% [markdown]
# # From sentences to event labels
#
# Cluster short sentences into events, then relabel the narratives.

# %%
from scripthmm.extraction import extract, parse_sentence

raw = [
    ["I heard the doorbell.", "I walked to the door.", "I opened the door.", "I closed the door."],
    ["The bell rang and I heard it.", "I opened the front door.", "I let the guest in.", "I shut the door."],
    ["I heard a knock.", "I walked over.", "I opened the door.", "I allowed them in.", "I closed the door."],
]
parse_sentence("I opened the front door.")

# %%
corpus, clustering = extract(raw, threshold=0.5)
for n in corpus:
    print(" ".join(n[1:-1]))

# %%
clustering.labels
