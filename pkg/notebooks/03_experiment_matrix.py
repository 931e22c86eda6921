# %% [markdown]
# # The experiment matrix
#
# The adaptation study crosses the baselines with two embedding sources and
# two finetuning regimes: 14 trainings in all. Each cell gets its own RNG
# derived from the run seed and the cell id, so cells can run in any order,
# in parallel, or be resumed.
#
# Widths here are tiny so the whole matrix finishes in seconds.

# %%
import numpy as np

from mcm import Example, Rng, TrainConfig, stratified_split
from mcm.training import EmbeddingSource, adaptation_matrix, experiment_matrix, render_table

CUES = {"negative": ["bura", "kharab", "bad"], "positive": ["acha", "good", "khush"], "neutral": ["aaj", "news", "kal"]}
FILLER = ["hai", "ka", "ki", "the", "is", "bhi", "ye", "wo"]
g = np.random.default_rng(3)
examples = []
for i in range(150):
    label = list(CUES)[i % 3]
    words = list(g.choice(FILLER, size=5))
    words[int(g.integers(5))] = str(g.choice(CUES[label]))
    examples.append(Example(" ".join(words), label))
train_split, test_split = stratified_split(examples, 0.2, Rng(0))

cells = adaptation_matrix()
print(len(cells), "cells, e.g.", cells[0].cell_id)

# %%
small = dict(filters=16, hidden=16, lstm_units=16, attention_dim=16)
overrides = {kind: small for kind in ("convnet", "attention_lstm", "simpleconv", "embedding_probe")}
results = experiment_matrix(
    cells,
    train_split,
    test_split,
    TrainConfig(epochs=5, batch_size=32),
    overrides,
    EmbeddingSource(dim=32),
    min_freq=1,
    on_result=lambda r: print(r.cell.cell_id, "ok" if r.ok else r.error),
)

# %% [markdown]
# Rows are (model, embedding); frozen and finetuned scores sit side by side.
# "Pretrained" here is the character-trigram hashing encoder, a stand-in for
# a downloaded embedding file (pass one with `--pretrained-path`).

# %%
print(render_table(results))

# %% [markdown]
# From the shell the same run is
#
#     mcm matrix --data tweets.tsv --jobs 4
#
# which writes cells.json after every cell, plus results.csv and results.txt.
# `--matrix full` adds McM and the skip-gram embeddings (26 cells).
