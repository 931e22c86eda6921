# %% [markdown]
# # Training McM on a toy code-switched corpus
#
# McM runs three feature learners side by side (a stacked CNN, a stacked
# LSTM and a single LSTM) over the same word embeddings. Each learner gets
# its own softmax head, and a discriminator classifies their concatenated
# features. Training minimises the final cross-entropy plus the three
# auxiliary ones.
#
# Real Roman Urdu tweets aren't bundled, so we make up short sentences whose
# label is carried by one cue word.

# %%
import numpy as np

from mcm import Example, McM, McMConfig, Rng, TrainConfig, evaluate, stratified_split, train
from mcm.data import build_vocab, make_batches
from mcm.embeddings import init_random

CUES = {
    "negative": ["bura", "kharab", "bad", "ganda"],
    "positive": ["acha", "zabardast", "good", "khush"],
    "neutral": ["aaj", "kal", "news", "khabar"],
}
FILLER = ["hai", "ka", "ki", "the", "is", "bhi", "ye", "wo", "main", "to", "and"]

g = np.random.default_rng(0)
examples = []
for i in range(240):
    label = list(CUES)[i % 3]
    words = list(g.choice(FILLER, size=int(g.integers(3, 9))))
    words[int(g.integers(len(words)))] = str(g.choice(CUES[label]))
    examples.append(Example(" ".join(words), label))

train_split, test_split = stratified_split(examples, 0.2, Rng(0))
print(len(train_split), "train /", len(test_split), "test", train_split.class_counts)

# %% [markdown]
# The vocabulary comes from the training split only. Narrow widths keep this
# quick; `McMConfig()` gives the full-size model.

# %%
vocab = build_vocab(train_split, min_freq=1)
rng = Rng(1)
cfg = McMConfig(filters=32, lstm_units=32, learner_widths=(32, 16), discriminator_widths=(32, 16))
model = McM(cfg, init_random(vocab, 50, rng), vocab, rng)

# every softmax head starts at zero, so all four predict exactly 1/3
batch = next(make_batches(test_split.examples[:2], vocab))
for head in model(batch).heads:
    print(head.data[0])

# %%
ckpt, log = train(model, train_split, test_split, TrainConfig(epochs=15, patience=5, batch_size=32, seed=1))
for rec in log.records:
    print(f"epoch {rec.epoch:2d}  train loss {rec.train_loss:.3f}  eval loss {rec.eval_loss:.3f}  acc {rec.metrics.accuracy:.3f}")
print(log.stop_reason, "- best epoch", log.best_epoch)

# %% [markdown]
# The returned checkpoint holds the best epoch's weights; evaluating it
# rebuilds the model from the checkpoint alone.

# %%
metrics = evaluate(ckpt, test_split)
print(metrics.summary())
print(np.array(metrics.confusion))
