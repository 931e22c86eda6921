# %% [markdown]
# # Skip-gram embeddings from a code-switched corpus
#
# The "multilingual" embedding regime trains skip-gram vectors with negative
# sampling on the training tweets themselves. Here the corpus is built from
# two disjoint groups of tokens, so words only ever share a context with
# their own group. After training, a word's nearest neighbours should all
# come from its group.

# %%
import numpy as np

from mcm import Rng, Vocabulary
from mcm.embeddings import SkipGramConfig, SkipGramTrainer, cosine, nearest_neighbors

g = np.random.default_rng(0)
groups = [["acha", "zabardast", "khush", "good", "great"], ["bura", "kharab", "ganda", "bad", "worst"]]
corpus = [[str(w) for w in g.choice(groups[i % 2], size=6)] for i in range(400)]
vocab = Vocabulary.from_corpus(corpus, min_freq=1)
print(len(vocab), "entries including PAD and UNK")

# %% [markdown]
# One iteration is one (center, context) pair plus its negatives. Gradients
# are written by hand; the test suite checks them against the autodiff tape.

# %%
trainer = SkipGramTrainer(vocab, SkipGramConfig(dim=50, iterations=20_000), Rng(0))
emb = trainer.fit(corpus)
losses = np.array(trainer.losses).reshape(10, -1).mean(axis=1)
print("mean loss per tenth of training:", np.round(losses, 3))

# %%
v = emb.vectors
print("cos(acha, khush) =", round(cosine(v[vocab["acha"]], v[vocab["khush"]]), 3))
print("cos(acha, bura)  =", round(cosine(v[vocab["acha"]], v[vocab["bura"]]), 3))
for word in ("acha", "kharab"):
    print(word, "->", [w for w, _ in nearest_neighbors(emb, vocab, word, k=4)])

# %% [markdown]
# The same thing from the shell, writing a word2vec text file:
#
#     mcm embed-train corpus.txt --output vectors.txt --min-freq 1 --neighbors acha
