"""Vocabularies and the three embedding regimes: random uniform vectors,
pretrained vectors read from a text file (with a character n-gram hash
fallback for misses), and skip-gram vectors trained on a local corpus.

Embedding text format, used for reading and writing::

    V d
    token v1 v2 ... vd
    ...
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import Rng, fresh_generator

PAD, UNK = "<pad>", "<unk>"
PAD_INDEX, UNK_INDEX = 0, 1

PROVENANCES = ("random", "pretrained", "multilingual", "char-hash")


class EmbeddingFormatError(ValueError):
    pass


class Vocabulary:
    """Token <-> index map with PAD at 0 and UNK at 1."""

    def __init__(self, tokens: Iterable[str] = (), min_freq: int = 1):
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: PAD_INDEX, UNK: UNK_INDEX}
        self.min_freq = min_freq
        for tok in tokens:
            self.add(tok)

    @classmethod
    def from_counts(cls, counts: Counter, min_freq: int = 2) -> "Vocabulary":
        # frequency-descending, ties alphabetical: independent of input order
        kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        return cls(kept, min_freq=min_freq)

    @classmethod
    def from_corpus(cls, sentences: Iterable[Sequence[str]], min_freq: int = 2) -> "Vocabulary":
        counts: Counter = Counter()
        for sent in sentences:
            counts.update(sent)
        return cls.from_counts(counts, min_freq)

    def add(self, token: str) -> int:
        if token in (PAD, UNK):
            raise ValueError(f"{token!r} is reserved")
        if not token or any(ch.isspace() for ch in token):
            raise ValueError(f"invalid token {token!r}")
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.itos.append(token)
            self.stoi[token] = idx
        return idx

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, UNK_INDEX)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        get = self.stoi.get
        return [get(t, UNK_INDEX) for t in tokens]

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in indices]

    def tokens(self) -> list[str]:
        """Corpus tokens, reserved entries excluded."""
        return self.itos[2:]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)}, min_freq={self.min_freq})"


def encode(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    return vocab.encode(tokens)


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray
    trainable: bool = True
    provenance: str = "random"
    coverage: float | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValueError(f"embedding matrix must be V x d with V >= 2, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("embedding matrix has non-finite entries")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        v[PAD_INDEX] = 0.0
        self.vectors = v

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


# random --------------------------------------------------------------------


def init_random(vocab: Vocabulary, d: int = 300, rng: Rng | None = None, bound: float = 0.05, trainable: bool = True) -> EmbeddingMatrix:
    """Rows i.i.d. U(-bound, bound); the PAD row is zero."""
    if len(vocab) < 2:
        raise ValueError("vocabulary needs at least PAD and UNK")
    gen = (rng or Rng(0)).stream("embedding")
    vectors = gen.uniform(-bound, bound, size=(len(vocab), d))
    return EmbeddingMatrix(vectors, trainable=trainable, provenance="random")


# character n-gram hashing ----------------------------------------------------


def char_ngrams(token: str, n: int = 3) -> list[str]:
    marked = f"<{token}>"
    return [marked[i : i + n] for i in range(len(marked) - n + 1)]


@lru_cache(maxsize=200_000)
def _ngram_basis(ngram: str, d: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(ngram.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little")).digest()
    gen = fresh_generator(seed, int.from_bytes(digest, "little"))
    basis = gen.standard_normal(d)
    basis.flags.writeable = False
    return basis


def char_hash_embed(token: str, d: int, seed: int = 0) -> np.ndarray:
    """Unit-norm sum of pseudo-random basis vectors of the token's character 3-grams.

    Tokens that share 3-grams get correlated vectors, so spelling variants of
    the same word land close together without any training.
    """
    if not token:
        raise ValueError("cannot embed an empty token")
    vec = np.zeros(d)
    for g in char_ngrams(token):
        vec += _ngram_basis(g, d, seed)
    return vec / np.linalg.norm(vec)


def char_hash_matrix(vocab: Vocabulary, d: int, seed: int = 0, trainable: bool = True) -> EmbeddingMatrix:
    vectors = np.zeros((len(vocab), d))
    for i, tok in enumerate(vocab.itos[1:], start=1):
        vectors[i] = char_hash_embed(tok, d, seed)
    return EmbeddingMatrix(vectors, trainable=trainable, provenance="char-hash")


# text file I/O ---------------------------------------------------------------


def read_embedding_file(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8")
    except OSError as exc:
        raise EmbeddingFormatError(f"cannot read embedding file {path}: {exc}") from exc
    with fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise EmbeddingFormatError(f"{path}:1: header must be 'V d'")
        V, d = int(header[0]), int(header[1])
        tokens: list[str] = []
        vectors = np.empty((V, d), dtype=np.float32)
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if parts == [""]:
                continue
            if len(parts) != d + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: token {parts[0]!r} has {len(parts) - 1} values, expected dimension {d}"
                )
            if len(tokens) >= V:
                raise EmbeddingFormatError(f"{path}:{lineno}: more rows than the header's V={V}")
            try:
                vectors[len(tokens)] = np.array(parts[1:], dtype=np.float32)
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from exc
            tokens.append(parts[0])
    if len(tokens) != V:
        raise EmbeddingFormatError(f"{path}: header promises {V} rows, found {len(tokens)}")
    return tokens, vectors


def write_embedding_file(path: str | Path, tokens: Sequence[str], vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype=np.float32)
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(tokens)} {vectors.shape[1]}\n")
        for tok, row in zip(tokens, vectors):
            # %.9g round-trips float32 exactly
            fh.write(tok + " " + " ".join(f"{x:.9g}" for x in row.tolist()) + "\n")


def save_embeddings(path: str | Path, matrix: EmbeddingMatrix, vocab: Vocabulary) -> None:
    """Write every row except PAD."""
    write_embedding_file(path, vocab.itos[1:], matrix.vectors[1:])


def load_pretrained(
    path: str | Path,
    vocab: Vocabulary,
    trainable: bool = False,
    fallback_seed: int = 0,
) -> EmbeddingMatrix:
    """Fill rows from the file; tokens it lacks get `char_hash_embed` vectors.

    ``coverage`` on the result is the fraction of corpus tokens (PAD/UNK
    excluded) found in the file.
    """
    file_tokens, file_vectors = read_embedding_file(path)
    lookup = {t: i for i, t in enumerate(file_tokens)}
    d = file_vectors.shape[1]
    vectors = np.zeros((len(vocab), d), dtype=np.float32)
    hits = 0
    for i, tok in enumerate(vocab.itos):
        if i == PAD_INDEX:
            continue
        j = lookup.get(tok)
        if j is not None:
            vectors[i] = file_vectors[j]
            hits += i != UNK_INDEX
        else:
            vectors[i] = char_hash_embed(tok, d, fallback_seed)
    n_corpus = len(vocab) - 2
    coverage = hits / n_corpus if n_corpus else 1.0
    return EmbeddingMatrix(vectors, trainable=trainable, provenance="pretrained", coverage=coverage)


# skip-gram with negative sampling ----------------------------------------------


@dataclass
class SkipGramConfig:
    dim: int = 300
    window: int = 5
    negatives: int = 5
    iterations: int = 500_000
    lr: float = 0.025
    min_lr_fraction: float = 1e-4
    unigram_power: float = 0.75

    def __post_init__(self):
        if self.window < 1 or self.negatives < 1 or self.dim < 1 or self.iterations < 0:
            raise ValueError("skip-gram needs window >= 1, negatives >= 1, dim > 0, iterations >= 0")


class NegativeSampler:
    """Draws token indices with probability proportional to count**power."""

    def __init__(self, counts: np.ndarray, power: float = 0.75):
        weights = np.asarray(counts, dtype=np.float64) ** power
        weights[np.asarray(counts) == 0] = 0.0
        total = weights.sum()
        if total <= 0:
            raise ValueError("negative sampler needs at least one token with nonzero count")
        self.probs = weights / total
        self.cdf = np.cumsum(self.probs)
        self.cdf[-1] = 1.0

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return np.searchsorted(self.cdf, gen.random(n), side="right")


def _sentence_pairs(sent: np.ndarray, window: int) -> np.ndarray:
    """All (center, context) index pairs of one sentence, in reading order."""
    n = len(sent)
    pairs = []
    for i in range(n):
        lo, hi = max(0, i - window), min(n, i + window + 1)
        for j in range(lo, hi):
            if j != i:
                pairs.append((sent[i], sent[j]))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def sgns_loss_and_grads(v_in: np.ndarray, u_out: np.ndarray, labels: np.ndarray):
    """Loss and gradients for one center vector against targets.

    loss = -sum_k log sigmoid(s_k * u_k . v), s_k = +1 for the positive, -1 for negatives.
    Returns (loss, dL/dv, dL/du).
    """
    score = u_out @ v_in
    sign = np.where(labels > 0, 1.0, -1.0)
    z = sign * score
    loss = float(np.sum(np.logaddexp(0.0, -z)))
    coef = -sign * (1.0 / (1.0 + np.exp(z)))  # dL/dscore
    return loss, coef @ u_out, np.outer(coef, v_in)


@dataclass
class SkipGramTrainer:
    vocab: Vocabulary
    cfg: SkipGramConfig
    rng: Rng = field(default_factory=lambda: Rng(0))
    losses: list[float] = field(default_factory=list)

    def fit(self, corpus: Iterable[Sequence[str]]) -> EmbeddingMatrix:
        cfg, vocab = self.cfg, self.vocab
        sentences = []
        counts = np.zeros(len(vocab), dtype=np.int64)
        for sent in corpus:
            idx = np.array([i for i in vocab.encode(sent) if i > UNK_INDEX], dtype=np.int64)
            if len(idx):
                counts += np.bincount(idx, minlength=len(vocab))
            if len(idx) >= 2:
                sentences.append(idx)
        if counts.sum() == 0:
            raise ValueError("empty corpus: no in-vocabulary tokens")

        init_gen = self.rng.stream("skipgram")
        V, d = len(vocab), cfg.dim
        w_in = init_gen.uniform(-0.5 / d, 0.5 / d, size=(V, d))
        w_in[PAD_INDEX] = 0.0
        w_out = np.zeros((V, d))
        self.losses = []
        if cfg.iterations == 0:
            return EmbeddingMatrix(w_in, provenance="multilingual")
        if not sentences:
            raise ValueError(f"no trainable pairs: every sentence is shorter than 2 tokens (window={cfg.window})")

        sampler = NegativeSampler(counts, cfg.unigram_power)
        neg_gen = self.rng.stream("negative")
        labels = np.zeros(cfg.negatives + 1)
        labels[0] = 1.0
        step = 0
        s = 0
        pairs = _sentence_pairs(sentences[0], cfg.window)
        p = 0
        while step < cfg.iterations:
            if p == len(pairs):
                s = (s + 1) % len(sentences)
                pairs = _sentence_pairs(sentences[s], cfg.window)
                p = 0
            center, context = pairs[p]
            p += 1
            lr = cfg.lr * max(cfg.min_lr_fraction, 1.0 - step / cfg.iterations)
            targets = np.empty(cfg.negatives + 1, dtype=np.int64)
            targets[0] = context
            targets[1:] = sampler.sample(neg_gen, cfg.negatives)
            loss, g_in, g_out = sgns_loss_and_grads(w_in[center], w_out[targets], labels)
            w_in[center] -= lr * g_in
            np.add.at(w_out, targets, -lr * g_out)
            self.losses.append(loss)
            step += 1
        return EmbeddingMatrix(w_in, provenance="multilingual")


def train_skipgram(
    corpus: Iterable[Sequence[str]],
    vocab: Vocabulary,
    cfg: SkipGramConfig | None = None,
    rng: Rng | None = None,
) -> EmbeddingMatrix:
    """Train skip-gram vectors; one iteration is one (center, context) pair plus its negatives."""
    return SkipGramTrainer(vocab, cfg or SkipGramConfig(), rng or Rng(0)).fit(corpus)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12))


def nearest_neighbors(matrix: EmbeddingMatrix, vocab: Vocabulary, token: str, k: int = 5) -> list[tuple[str, float]]:
    v = matrix.vectors.astype(np.float64)
    norms = np.linalg.norm(v, axis=1) + 1e-12
    q = v[vocab[token]]
    sims = v @ q / (norms * np.linalg.norm(q) + 1e-12)
    sims[[PAD_INDEX, UNK_INDEX, vocab[token]]] = -np.inf
    order = np.argsort(-sims, kind="stable")[:k]
    return [(vocab.itos[i], float(sims[i])) for i in order]
