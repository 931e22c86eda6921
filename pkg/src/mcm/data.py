"""Dataset ingestion, preprocessing, stratified splitting and batching.

Dataset files are UTF-8 TSV without a header: ``label<TAB>text`` with an
optional third ``language`` column.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .embeddings import PAD_INDEX, Vocabulary
from .layers import SequenceMask
from .rng import Rng

log = logging.getLogger(__name__)

LABELS = ("negative", "positive", "neutral")
LANGUAGES = ("roman-urdu", "english", "mixed")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    text: str
    label: str
    language: str | None = None

    def __post_init__(self):
        if self.label not in LABEL_INDEX:
            raise DatasetError(f"unknown label {self.label!r}; expected one of {', '.join(LABELS)}")
        if self.language is not None and self.language not in LANGUAGES:
            raise DatasetError(f"unknown language {self.language!r}; expected one of {', '.join(LANGUAGES)}")

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)

    @property
    def label_index(self) -> int:
        return LABEL_INDEX[self.label]


def tokenize(text: str) -> list[str]:
    return text.split()


@dataclass
class DatasetSplit:
    examples: list[Example]
    role: str = "train"

    def __post_init__(self):
        if self.role not in ("train", "test", "validation"):
            raise ValueError(f"unknown split role {self.role!r}")

    @property
    def class_counts(self) -> dict[str, int]:
        counts = Counter(ex.label for ex in self.examples)
        return {lab: counts.get(lab, 0) for lab in LABELS}

    @property
    def labels(self) -> np.ndarray:
        return np.array([ex.label_index for ex in self.examples], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)


def assert_disjoint(a: DatasetSplit, b: DatasetSplit) -> None:
    """Raise if an identical (text, label) record occurs in both splits more often than in either alone."""
    ca = Counter((e.text, e.label) for e in a)
    cb = Counter((e.text, e.label) for e in b)
    shared = set(ca) & set(cb)
    if shared:
        raise DatasetError(f"{len(shared)} example(s) appear in both {a.role} and {b.role}")


# io -----------------------------------------------------------------------------


def load_dataset(path: str | Path) -> list[Example]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    examples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise DatasetError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields, got {len(fields)}")
        label, tweet = fields[0].strip(), fields[1]
        language = fields[2].strip() if len(fields) == 3 and fields[2].strip() else None
        if not tweet.strip():
            raise DatasetError(f"{path}:{lineno}: empty text")
        try:
            examples.append(Example(tweet, label, language))
        except DatasetError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
    if not examples:
        raise DatasetError(f"{path}: no records")
    return examples


def write_dataset(path: str | Path, examples: Iterable[Example]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fields = [ex.label, ex.text] + ([ex.language] if ex.language else [])
            fh.write("\t".join(fields) + "\n")


# preprocessing --------------------------------------------------------------------


def preprocess(examples: Iterable[Example]) -> list[Example]:
    """Lowercase, normalize whitespace, and drop single-word records."""
    out = []
    for ex in examples:
        tokens = tokenize(ex.text.lower())
        if len(tokens) < 2:
            continue
        out.append(Example(" ".join(tokens), ex.label, ex.language))
    return out


# splitting ------------------------------------------------------------------------


def largest_remainder(counts: Sequence[int], fraction: float) -> list[int]:
    """Integer shares of ``fraction * counts`` whose total is ``round(fraction * sum)``.

    Each class first gets the floor of its ideal share; the leftover units go
    to the classes with the largest fractional parts (earlier class on ties).
    """
    ideal = [fraction * c for c in counts]
    shares = [int(np.floor(x)) for x in ideal]
    total = int(np.floor(fraction * sum(counts) + 0.5))
    leftover = total - sum(shares)
    order = sorted(range(len(counts)), key=lambda i: (-(ideal[i] - shares[i]), i))
    for i in order[: max(leftover, 0)]:
        shares[i] += 1
    return shares


def stratified_split(
    examples: Sequence[Example],
    test_fraction: float = 0.2,
    rng: Rng | int | None = None,
    roles: tuple[str, str] = ("train", "test"),
) -> tuple[DatasetSplit, DatasetSplit]:
    """Per-class seeded split; class test counts come from `largest_remainder`."""
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must be in [0, 1)")
    rng = rng if isinstance(rng, Rng) else Rng(rng or 0)
    gen = rng.stream("split")
    by_class: dict[str, list[int]] = {lab: [] for lab in LABELS}
    for i, ex in enumerate(examples):
        by_class[ex.label].append(i)
    present = [lab for lab in LABELS if by_class[lab]]
    for lab in present:
        if len(by_class[lab]) < 2:
            raise DatasetError(f"class {lab!r} has fewer than 2 examples; cannot stratify")
    shares = largest_remainder([len(by_class[lab]) for lab in present], test_fraction)
    test_idx: set[int] = set()
    for lab, n_test in zip(present, shares):
        members = np.array(by_class[lab])
        chosen = gen.permutation(len(members))[:n_test]
        test_idx.update(members[chosen].tolist())
    train = [ex for i, ex in enumerate(examples) if i not in test_idx]
    test = [ex for i, ex in enumerate(examples) if i in test_idx]
    return DatasetSplit(train, roles[0]), DatasetSplit(test, roles[1])


# vocabulary and batching -------------------------------------------------------------


def build_vocab(train: DatasetSplit, min_freq: int = 2) -> Vocabulary:
    """Vocabulary from the training split only."""
    if not len(train):
        raise ValueError("cannot build a vocabulary from an empty split")
    return Vocabulary.from_corpus((ex.tokens for ex in train), min_freq=min_freq)


@dataclass
class EncodedBatch:
    indices: np.ndarray  # (B, L) int64, PAD-filled
    mask: SequenceMask
    labels: np.ndarray  # (B,) int64
    positions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.lengths

    def __len__(self) -> int:
        return len(self.labels)


def encode_examples(examples: Sequence[Example], vocab: Vocabulary, max_len: int) -> list[np.ndarray]:
    out = []
    for ex in examples:
        ids = vocab.encode(ex.tokens[:max_len])
        if not ids:
            raise DatasetError(f"example has no tokens: {ex.text!r}")
        out.append(np.array(ids, dtype=np.int64))
    return out


def pad_batch(seqs: Sequence[np.ndarray], labels: np.ndarray, positions: np.ndarray | None = None, length: int | None = None) -> EncodedBatch:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    L = int(length or lengths.max())
    idx = np.full((len(seqs), L), PAD_INDEX, dtype=np.int64)
    for r, s in enumerate(seqs):
        idx[r, : len(s)] = s
    pos = np.arange(len(seqs)) if positions is None else positions
    return EncodedBatch(idx, SequenceMask(lengths), np.asarray(labels, dtype=np.int64), pos)


def make_batches(
    split: DatasetSplit | Sequence[Example],
    vocab: Vocabulary,
    batch_size: int = 64,
    max_len: int = 60,
    shuffle: bool = False,
    rng: Rng | np.random.Generator | None = None,
) -> Iterator[EncodedBatch]:
    """Yield padded batches; the last one may be short."""
    if batch_size < 1 or max_len < 2:
        raise ValueError("batch_size must be >= 1 and max_len >= 2")
    examples = split.examples if isinstance(split, DatasetSplit) else list(split)
    seqs = encode_examples(examples, vocab, max_len)
    labels = np.array([ex.label_index for ex in examples], dtype=np.int64)
    order = np.arange(len(examples))
    if shuffle:
        gen = rng.stream("shuffle") if isinstance(rng, Rng) else (rng or Rng(0).stream("shuffle"))
        order = gen.permutation(len(examples))
    for start in range(0, len(order), batch_size):
        sel = order[start : start + batch_size]
        yield pad_batch([seqs[i] for i in sel], labels[sel], sel)


# statistics -----------------------------------------------------------------------------


def class_stats(split: DatasetSplit | Sequence[Example]) -> dict[str, dict[str, float]]:
    """Class (and, when tagged, language) percentages."""
    examples = split.examples if isinstance(split, DatasetSplit) else list(split)
    if not examples:
        raise DatasetError("cannot compute statistics of an empty split")
    n = len(examples)
    labels = Counter(ex.label for ex in examples)
    stats = {"class": {lab: 100.0 * labels.get(lab, 0) / n for lab in LABELS}}
    tagged = [ex.language for ex in examples if ex.language]
    if tagged:
        langs = Counter(tagged)
        stats["language"] = {lang: 100.0 * langs.get(lang, 0) / len(tagged) for lang in LANGUAGES}
    return stats


def format_stats(stats: dict[str, dict[str, float]]) -> str:
    lines = []
    for group, values in stats.items():
        cells = ", ".join(f"{k} {v:.2f}%" for k, v in values.items())
        lines.append(f"{group}: {cells}")
    return "\n".join(lines)
