"""McM: three feature learners with their own softmax heads feeding a
discriminator, plus the comparison baselines and an embedding probe.

Every classification (softmax) layer starts at zero so each head predicts the
uniform distribution before training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import LABELS, EncodedBatch
from .embeddings import EmbeddingMatrix, Vocabulary
from .layers import (
    LSTM,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    Embedding,
    Module,
    SequenceMask,
    global_avg_pool,
    global_max_pool,
)
from .rng import Rng
from .tensor import Tensor, concat, cross_entropy, no_grad, softmax, where

MODEL_KINDS = ("mcm", "convnet", "attention_lstm", "simpleconv", "embedding_probe")
BASELINE_KINDS = ("convnet", "attention_lstm", "simpleconv", "embedding_probe")


@dataclass
class McMConfig:
    filters: int = 300
    kernel_sizes: tuple[int, int] = (1, 2)
    lstm_units: int = 300
    learner_widths: tuple[int, int] = (128, 64)
    discriminator_widths: tuple[int, int] = (128, 64)
    dropout: float = 0.5
    aux_weight: float = 1.0
    num_classes: int = len(LABELS)

    def __post_init__(self):
        self.kernel_sizes = tuple(self.kernel_sizes)
        self.learner_widths = tuple(self.learner_widths)
        self.discriminator_widths = tuple(self.discriminator_widths)
        widths = (self.filters, self.lstm_units, *self.learner_widths, *self.discriminator_widths, *self.kernel_sizes)
        if min(widths) <= 0 or len(self.kernel_sizes) != 2:
            raise ValueError("McM widths and kernel sizes must be positive; exactly two kernel sizes")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.aux_weight < 0:
            raise ValueError("aux_weight must be >= 0")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")


@dataclass
class BaselineConfig:
    """Assumed shapes for the comparison models (see README)."""

    filters: int = 100
    kernel_sizes: tuple[int, ...] = (3, 4)
    simple_kernel: int = 3
    hidden: int = 100
    lstm_units: int = 300
    attention_dim: int = 300
    dropout: float = 0.5
    aux_weight: float = 0.0
    num_classes: int = len(LABELS)

    def __post_init__(self):
        self.kernel_sizes = tuple(self.kernel_sizes)
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class LearnerOutput:
    features: Tensor
    aux_probs: Tensor


@dataclass
class ModelOutput:
    final_probs: Tensor
    aux: list[Tensor] = field(default_factory=list)
    attention: Tensor | None = None

    @property
    def heads(self) -> list[Tensor]:
        return [*self.aux, self.final_probs]


@dataclass
class McMOutput(ModelOutput):
    cnn: LearnerOutput | None = None
    stacked_lstm: LearnerOutput | None = None
    lstm: LearnerOutput | None = None


def classification_loss(out: ModelOutput, labels, aux_weight: float) -> Tensor:
    """Final-head cross-entropy plus `aux_weight` times each auxiliary head's."""
    loss = cross_entropy(out.final_probs, labels)
    for probs in out.aux:
        loss = loss + cross_entropy(probs, labels) * aux_weight
    return loss


def mcm_loss(out: ModelOutput, labels, aux_weight: float = 1.0) -> Tensor:
    return classification_loss(out, labels, aux_weight)


def predict(out: ModelOutput | Tensor) -> np.ndarray:
    """Row-wise argmax of the final probabilities; ties go to the lower class."""
    probs = out.final_probs if isinstance(out, ModelOutput) else out
    return np.argmax(probs.data, axis=-1)


# building blocks ----------------------------------------------------------------


class FeedForwardHead(Module):
    """dense -> ReLU -> dropout -> batch norm -> dense -> ReLU, then a softmax layer."""

    def __init__(self, in_features: int, widths: tuple[int, int], num_classes: int, dropout: float, rng: Rng | None):
        init = rng.stream("init") if rng else None
        d1, d2 = widths
        self.fc1 = Dense(in_features, d1, init)
        self.drop = Dropout(dropout, rng.stream("dropout") if rng else None)
        self.norm = BatchNorm(d1)
        self.fc2 = Dense(d1, d2, init)
        self.out = Dense(d2, num_classes, zero=True)

    def __call__(self, x: Tensor) -> LearnerOutput:
        h = self.norm(self.drop(self.fc1(x).relu()))
        features = self.fc2(h).relu()
        return LearnerOutput(features, softmax(self.out(features)))


class StackedCNNLearner(Module):
    def __init__(self, in_dim: int, cfg: McMConfig, rng: Rng | None):
        init = rng.stream("init") if rng else None
        k1, k2 = cfg.kernel_sizes
        self.conv1 = Conv1D(in_dim, cfg.filters, k1, init)
        self.conv2 = Conv1D(cfg.filters, cfg.filters, k2, init)
        self.head = FeedForwardHead(2 * cfg.filters, cfg.learner_widths, cfg.num_classes, cfg.dropout, rng)

    def __call__(self, embedded: Tensor, mask: SequenceMask) -> LearnerOutput:
        h = self.conv1(embedded, mask).relu()
        h = self.conv2(h, mask).relu()
        pooled = concat([global_max_pool(h, mask), global_avg_pool(h, mask)], axis=1)
        return self.head(pooled)


class StackedLSTMLearner(Module):
    def __init__(self, in_dim: int, cfg: McMConfig, rng: Rng | None):
        init = rng.stream("init") if rng else None
        self.lstm1 = LSTM(in_dim, cfg.lstm_units, init)
        self.lstm2 = LSTM(cfg.lstm_units, cfg.lstm_units, init)
        self.head = FeedForwardHead(2 * cfg.lstm_units, cfg.learner_widths, cfg.num_classes, cfg.dropout, rng)

    def __call__(self, embedded: Tensor, mask: SequenceMask) -> LearnerOutput:
        h = self.lstm2(self.lstm1(embedded, mask, return_sequence=True), mask, return_sequence=True)
        pooled = concat([global_max_pool(h, mask), global_avg_pool(h, mask)], axis=1)
        return self.head(pooled)


class LSTMLearner(Module):
    def __init__(self, in_dim: int, cfg: McMConfig, rng: Rng | None):
        init = rng.stream("init") if rng else None
        self.lstm = LSTM(in_dim, cfg.lstm_units, init)
        self.head = FeedForwardHead(cfg.lstm_units, cfg.learner_widths, cfg.num_classes, cfg.dropout, rng)

    def encode(self, embedded: Tensor, mask: SequenceMask) -> Tensor:
        return self.lstm(embedded, mask, return_sequence=False)

    def __call__(self, embedded: Tensor, mask: SequenceMask) -> LearnerOutput:
        return self.head(self.encode(embedded, mask))


class Discriminator(Module):
    def __init__(self, cfg: McMConfig, rng: Rng | None):
        d2 = cfg.learner_widths[1]
        self.head = FeedForwardHead(3 * d2, cfg.discriminator_widths, cfg.num_classes, cfg.dropout, rng)

    def __call__(self, f1: Tensor, f2: Tensor, f3: Tensor) -> Tensor:
        if not f1.shape[0] == f2.shape[0] == f3.shape[0]:
            raise ValueError(f"batch size mismatch: {f1.shape[0]}, {f2.shape[0]}, {f3.shape[0]}")
        return self.head(concat([f1, f2, f3], axis=1)).aux_probs


# models ------------------------------------------------------------------------------


class SequenceClassifier(Module):
    kind = ""

    def __init__(self, cfg, embedding: EmbeddingMatrix, vocab: Vocabulary | None):
        self.cfg = cfg
        self.embedding = Embedding(embedding.vectors, trainable=embedding.trainable)
        self.embedding_provenance = embedding.provenance
        self.vocab = vocab

    @property
    def embedding_dim(self) -> int:
        return self.embedding.dim

    def embed(self, indices: np.ndarray, mask: SequenceMask) -> Tensor:
        emb = self.embedding(indices)
        valid = mask.matrix(indices.shape[1])[:, :, None].astype(emb.dtype)
        return emb * valid

    def forward(self, indices: np.ndarray, mask: SequenceMask) -> ModelOutput:
        raise NotImplementedError

    def __call__(self, batch: EncodedBatch) -> ModelOutput:
        return self.forward(batch.indices, batch.mask)

    def loss(self, out: ModelOutput, labels) -> Tensor:
        return classification_loss(out, labels, self.cfg.aux_weight)

    def predict_proba(self, batch: EncodedBatch) -> np.ndarray:
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                return self(batch).final_probs.data
        finally:
            self.train(was_training)

    def num_parameters(self, include_embedding: bool = False) -> int:
        params = self.parameters()
        if not include_embedding:
            params = [p for p in params if p is not self.embedding.weight]
        return sum(p.data.size for p in params)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "config": asdict(self.cfg),
            "embedding": {
                "provenance": self.embedding_provenance,
                "trainable": self.embedding.weight.requires_grad,
                "dim": self.embedding_dim,
                "vocab_size": self.embedding.weight.shape[0],
            },
        }


class McM(SequenceClassifier):
    kind = "mcm"

    def __init__(self, cfg: McMConfig, embedding: EmbeddingMatrix, vocab: Vocabulary | None = None, rng: Rng | None = None):
        super().__init__(cfg, embedding, vocab)
        d = self.embedding_dim
        self.cnn = StackedCNNLearner(d, cfg, rng)
        self.stacked_lstm = StackedLSTMLearner(d, cfg, rng)
        self.lstm = LSTMLearner(d, cfg, rng)
        self.discriminator = Discriminator(cfg, rng)

    def forward(self, indices: np.ndarray, mask: SequenceMask) -> McMOutput:
        x = self.embed(indices, mask)
        cnn = self.cnn(x, mask)
        slstm = self.stacked_lstm(x, mask)
        lstm = self.lstm(x, mask)
        final = self.discriminator(cnn.features, slstm.features, lstm.features)
        return McMOutput(final, [cnn.aux_probs, slstm.aux_probs, lstm.aux_probs], cnn=cnn, stacked_lstm=slstm, lstm=lstm)


def mcm_forward(batch: EncodedBatch, model: McM) -> McMOutput:
    return model(batch)


class ConvNetBaseline(SequenceClassifier):
    """Parallel convolutions of several widths, max-pooled, then dense."""

    kind = "convnet"

    def __init__(self, cfg: BaselineConfig, embedding: EmbeddingMatrix, vocab=None, rng: Rng | None = None):
        super().__init__(cfg, embedding, vocab)
        init = rng.stream("init") if rng else None
        self.convs = [Conv1D(self.embedding_dim, cfg.filters, k, init) for k in cfg.kernel_sizes]
        self.hidden = Dense(cfg.filters * len(cfg.kernel_sizes), cfg.hidden, init)
        self.drop = Dropout(cfg.dropout, rng.stream("dropout") if rng else None)
        self.out = Dense(cfg.hidden, cfg.num_classes, zero=True)

    def forward(self, indices, mask) -> ModelOutput:
        x = self.embed(indices, mask)
        pooled = concat([global_max_pool(conv(x, mask).relu(), mask) for conv in self.convs], axis=1)
        h = self.drop(self.hidden(pooled).relu())
        return ModelOutput(softmax(self.out(h)))


class AttentionLSTMBaseline(SequenceClassifier):
    """LSTM states weighted by additive attention over real tokens."""

    kind = "attention_lstm"

    def __init__(self, cfg: BaselineConfig, embedding: EmbeddingMatrix, vocab=None, rng: Rng | None = None):
        super().__init__(cfg, embedding, vocab)
        init = rng.stream("init") if rng else None
        self.lstm = LSTM(self.embedding_dim, cfg.lstm_units, init)
        self.att = Dense(cfg.lstm_units, cfg.attention_dim, init)
        self.score = Dense(cfg.attention_dim, 1, init)
        self.drop = Dropout(cfg.dropout, rng.stream("dropout") if rng else None)
        self.out = Dense(cfg.lstm_units, cfg.num_classes, zero=True)

    def attend(self, h: Tensor, mask: SequenceMask) -> Tensor:
        B, L, _ = h.shape
        scores = self.score(self.att(h).tanh()).reshape(B, L)
        valid = mask.matrix(L)
        blocked = Tensor(np.full((B, L), -1e9, dtype=scores.dtype))
        return softmax(where(valid, scores, blocked))

    def forward(self, indices, mask) -> ModelOutput:
        x = self.embed(indices, mask)
        h = self.lstm(x, mask, return_sequence=True)
        alpha = self.attend(h, mask)
        B, L, U = h.shape
        context = (h * alpha.reshape(B, L, 1)).sum(axis=1)
        return ModelOutput(softmax(self.out(self.drop(context))), attention=alpha)


class SimpleConvBaseline(SequenceClassifier):
    """One convolution, global max-pool, softmax."""

    kind = "simpleconv"

    def __init__(self, cfg: BaselineConfig, embedding: EmbeddingMatrix, vocab=None, rng: Rng | None = None):
        super().__init__(cfg, embedding, vocab)
        init = rng.stream("init") if rng else None
        self.conv = Conv1D(self.embedding_dim, cfg.filters, cfg.simple_kernel, init)
        self.out = Dense(cfg.filters, cfg.num_classes, zero=True)

    def forward(self, indices, mask) -> ModelOutput:
        x = self.embed(indices, mask)
        pooled = global_max_pool(self.conv(x, mask).relu(), mask)
        return ModelOutput(softmax(self.out(pooled)))


class EmbeddingProbe(SequenceClassifier):
    """Softmax over the mean of the token vectors."""

    kind = "embedding_probe"

    def __init__(self, cfg: BaselineConfig, embedding: EmbeddingMatrix, vocab=None, rng: Rng | None = None):
        super().__init__(cfg, embedding, vocab)
        self.out = Dense(self.embedding_dim, cfg.num_classes, zero=True)

    def forward(self, indices, mask) -> ModelOutput:
        pooled = global_avg_pool(self.embed(indices, mask), mask)
        return ModelOutput(softmax(self.out(pooled)))


_BASELINES = {
    "convnet": ConvNetBaseline,
    "attention_lstm": AttentionLSTMBaseline,
    "simpleconv": SimpleConvBaseline,
    "embedding_probe": EmbeddingProbe,
}


def build_baseline(kind: str, cfg: BaselineConfig | None, embedding: EmbeddingMatrix, vocab=None, rng: Rng | None = None):
    if kind not in _BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; valid kinds: {', '.join(BASELINE_KINDS)}")
    return _BASELINES[kind](cfg or BaselineConfig(), embedding, vocab, rng)


def build_model(kind: str, embedding: EmbeddingMatrix, vocab=None, rng: Rng | None = None, cfg=None) -> SequenceClassifier:
    """Construct any model kind; `cfg` may be a config object or a dict of overrides."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model {kind!r}; valid kinds: {', '.join(MODEL_KINDS)}")
    cfg_cls = McMConfig if kind == "mcm" else BaselineConfig
    if cfg is None or isinstance(cfg, dict):
        cfg = cfg_cls(**(cfg or {}))
    if kind == "mcm":
        return McM(cfg, embedding, vocab, rng)
    return build_baseline(kind, cfg, embedding, vocab, rng)
