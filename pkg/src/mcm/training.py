"""Training loop, evaluation, grid search and the experiment matrix."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .data import LABELS, DatasetSplit, build_vocab, make_batches, stratified_split
from .embeddings import (
    EmbeddingMatrix,
    SkipGramConfig,
    Vocabulary,
    char_hash_matrix,
    init_random,
    load_pretrained,
    train_skipgram,
)
from .metrics import Metrics, compute_metrics
from .models import McMConfig, SequenceClassifier, build_model
from .optim import make_optimizer
from .rng import Rng
from .tensor import NonFiniteError, cross_entropy, no_grad

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch_index: int, detail: str):
        super().__init__(f"non-finite value at epoch {epoch}, batch {batch_index}: {detail}")
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass
class TrainConfig:
    epochs: int = 100
    optimizer: str = "adam"
    lr: float = 0.002
    batch_size: int = 64
    max_len: int = 60
    patience: int = 10
    select_on: str = "test"  # or "validation"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("epochs, patience and batch_size must be >= 1")
        # lr = 0 is allowed: it freezes a model, which the stopping tests rely on
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.select_on not in ("test", "validation"):
            raise ValueError("select_on must be 'test' or 'validation'")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval_loss: float
    metrics: Metrics
    checkpointed: bool

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "eval_loss": self.eval_loss,
            "checkpointed": self.checkpointed,
            "metrics": self.metrics.to_dict(),
        }


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = "completed"
    best_epoch: int = 0
    eval_role: str = "test"

    @property
    def best(self) -> EpochRecord:
        return self.records[self.best_epoch - 1]

    def to_dict(self) -> dict:
        return {
            "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch,
            "eval_role": self.eval_role,
            "epochs": [{**r.to_dict(), "best": r.epoch == self.best_epoch} for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


# evaluation -------------------------------------------------------------------------


def _eval_pass(model: SequenceClassifier, split: DatasetSplit, batch_size: int, max_len: int) -> tuple[float, Metrics, np.ndarray]:
    model.eval()
    total, preds, probs = 0.0, [], []
    with no_grad():
        for batch in make_batches(split, model.vocab, batch_size, max_len):
            out = model(batch)
            total += cross_entropy(out.final_probs, batch.labels).item() * len(batch)
            probs.append(out.final_probs.data)
            preds.append(np.argmax(out.final_probs.data, axis=1))
    model.train()
    y_pred = np.concatenate(preds)
    return total / len(split), compute_metrics(split.labels, y_pred, len(LABELS)), np.concatenate(probs)


def evaluate(model: SequenceClassifier | Checkpoint, split: DatasetSplit, batch_size: int = 64, max_len: int = 60) -> Metrics:
    """Inference-mode metrics over the whole split."""
    if isinstance(model, Checkpoint):
        model = model.build_model()
    if model.vocab is None:
        raise ValueError("model carries no vocabulary; cannot encode the split")
    if len(model.vocab) != model.embedding.weight.shape[0]:
        raise ValueError(f"vocabulary has {len(model.vocab)} entries but the embedding table has {model.embedding.weight.shape[0]} rows")
    if not len(split):
        raise ValueError("cannot evaluate an empty split")
    return _eval_pass(model, split, batch_size, max_len)[1]


# training ------------------------------------------------------------------------------


def train(
    model: SequenceClassifier,
    train_split: DatasetSplit,
    eval_split: DatasetSplit,
    cfg: TrainConfig | None = None,
) -> tuple[Checkpoint, TrainLog]:
    """Shuffled mini-batch training with best-checkpointing and early stopping.

    The checkpoint tracks the best eval accuracy; stopping watches eval loss
    and fires after `patience` epochs without a decrease.
    """
    cfg = cfg or TrainConfig()
    if not len(train_split) or not len(eval_split):
        raise ValueError("train and eval splits must be nonempty")
    if model.vocab is None:
        raise ValueError("model carries no vocabulary")
    rng = Rng(cfg.seed)
    opt = make_optimizer(cfg.optimizer, model.parameters(), cfg.lr)
    tlog = TrainLog(eval_role=eval_split.role)
    best_ckpt: Checkpoint | None = None
    best_acc, best_loss, stale = -1.0, np.inf, 0
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        running, seen = 0.0, 0
        for bi, batch in enumerate(make_batches(train_split, model.vocab, cfg.batch_size, cfg.max_len, shuffle=True, rng=rng)):
            try:
                loss = model.loss(model(batch), batch.labels)
                loss.backward()
            except NonFiniteError as exc:
                raise NonFiniteLossError(epoch, bi, str(exc)) from exc
            opt.step()
            running += loss.item() * len(batch)
            seen += len(batch)
        eval_loss, metrics, _ = _eval_pass(model, eval_split, cfg.batch_size, cfg.max_len)
        improved = metrics.accuracy > best_acc
        if improved:
            best_acc = metrics.accuracy
            best_ckpt = Checkpoint.capture(model, opt, epoch, metrics.accuracy)
            tlog.best_epoch = epoch
        tlog.records.append(EpochRecord(epoch, running / seen, eval_loss, metrics, improved))
        log.info("epoch %d train %.4f eval %.4f acc %.4f", epoch, running / seen, eval_loss, metrics.accuracy)
        if eval_loss < best_loss:
            best_loss, stale = eval_loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                tlog.stop_reason = f"early-stopped at epoch {epoch}"
                break
    assert best_ckpt is not None
    return best_ckpt, tlog


def honest_split(train_split: DatasetSplit, fraction: float = 0.2, seed: int = 0) -> tuple[DatasetSplit, DatasetSplit]:
    """Carve a stratified validation split out of the training data."""
    return stratified_split(train_split.examples, fraction, Rng(seed).child("validation"), roles=("train", "validation"))


# embeddings for a run -------------------------------------------------------------------


@dataclass
class EmbeddingSource:
    dim: int = 300
    pretrained_path: str | None = None
    multilingual_path: str | None = None
    skipgram_iterations: int = 500_000
    hash_seed: int = 0


def make_embedding(kind: str, vocab: Vocabulary, finetune: bool, rng: Rng, source: EmbeddingSource | None = None, corpus=None) -> EmbeddingMatrix:
    """random | pretrained | multilingual, with the finetune switch applied.

    Without a file, "pretrained" uses the character-hash encoder and
    "multilingual" trains skip-gram vectors on `corpus`.
    """
    source = source or EmbeddingSource()
    if kind == "random":
        return init_random(vocab, source.dim, rng, trainable=finetune)
    if kind == "pretrained":
        if source.pretrained_path:
            return load_pretrained(source.pretrained_path, vocab, trainable=finetune, fallback_seed=source.hash_seed)
        return char_hash_matrix(vocab, source.dim, source.hash_seed, trainable=finetune)
    if kind == "multilingual":
        if source.multilingual_path:
            m = load_pretrained(source.multilingual_path, vocab, trainable=finetune, fallback_seed=source.hash_seed)
            return EmbeddingMatrix(m.vectors, finetune, "multilingual", m.coverage)
        if corpus is None:
            raise ValueError("multilingual embeddings need a file or a corpus to train on")
        sg = train_skipgram(corpus, vocab, SkipGramConfig(dim=source.dim, iterations=source.skipgram_iterations), rng)
        return EmbeddingMatrix(sg.vectors, finetune, "multilingual")
    raise ValueError(f"unknown embedding kind {kind!r}; valid kinds: random, pretrained, multilingual")


# grid search ---------------------------------------------------------------------------------

DEFAULT_GRID = {
    "kernel_sizes": [(1, 2), (2, 3)],
    "dropout": [0.3, 0.5],
    "optimizer": ["adam"],
    "lr": [0.002, 0.001],
}


@dataclass
class GridResult:
    best: dict
    cells: list[tuple[dict, float]]
    validation: DatasetSplit


def grid_cells(grid: dict) -> list[dict]:
    keys = list(grid)
    if not keys or any(len(grid[k]) == 0 for k in keys):
        raise ValueError("grid search needs a nonempty grid")
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def _grid_cell(args) -> float:
    params, sub_train, validation, vocab, model_cfg, cfg, source, cell_seed = args
    rng = Rng(cell_seed)
    mcfg = replace(model_cfg, kernel_sizes=tuple(params.get("kernel_sizes", model_cfg.kernel_sizes)), dropout=params.get("dropout", model_cfg.dropout))
    tcfg = replace(cfg, optimizer=params.get("optimizer", cfg.optimizer), lr=params.get("lr", cfg.lr), seed=cell_seed)
    # random embeddings, no finetuning
    emb = init_random(vocab, source.dim, rng, trainable=False)
    model = build_model("mcm", emb, vocab, rng, cfg=mcfg)
    _, tlog = train(model, sub_train, validation, tcfg)
    return tlog.best.metrics.accuracy


def grid_search(
    train_split: DatasetSplit,
    grid: dict | None = None,
    cfg: TrainConfig | None = None,
    model_cfg: McMConfig | None = None,
    source: EmbeddingSource | None = None,
    min_freq: int = 2,
    jobs: int = 1,
) -> GridResult:
    """Pick McM hyperparameters on a 20% stratified validation carve-out.

    Ties go to the earlier cell in grid order.
    """
    cfg = cfg or TrainConfig()
    cells = grid_cells(DEFAULT_GRID if grid is None else grid)
    sub_train, validation = stratified_split(train_split.examples, 0.2, Rng(cfg.seed).child("grid"), roles=("train", "validation"))
    vocab = build_vocab(sub_train, min_freq)
    root = Rng(cfg.seed)
    jobs_args = [
        (p, sub_train, validation, vocab, model_cfg or McMConfig(), cfg, source or EmbeddingSource(), root.child(f"grid/{i}").seed)
        for i, p in enumerate(cells)
    ]
    scores = run_parallel(_grid_cell, jobs_args, jobs)
    best_i = int(np.argmax(scores))
    return GridResult(cells[best_i], list(zip(cells, scores)), validation)


def run_parallel(fn: Callable, args: Sequence, jobs: int) -> list:
    """Map `fn` over `args`; results come back in input order regardless of `jobs`."""
    if jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args))


# experiment matrix --------------------------------------------------------------------------

BASELINES = ("convnet", "attention_lstm", "simpleconv")


@dataclass(frozen=True)
class Cell:
    model: str
    embedding: str
    finetune: bool

    @property
    def cell_id(self) -> str:
        return f"{self.model}/{self.embedding}/{'finetune' if self.finetune else 'frozen'}"


def adaptation_matrix() -> list[Cell]:
    """Three baselines x {random, pretrained} x {frozen, finetuned}, plus the probe on pretrained vectors."""
    cells = [Cell(m, e, f) for m in BASELINES for e in ("random", "pretrained") for f in (False, True)]
    cells += [Cell("embedding_probe", "pretrained", f) for f in (False, True)]
    return cells


def full_matrix() -> list[Cell]:
    """Every row of the results table: probe, baselines and McM on all three embeddings."""
    cells = [Cell("embedding_probe", "pretrained", f) for f in (False, True)]
    for m in (*BASELINES, "mcm"):
        cells += [Cell(m, e, f) for e in ("random", "pretrained", "multilingual") for f in (False, True)]
    return cells


MATRICES = {"adaptation": adaptation_matrix, "full": full_matrix}


@dataclass
class CellResult:
    cell: Cell
    metrics: dict | None = None  # accuracy / precision / recall / f1
    best_epoch: int | None = None
    wall_seconds: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {**asdict(self.cell), "metrics": self.metrics, "best_epoch": self.best_epoch, "wall_seconds": self.wall_seconds, "error": self.error}

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        return cls(Cell(d["model"], d["embedding"], d["finetune"]), d["metrics"], d["best_epoch"], d["wall_seconds"], d["error"])


@dataclass
class MatrixJob:
    cell: Cell
    train_split: DatasetSplit
    eval_split: DatasetSplit
    test_split: DatasetSplit
    cfg: TrainConfig
    model_overrides: dict
    source: EmbeddingSource
    min_freq: int
    seed: int


def run_cell(job: MatrixJob) -> CellResult:
    """Train and score one cell; failures are captured, not raised."""
    start = time.perf_counter()
    try:
        rng = Rng(job.seed)
        vocab = build_vocab(job.train_split, job.min_freq)
        corpus = [ex.tokens for ex in job.train_split]
        emb = make_embedding(job.cell.embedding, vocab, job.cell.finetune, rng, job.source, corpus)
        overrides = job.model_overrides.get(job.cell.model)
        model = build_model(job.cell.model, emb, vocab, rng, cfg=dict(overrides) if overrides else None)
        ckpt, tlog = train(model, job.train_split, job.eval_split, replace(job.cfg, seed=job.seed))
        metrics = evaluate(ckpt, job.test_split, job.cfg.batch_size, job.cfg.max_len)
        return CellResult(job.cell, metrics.summary(), tlog.best_epoch, time.perf_counter() - start)
    except (ValueError, FloatingPointError) as exc:
        log.warning("cell %s failed: %s", job.cell.cell_id, exc)
        return CellResult(job.cell, None, None, time.perf_counter() - start, f"{type(exc).__name__}: {exc}")


def experiment_matrix(
    cells: Sequence[Cell],
    train_split: DatasetSplit,
    test_split: DatasetSplit,
    cfg: TrainConfig | None = None,
    model_overrides: dict | None = None,
    source: EmbeddingSource | None = None,
    min_freq: int = 2,
    honest_validation: bool = False,
    jobs: int = 1,
    done: dict[str, CellResult] | None = None,
    on_result: Callable[[CellResult], None] | None = None,
) -> list[CellResult]:
    """Run every cell (skipping ids already in `done`); one Rng per cell id."""
    cfg = cfg or TrainConfig()
    if not cells:
        raise ValueError("experiment matrix has no cells")
    fit_split, eval_split = train_split, test_split
    if honest_validation:
        fit_split, eval_split = honest_split(train_split, seed=cfg.seed)
    done = dict(done or {})
    root = Rng(cfg.seed)
    pending = [
        MatrixJob(c, fit_split, eval_split, test_split, cfg, model_overrides or {}, source or EmbeddingSource(), min_freq, root.child(c.cell_id).seed)
        for c in cells
        if c.cell_id not in done
    ]
    if jobs <= 1:
        for job in pending:
            res = run_cell(job)
            done[job.cell.cell_id] = res
            if on_result:
                on_result(res)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(run_cell, pending):
                done[res.cell.cell_id] = res
                if on_result:
                    on_result(res)
    return [done[c.cell_id] for c in cells]


CSV_COLUMNS = ("model", "embedding", "finetune", "accuracy", "precision", "recall", "f1", "best_epoch", "wall_seconds")


def write_results_csv(path: str | Path, results: Sequence[CellResult]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in results:
            m = r.metrics or {}
            scores = [f"{m[k]:.4f}" if r.ok else "" for k in ("accuracy", "precision", "recall", "f1")]
            w.writerow([r.cell.model, r.cell.embedding, str(r.cell.finetune).lower(), *scores, r.best_epoch or "", f"{r.wall_seconds:.2f}"])


_MODEL_NAMES = {
    "embedding_probe": "Embedding probe",
    "convnet": "ConvNet",
    "attention_lstm": "Attention-LSTM",
    "simpleconv": "SimpleConv",
    "mcm": "McM",
}
_EMBED_NAMES = {"random": "Random", "pretrained": "Pretrained", "multilingual": "Multilingual"}


def render_table(results: Sequence[CellResult]) -> str:
    """Rows per (model, embedding); frozen and finetuned scores side by side."""
    rows: dict[tuple[str, str], dict[bool, CellResult]] = {}
    for r in results:
        rows.setdefault((r.cell.model, r.cell.embedding), {})[r.cell.finetune] = r

    def scores(r: CellResult | None) -> list[str]:
        if r is None:
            return ["-"] * 4
        if not r.ok:
            return ["failed"] + [""] * 3
        return [f"{r.metrics[k]:.2f}" for k in ("accuracy", "precision", "recall", "f1")]

    header1 = ["", "", "Without finetuning", "", "", "", "With finetuning", "", "", ""]
    header2 = ["Model", "Embedding", "Acc", "P", "R", "F1", "Acc", "P", "R", "F1"]
    body = []
    last_model = None
    for (model, emb), modes in rows.items():
        name = _MODEL_NAMES.get(model, model) if model != last_model else ""
        last_model = model
        body.append([name, _EMBED_NAMES.get(emb, emb), *scores(modes.get(False)), *scores(modes.get(True))])
    table = [header1, header2, *body]
    widths = [max(len(row[i]) for row in table) for i in range(len(header2))]
    lines = []
    for n, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if n == 1:
            lines.append("-" * len(lines[-1]))
    return "\n".join(lines) + "\n"
