"""Command-line entry point.

Exit codes: 0 success, 2 usage/config/data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config_file
from .data import (
    LABELS,
    DatasetError,
    DatasetSplit,
    build_vocab,
    class_stats,
    format_stats,
    load_dataset,
    pad_batch,
    preprocess,
    stratified_split,
    tokenize,
    write_dataset,
)
from .embeddings import EmbeddingFormatError, SkipGramConfig, Vocabulary, nearest_neighbors, save_embeddings, train_skipgram
from .models import McMConfig, build_model
from .rng import Rng
from .training import (
    MATRICES,
    Cell,
    CellResult,
    EmbeddingSource,
    TrainConfig,
    evaluate,
    experiment_matrix,
    grid_search,
    honest_split,
    make_embedding,
    render_table,
    train,
    write_results_csv,
)

log = logging.getLogger("mcm")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


# config and run directories ----------------------------------------------------------


def resolve_config(args) -> RunConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {k: getattr(args, k) for k in RunConfig.keys() if hasattr(args, k)}
    return RunConfig.resolve(file_values, flags)


def make_run_dir(args, command: str, seed: int) -> Path:
    base = Path(getattr(args, "out", None) or "runs")
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = base / f"{command}-{stamp}-seed{seed}"
    n = 1
    while path.exists():
        n += 1
        path = base / f"{command}-{stamp}-seed{seed}-{n}"
    path.mkdir(parents=True)
    return path


def write_manifest(run_dir: Path, command: str, cfg: RunConfig, artifacts: list[str]) -> None:
    manifest = {"command": command, "seed": cfg.seed, "created": time.strftime("%Y-%m-%dT%H:%M:%S"), "artifacts": artifacts}
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def load_splits(cfg: RunConfig) -> tuple[DatasetSplit, DatasetSplit]:
    """Published train/test files when given, else a seeded stratified split of `data`."""
    if cfg.train_data and cfg.test_data:
        train_s = DatasetSplit(preprocess(load_dataset(cfg.train_data)), "train")
        test_s = DatasetSplit(preprocess(load_dataset(cfg.test_data)), "test")
        return train_s, test_s
    if cfg.data:
        return stratified_split(preprocess(load_dataset(cfg.data)), cfg.test_fraction, Rng(cfg.seed))
    raise ConfigError("set data, or both train_data and test_data")


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        optimizer=cfg.optimizer,
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        max_len=cfg.max_len,
        patience=cfg.patience,
        select_on="validation" if cfg.honest_validation else "test",
        seed=cfg.seed,
    )


def embedding_source(cfg: RunConfig) -> EmbeddingSource:
    return EmbeddingSource(cfg.embedding_dim, cfg.pretrained_path or None, cfg.multilingual_path or None, cfg.skipgram_iterations, cfg.hash_seed)


def model_overrides(cfg: RunConfig) -> dict[str, dict]:
    baseline = {"dropout": cfg.dropout}
    return {"mcm": cfg.mcm_overrides(), **{k: dict(baseline) for k in ("convnet", "attention_lstm", "simpleconv", "embedding_probe")}}


def print_metrics(metrics, out=None) -> None:
    s = metrics.summary()
    print("  ".join(f"{k} {v:.4f}" for k, v in s.items()), file=out or sys.stdout)


# commands -------------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    raw = load_dataset(args.input)
    clean = preprocess(raw)
    write_dataset(args.output, clean)
    dropped = len(raw) - len(clean)
    print(f"kept {len(clean)} of {len(raw)} records; dropped {dropped}")
    if clean:
        print(format_stats(class_stats(clean)))
    else:
        print("warning: no records left after preprocessing", file=sys.stderr)
    return EXIT_OK


def cmd_split(args) -> int:
    cfg = resolve_config(args)
    examples = preprocess(load_dataset(args.input))
    train_s, test_s = stratified_split(examples, cfg.test_fraction, Rng(cfg.seed))
    run_dir = make_run_dir(args, "split", cfg.seed)
    write_dataset(run_dir / "train.tsv", train_s)
    write_dataset(run_dir / "test.tsv", test_s)
    cfg.write(run_dir / "config.txt")
    write_manifest(run_dir, "split", cfg, ["train.tsv", "test.tsv", "config.txt"])
    print(f"train {len(train_s)}  test {len(test_s)}  -> {run_dir}")
    for split in (train_s, test_s):
        if len(split):
            print(f"[{split.role}]\n{format_stats(class_stats(split))}")
    return EXIT_OK


def read_corpus(paths) -> list[list[str]]:
    """Plain text (one sentence per line) or dataset TSV (text in column 2)."""
    sentences = []
    for p in paths:
        try:
            text = Path(p).read_text(encoding="utf-8")
        except OSError as exc:
            raise DatasetError(f"cannot read corpus {p}: {exc}") from None
        for line in text.splitlines():
            if "\t" in line:
                line = line.split("\t")[1]
            tokens = tokenize(line.lower())
            if tokens:
                sentences.append(tokens)
    return sentences


def cmd_embed_train(args) -> int:
    cfg = resolve_config(args)
    corpus = read_corpus(args.corpus)
    n_tokens = sum(len(s) for s in corpus)
    if not n_tokens:
        raise DatasetError("empty corpus")
    vocab = Vocabulary.from_corpus(corpus, cfg.min_freq)
    sg = SkipGramConfig(dim=cfg.embedding_dim, window=cfg.window, negatives=cfg.negatives, iterations=cfg.skipgram_iterations)
    matrix = train_skipgram(corpus, vocab, sg, Rng(cfg.seed))
    run_dir = make_run_dir(args, "embed-train", cfg.seed)
    out = Path(args.output) if args.output else run_dir / "embeddings.txt"
    save_embeddings(out, matrix, vocab)
    cfg.write(run_dir / "config.txt")
    write_manifest(run_dir, "embed-train", cfg, [str(out), "config.txt"])
    print(f"tokens {n_tokens}  vocabulary {len(vocab) - 2}  -> {out}")
    for tok in args.neighbors or []:
        if tok not in vocab.stoi:
            print(f"{tok}: not in vocabulary")
            continue
        near = ", ".join(f"{t} {s:.3f}" for t, s in nearest_neighbors(matrix, vocab, tok, k=5))
        print(f"{tok}: {near}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    train_s, test_s = load_splits(cfg)
    fit_s, eval_s = (honest_split(train_s, seed=cfg.seed) if cfg.honest_validation else (train_s, test_s))
    rng = Rng(cfg.seed)
    vocab = build_vocab(fit_s, cfg.min_freq)
    emb = make_embedding(cfg.embedding, vocab, cfg.finetune, rng, embedding_source(cfg), [ex.tokens for ex in fit_s])
    model = build_model(cfg.model, emb, vocab, rng, cfg=model_overrides(cfg)[cfg.model])
    ckpt, tlog = train(model, fit_s, eval_s, train_config(cfg))
    metrics = evaluate(ckpt, test_s, cfg.batch_size, cfg.max_len)

    run_dir = make_run_dir(args, "train", cfg.seed)
    ckpt.save(run_dir / "checkpoint.ckpt")
    (run_dir / "trainlog.json").write_text(tlog.to_json() + "\n", encoding="utf-8")
    report = {"test": metrics.to_dict(), "selected_on": eval_s.role, "best_epoch": tlog.best_epoch, "stop_reason": tlog.stop_reason}
    (run_dir / "metrics.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    cfg.write(run_dir / "config.txt")
    write_manifest(run_dir, "train", cfg, ["checkpoint.ckpt", "trainlog.json", "metrics.json", "config.txt"])
    if eval_s.role == "test":
        print("note: checkpoint selected on the test split; use --honest-validation for a held-out validation split")
    print(f"best epoch {tlog.best_epoch} ({tlog.stop_reason})  -> {run_dir}")
    print_metrics(metrics)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    if not cfg.checkpoint:
        raise ConfigError("evaluate needs checkpoint")
    path = cfg.test_data or cfg.data
    if not path:
        raise ConfigError("evaluate needs test_data (or data)")
    split = DatasetSplit(preprocess(load_dataset(path)), "test")
    metrics = evaluate(load_checkpoint(cfg.checkpoint), split, cfg.batch_size, cfg.max_len)
    run_dir = make_run_dir(args, "evaluate", cfg.seed)
    (run_dir / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    cfg.write(run_dir / "config.txt")
    write_manifest(run_dir, "evaluate", cfg, ["metrics.json", "config.txt"])
    print_metrics(metrics)
    return EXIT_OK


def cmd_grid_search(args) -> int:
    cfg = resolve_config(args)
    train_s, _ = load_splits(cfg)
    result = grid_search(
        train_s, cfg.grid(), train_config(cfg), McMConfig(**cfg.mcm_overrides()), embedding_source(cfg), cfg.min_freq, cfg.jobs
    )
    run_dir = make_run_dir(args, "grid-search", cfg.seed)
    payload = {"best": result.best, "cells": [{"params": p, "validation_accuracy": s} for p, s in result.cells]}
    (run_dir / "grid.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    cfg.write(run_dir / "config.txt")
    write_manifest(run_dir, "grid-search", cfg, ["grid.json", "config.txt"])
    for p, s in result.cells:
        print(f"{s:.4f}  {p}")
    print(f"best: {result.best}")
    return EXIT_OK


def parse_cells(spec: str) -> list[Cell]:
    cells = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split("/")
        if len(parts) != 3 or parts[2] not in ("frozen", "finetune"):
            raise ConfigError(f"bad cell id {item!r}; expected model/embedding/frozen|finetune")
        cells.append(Cell(parts[0], parts[1], parts[2] == "finetune"))
    return cells


def cmd_matrix(args) -> int:
    cfg = resolve_config(args)
    train_s, test_s = load_splits(cfg)
    cells = parse_cells(cfg.cells) if cfg.cells else MATRICES[cfg.matrix]()
    if args.resume:
        run_dir = Path(args.resume)
        if not run_dir.is_dir():
            raise ConfigError(f"--resume: no run directory {run_dir}")
    else:
        run_dir = make_run_dir(args, "matrix", cfg.seed)
    cells_path = run_dir / "cells.json"
    done: dict[str, CellResult] = {}
    if args.resume and cells_path.exists():
        for d in json.loads(cells_path.read_text(encoding="utf-8")):
            r = CellResult.from_dict(d)
            if r.ok:
                done[r.cell.cell_id] = r
        print(f"resuming: {len(done)} completed cell(s) skipped")
    finished = dict(done)

    def record(res: CellResult) -> None:
        finished[res.cell.cell_id] = res
        status = "ok" if res.ok else f"failed ({res.error})"
        print(f"[{len(finished)}/{len(cells)}] {res.cell.cell_id}: {status}", flush=True)
        cells_path.write_text(json.dumps([r.to_dict() for r in finished.values()], indent=1) + "\n", encoding="utf-8")

    cfg.write(run_dir / "config.txt")
    results = experiment_matrix(
        cells,
        train_s,
        test_s,
        train_config(cfg),
        model_overrides(cfg),
        embedding_source(cfg),
        cfg.min_freq,
        cfg.honest_validation,
        cfg.jobs,
        done,
        record,
    )
    write_results_csv(run_dir / "results.csv", results)
    table = render_table(results)
    (run_dir / "results.txt").write_text(table, encoding="utf-8")
    write_manifest(run_dir, "matrix", cfg, ["results.csv", "results.txt", "cells.json", "config.txt"])
    print(table, end="")
    print(f"-> {run_dir}")
    n_ok = sum(r.ok for r in results)
    if n_ok == 0:
        print("error: every cell failed", file=sys.stderr)
        return EXIT_NUMERIC
    if n_ok < len(results):
        print(f"warning: {len(results) - n_ok} cell(s) failed", file=sys.stderr)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = resolve_config(args)
    if not cfg.checkpoint:
        raise ConfigError("predict needs checkpoint")
    model = load_checkpoint(cfg.checkpoint).build_model()
    if model.vocab is None:
        raise CheckpointError("checkpoint has no vocabulary")
    model.eval()
    lines = sys.stdin.read().splitlines()
    for start in range(0, len(lines), cfg.batch_size):
        chunk = lines[start : start + cfg.batch_size]
        # a blank line still gets a prediction, from the unknown-token vector
        seqs = [np.array(model.vocab.encode(tokenize(line.lower())[: cfg.max_len]) or [1], dtype=np.int64) for line in chunk]
        probs = model.predict_proba(pad_batch(seqs, np.zeros(len(seqs), dtype=np.int64)))
        for row in probs:
            label = LABELS[int(np.argmax(row))]
            print(label + "\t" + "\t".join(f"{p:.6f}" for p in row))
    return EXIT_OK


# parser -------------------------------------------------------------------------------------


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = common.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", help="key = value config file")
    g.add_argument("--seed", type=int, metavar="INT")
    g.add_argument("--jobs", type=int, metavar="INT", help="concurrent grid/matrix cells")
    g.add_argument("--out", metavar="DIR", help="base directory for run outputs (default runs/)")
    g.add_argument("--honest-validation", dest="honest_validation", action="store_const", const=True, help="select checkpoints on a validation split carved from train")
    g.add_argument("-v", "--verbose", action="store_const", const=True)
    keys = common.add_argument_group("config keys (override the config file)")
    for key in RunConfig.keys():
        if key in ("seed", "jobs", "honest_validation"):
            continue
        keys.add_argument("--" + key.replace("_", "-"), dest=key, metavar="VALUE")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="mcm", description="Code-switched short-text sentiment toolkit.", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="lowercase and drop single-word records")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", parents=[common], help="stratified train/test split")
    p.add_argument("input")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("embed-train", parents=[common], help="train skip-gram embeddings")
    p.add_argument("corpus", nargs="+")
    p.add_argument("--output", metavar="PATH")
    p.add_argument("--neighbors", action="append", metavar="TOKEN", help="print nearest neighbours of TOKEN")
    p.set_defaults(func=cmd_embed_train)

    for name, func, text in (
        ("train", cmd_train, "train one model"),
        ("evaluate", cmd_evaluate, "score a checkpoint"),
        ("grid-search", cmd_grid_search, "McM hyperparameter grid search"),
        ("predict", cmd_predict, "label stdin lines with a checkpoint"),
    ):
        sub.add_parser(name, parents=[common], help=text).set_defaults(func=func)

    p = sub.add_parser("matrix", parents=[common], help="run the experiment matrix")
    p.add_argument("--resume", metavar="RUN_DIR", help="continue a matrix run, skipping finished cells")
    p.set_defaults(func=cmd_matrix)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FloatingPointError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DatasetError, EmbeddingFormatError, CheckpointError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
