"""Checkpoint container.

Layout, all integers little-endian::

    b"MCMCKPT\\0"             8-byte magic
    uint32                    format version
    uint64                    header length in bytes
    header                    UTF-8 JSON, keys sorted
    payload                   float32 little-endian tensors, back to back

The header echoes the model config and vocabulary and lists every tensor
with its name, shape and byte offset into the payload. Model tensors are
named ``model.<path>``; Adam moments ``optimizer.m.<i>`` / ``optimizer.v.<i>``.
Nothing time-dependent is written, so equal states give equal bytes.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingMatrix, Vocabulary
from .optim import Optimizer
from .tensor import ShapeError

MAGIC = b"MCMCKPT\0"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    vocab: list[str]
    tensors: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_step: int = 0
    epoch: int = 0
    metric: float | None = None

    @classmethod
    def capture(cls, model, optimizer: Optimizer | None = None, epoch: int = 0, metric: float | None = None) -> "Checkpoint":
        state = model.state_dict()
        opt, step = {}, 0
        if optimizer is not None:
            raw = optimizer.state_dict()
            step = int(raw.pop("t"))
            opt = {k: np.array(v, copy=True) for k, v in raw.items()}
        vocab = model.vocab.itos if model.vocab is not None else []
        return cls(model.describe(), list(vocab), state, opt, step, epoch, None if metric is None else float(metric))

    # serialization ------------------------------------------------------------

    def to_bytes(self) -> bytes:
        entries, chunks, offset = [], [], 0
        named = [(f"model.{k}", v) for k, v in self.tensors.items()]
        named += [(f"optimizer.{k}", v) for k, v in self.optimizer.items()]
        for name, arr in named:
            raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        header = {
            "format_version": FORMAT_VERSION,
            "dtype": "float32-le",
            "config": self.config,
            "vocab": self.vocab,
            "epoch": self.epoch,
            "metric": self.metric,
            "optimizer_step": self.optimizer_step,
            "tensors": entries,
        }
        head = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
        buf.write(head)
        for c in chunks:
            buf.write(c)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes, source: str = "<bytes>") -> "Checkpoint":
        if blob[:8] != MAGIC:
            raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
        try:
            version, hlen = struct.unpack_from("<IQ", blob, 8)
        except struct.error:
            raise CheckpointError(f"{source}: truncated header") from None
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{source}: format version {version}, this build reads {FORMAT_VERSION}")
        start = 8 + struct.calcsize("<IQ")
        try:
            header = json.loads(blob[start : start + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{source}: corrupt header: {exc}") from None
        payload = memoryview(blob)[start + hlen :]
        model, opt = {}, {}
        for e in header["tensors"]:
            end = e["offset"] + e["nbytes"]
            if end > len(payload):
                raise CheckpointError(f"{source}: tensor {e['name']} runs past end of file")
            arr = np.frombuffer(payload[e["offset"] : end], dtype=_DTYPE).astype(np.float32).reshape(e["shape"])
            kind, name = e["name"].split(".", 1)
            (model if kind == "model" else opt)[name] = arr
        return cls(header["config"], header["vocab"], model, opt, header["optimizer_step"], header["epoch"], header["metric"])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    # restoring --------------------------------------------------------------------

    def restore_vocab(self) -> Vocabulary | None:
        if not self.vocab:
            return None
        return Vocabulary(self.vocab[2:])

    def build_model(self, rng=None):
        """Fresh model of the recorded kind and config, loaded with the saved tensors."""
        from .models import build_model

        spec = self.config["embedding"]
        emb = EmbeddingMatrix(
            np.zeros((spec["vocab_size"], spec["dim"]), dtype=np.float32),
            trainable=spec["trainable"],
            provenance=spec["provenance"],
        )
        model = build_model(self.config["kind"], emb, self.restore_vocab(), rng, cfg=dict(self.config["config"]))
        self.load_into(model)
        return model

    def load_into(self, model, optimizer: Optimizer | None = None) -> None:
        try:
            model.load_state_dict(self.tensors)
        except (KeyError, ShapeError) as exc:
            raise CheckpointError(f"checkpoint does not fit model: {exc}") from None
        if optimizer is not None:
            optimizer.load_state_dict({"t": np.asarray(self.optimizer_step), **self.optimizer})


def save_checkpoint(path, model, optimizer=None, epoch: int = 0, metric: float | None = None) -> Checkpoint:
    ckpt = Checkpoint.capture(model, optimizer, epoch, metric)
    ckpt.save(path)
    return ckpt


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    return Checkpoint.from_bytes(blob, str(path))
