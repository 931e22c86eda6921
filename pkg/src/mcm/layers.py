"""Layers for sequence classifiers: embedding lookup, 1-D convolution, LSTM,
dense, dropout, batch normalization and masked global pooling.

Sequence tensors are laid out batch-major, ``(B, L, D)``. Padding is handled
with a `SequenceMask` holding each example's true length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import ShapeError, Tensor, concat, get_default_dtype, matmul, relu, stack, transpose, where


@dataclass(frozen=True)
class SequenceMask:
    lengths: np.ndarray

    def __post_init__(self):
        lengths = np.asarray(self.lengths, dtype=np.int64)
        if lengths.ndim != 1:
            raise ValueError("lengths must be one-dimensional")
        if lengths.size and lengths.min() < 1:
            raise ValueError("every sequence needs at least one unmasked position")
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def full(cls, batch: int, length: int) -> "SequenceMask":
        return cls(np.full(batch, length))

    def check(self, L: int) -> None:
        if self.lengths.max() > L:
            raise ValueError(f"mask length {self.lengths.max()} exceeds sequence length {L}")

    def matrix(self, L: int) -> np.ndarray:
        """Boolean (B, L) array, True at real tokens."""
        self.check(L)
        return np.arange(L)[None, :] < self.lengths[:, None]


# module plumbing -----------------------------------------------------------


class Module:
    """Minimal container: finds parameters and buffers by walking attributes."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        """Every array needed to restore the module: parameters, frozen weights, buffers."""
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value.data
            elif isinstance(value, Module):
                yield from value.named_tensors(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{full}.{i}.")
            elif isinstance(value, np.ndarray) and name.startswith("running_"):
                yield full, value

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_tensors())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch; missing={missing} unexpected={extra}")
        for k, arr in own.items():
            if arr.shape != state[k].shape:
                raise ShapeError(f"{k}: expected shape {arr.shape}, got {state[k].shape}")
            arr[...] = state[k]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


# embedding ----------------------------------------------------------------


def embedding_lookup(weight: Tensor, indices: np.ndarray, pad_index: int = 0) -> Tensor:
    """Gather rows of `weight`. The PAD row never receives gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    V = weight.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        raise IndexError(f"token index out of range [0, {V})")
    W = weight.data

    def backward(g):
        full = np.zeros_like(W)
        np.add.at(full, idx, g)
        full[pad_index] = 0
        return (full,)

    return Tensor._make(W[idx], (weight,), backward, "embedding")


class Embedding(Module):
    def __init__(self, matrix: np.ndarray, trainable: bool):
        self.weight = Tensor(matrix, requires_grad=trainable, name="embedding")

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, indices: np.ndarray) -> Tensor:
        return embedding_lookup(self.weight, indices)


# dense --------------------------------------------------------------------


def dense_forward(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    return matmul(x, W) + b


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None, zero: bool = False):
        if zero or rng is None:
            w = np.zeros((in_features, out_features))
        else:
            w = glorot_uniform(rng, in_features, out_features, (in_features, out_features))
        self.W = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return dense_forward(x, self.W, self.b)


# convolution --------------------------------------------------------------


def same_padding(k: int) -> tuple[int, int]:
    """(left, right) zero padding keeping length fixed; the extra cell goes right."""
    left = (k - 1) // 2
    return left, k - 1 - left


def conv1d_forward(x: Tensor, W: Tensor, b: Tensor, mask: SequenceMask | None = None) -> Tensor:
    """Same-padded, stride-1 convolution.

    ``W`` has shape ``(F, k, D)``. Output position ``t`` sees inputs
    ``t - left .. t + right``. Positions past each example's length are
    zeroed so that a following convolution reads them as padding.
    """
    B, L, D = x.shape
    F, k, Din = W.shape
    if D != Din:
        raise ShapeError(f"conv1d channel mismatch: input has {D} channels, layer expects {Din}")
    left, right = same_padding(k)
    parts = []
    if left:
        parts.append(Tensor(np.zeros((B, left, D), dtype=x.dtype)))
    parts.append(x)
    if right:
        parts.append(Tensor(np.zeros((B, right, D), dtype=x.dtype)))
    xp = concat(parts, axis=1) if len(parts) > 1 else x
    # (B, L, k*D) window matrix, column block j holds offset j
    windows = concat([xp[:, j : j + L, :] for j in range(k)], axis=2) if k > 1 else xp
    out = matmul(windows, transpose(W.reshape(F, k * D))) + b
    if mask is not None:
        out = out * mask.matrix(L)[:, :, None].astype(x.dtype)
    return out


class Conv1D(Module):
    def __init__(self, in_channels: int, filters: int, kernel_size: int, rng: np.random.Generator | None = None):
        if filters <= 0 or kernel_size < 1:
            raise ValueError("need filters > 0 and kernel_size >= 1")
        shape = (filters, kernel_size, in_channels)
        if rng is None:
            w = np.zeros(shape)
        else:
            w = glorot_uniform(rng, kernel_size * in_channels, filters, shape)
        self.W = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(filters), requires_grad=True)
        self.kernel_size = kernel_size

    def __call__(self, x: Tensor, mask: SequenceMask | None = None) -> Tensor:
        return conv1d_forward(x, self.W, self.b, mask)


# LSTM ---------------------------------------------------------------------


def lstm_forward(
    x: Tensor,
    Wx: Tensor,
    Wh: Tensor,
    b: Tensor,
    mask: SequenceMask,
    return_sequence: bool,
) -> Tensor:
    """Run an LSTM over ``x`` (B, L, D).

    Gate columns are laid out ``[input, forget, output, candidate]``. Past an
    example's length the state is carried unchanged, so the final state is the
    state at the last real token.
    """
    B, L, D = x.shape
    U = Wh.shape[0]
    if Wx.shape != (D, 4 * U):
        raise ShapeError(f"LSTM input size mismatch: x {x.shape}, Wx {Wx.shape}")
    if mask.lengths.shape[0] != B:
        raise ShapeError("mask batch size differs from input")
    valid = mask.matrix(L)
    xw = matmul(x, Wx) + b  # (B, L, 4U)
    h = Tensor(np.zeros((B, U), dtype=x.dtype))
    c = Tensor(np.zeros((B, U), dtype=x.dtype))
    outputs = []
    for t in range(L):
        gates = xw[:, t, :] + matmul(h, Wh)
        sig = gates[:, : 3 * U].sigmoid()
        cand = gates[:, 3 * U :].tanh()
        i, f, o = sig[:, :U], sig[:, U : 2 * U], sig[:, 2 * U :]
        c_new = f * c + i * cand
        h_new = o * c_new.tanh()
        m = valid[:, t : t + 1]
        if m.all():
            h, c = h_new, c_new
        else:
            h, c = where(m, h_new, h), where(m, c_new, c)
        if return_sequence:
            outputs.append(h)
    if not return_sequence:
        return h
    return stack(outputs, axis=1)


class LSTM(Module):
    def __init__(self, input_size: int, units: int, rng: np.random.Generator | None = None, forget_bias: float = 1.0):
        if rng is None:
            wx = np.zeros((input_size, 4 * units))
            wh = np.zeros((units, 4 * units))
            bias = np.zeros(4 * units)
        else:
            wx = glorot_uniform(rng, input_size, 4 * units, (input_size, 4 * units))
            wh = np.concatenate([orthogonal(rng, units, units) for _ in range(4)], axis=1)
            bias = np.zeros(4 * units)
            bias[units : 2 * units] = forget_bias
        self.Wx = Tensor(wx, requires_grad=True)
        self.Wh = Tensor(wh, requires_grad=True)
        self.b = Tensor(bias, requires_grad=True)
        self.units = units

    def __call__(self, x: Tensor, mask: SequenceMask, return_sequence: bool = True) -> Tensor:
        return lstm_forward(x, self.Wx, self.Wh, self.b, mask, return_sequence)


# pooling ------------------------------------------------------------------


def global_max_pool(x: Tensor, mask: SequenceMask) -> Tensor:
    """Per-feature max over real positions; ties route gradient to the first."""
    B, L, F = x.shape
    valid = mask.matrix(L)
    if not valid.any(axis=1).all():
        raise ValueError("fully masked example")
    masked = np.where(valid[:, :, None], x.data, -np.inf)
    arg = masked.argmax(axis=1)  # (B, F)
    bi = np.arange(B)[:, None]
    fi = np.arange(F)[None, :]
    out = x.data[bi, arg, fi]

    def backward(g):
        full = np.zeros_like(x.data)
        full[bi, arg, fi] = g
        return (full,)

    return Tensor._make(np.ascontiguousarray(out), (x,), backward, "max_pool")


def global_avg_pool(x: Tensor, mask: SequenceMask) -> Tensor:
    B, L, F = x.shape
    valid = mask.matrix(L)
    if not valid.any(axis=1).all():
        raise ValueError("fully masked example")
    weights = (valid / mask.lengths[:, None]).astype(x.dtype)
    return (x * weights[:, :, None]).sum(axis=1)


def masked_mean(x: Tensor, mask: SequenceMask) -> Tensor:
    return global_avg_pool(x, mask)


# dropout ------------------------------------------------------------------


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity at inference."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    keep = rng.random(x.shape) >= rate
    scale = (keep / (1.0 - rate)).astype(x.dtype)
    return x * scale


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator | None = None):
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self.training, self.rng)


# batch normalization --------------------------------------------------------


class BatchNorm(Module):
    def __init__(self, features: int, momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(features), requires_grad=True)
        self.beta = Tensor(np.zeros(features), requires_grad=True)
        dtype = get_default_dtype()
        self.running_mean = np.zeros(features, dtype=dtype)
        self.running_var = np.ones(features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm_forward(x, self, self.training)


def batchnorm_forward(x: Tensor, layer: BatchNorm, training: bool) -> Tensor:
    if x.ndim != 2 or x.shape[1] != layer.gamma.shape[0]:
        raise ShapeError(f"batchnorm expects (B, {layer.gamma.shape[0]}), got {x.shape}")
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch normalization in training mode needs a batch of at least 2")
        mu = x.mean(axis=0)
        xc = x - mu
        var = (xc * xc).mean(axis=0)
        xhat = xc / (var + layer.eps).sqrt()
        mom = layer.momentum
        layer.running_mean[...] = mom * layer.running_mean + (1 - mom) * mu.data
        layer.running_var[...] = mom * layer.running_var + (1 - mom) * var.data
    else:
        std = np.sqrt(layer.running_var + layer.eps).astype(x.dtype)
        xhat = (x - layer.running_mean.astype(x.dtype)) * (1.0 / std).astype(x.dtype)
    return xhat * layer.gamma + layer.beta


__all__ = [
    "SequenceMask",
    "Module",
    "Embedding",
    "embedding_lookup",
    "Dense",
    "dense_forward",
    "Conv1D",
    "conv1d_forward",
    "LSTM",
    "lstm_forward",
    "global_max_pool",
    "global_avg_pool",
    "Dropout",
    "dropout",
    "BatchNorm",
    "batchnorm_forward",
    "relu",
]
