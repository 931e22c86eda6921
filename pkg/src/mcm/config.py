"""Flat ``key = value`` run configuration.

Resolution order is command-line flag, then config file, then default.
Unknown keys are errors. `RunConfig.dumps` writes a file that
`load_config_file` reads back to the same config.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .models import MODEL_KINDS

EMBEDDING_KINDS = ("random", "pretrained", "multilingual")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    data: str = ""
    train_data: str = ""
    test_data: str = ""
    test_fraction: float = 0.2
    min_freq: int = 2
    max_len: int = 60
    # model and embeddings
    model: str = "mcm"
    embedding: str = "random"
    finetune: bool = True
    embedding_dim: int = 300
    pretrained_path: str = ""
    multilingual_path: str = ""
    hash_seed: int = 0
    filters: int = 300
    kernel_sizes: str = "1,2"
    lstm_units: int = 300
    learner_widths: str = "128,64"
    discriminator_widths: str = "128,64"
    dropout: float = 0.5
    aux_weight: float = 1.0
    # training
    epochs: int = 100
    optimizer: str = "adam"
    lr: float = 0.002
    batch_size: int = 64
    patience: int = 10
    seed: int = 0
    honest_validation: bool = False
    # skip-gram
    skipgram_iterations: int = 500_000
    window: int = 5
    negatives: int = 5
    # grid search and matrix
    grid_kernel_sizes: str = "1,2;2,3"
    grid_dropout: str = "0.3,0.5"
    grid_optimizer: str = "adam"
    grid_lr: str = "0.002,0.001"
    matrix: str = "adaptation"
    cells: str = ""  # comma-separated cell ids; overrides `matrix` when set
    jobs: int = 1
    # inference
    checkpoint: str = ""

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model {self.model!r}; valid kinds: {', '.join(MODEL_KINDS)}")
        if self.embedding not in EMBEDDING_KINDS:
            raise ConfigError(f"unknown embedding {self.embedding!r}; valid kinds: {', '.join(EMBEDDING_KINDS)}")
        if self.matrix not in ("adaptation", "full"):
            raise ConfigError(f"unknown matrix {self.matrix!r}; choose adaptation or full")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def resolve(cls, file_values: dict[str, str] | None = None, flag_values: dict[str, object] | None = None) -> "RunConfig":
        merged: dict[str, object] = {}
        for source in (file_values or {}, flag_values or {}):
            for key, raw in source.items():
                if key not in _DEFAULTS:
                    raise ConfigError(f"unknown config key {key!r}")
                merged[key] = coerce(key, raw)
        return cls(**merged)

    def dumps(self) -> str:
        lines = []
        for key in self.keys():
            value = getattr(self, key)
            lines.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    # derived values ------------------------------------------------------------

    def mcm_overrides(self) -> dict:
        return {
            "filters": self.filters,
            "kernel_sizes": int_tuple(self.kernel_sizes),
            "lstm_units": self.lstm_units,
            "learner_widths": int_tuple(self.learner_widths),
            "discriminator_widths": int_tuple(self.discriminator_widths),
            "dropout": self.dropout,
            "aux_weight": self.aux_weight,
        }

    def grid(self) -> dict:
        return {
            "kernel_sizes": [int_tuple(p) for p in self.grid_kernel_sizes.split(";") if p.strip()],
            "dropout": [float(x) for x in self.grid_dropout.split(",") if x.strip()],
            "optimizer": [x.strip() for x in self.grid_optimizer.split(",") if x.strip()],
            "lr": [float(x) for x in self.grid_lr.split(",") if x.strip()],
        }


_DEFAULTS = {f.name: f.default for f in fields(RunConfig)}


def int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def coerce(key: str, raw) -> object:
    kind = type(_DEFAULTS[key])
    if isinstance(raw, kind) and not (kind is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError
        return kind(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind.__name__}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def load_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))
