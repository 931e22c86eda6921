"""Multi-cascaded CNN/LSTM sentiment classification for code-switched short text."""

from .data import LABELS, DatasetSplit, Example, load_dataset, preprocess, stratified_split
from .embeddings import EmbeddingMatrix, Vocabulary
from .metrics import Metrics, compute_metrics
from .models import McM, McMConfig, build_baseline, build_model
from .rng import Rng
from .tensor import Tensor
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"
