"""User and APP embeddings learned from per-APP subgraphs of an installation graph."""

from .graph import (
    BipartiteGraph,
    EdgeParseError,
    EdgeRecord,
    Edges,
    SubgraphView,
    decompose,
    installed,
    load_edges,
    popularity_fraction,
    read_edges,
    time_split,
)
from .model import EmbeddingTables, LossConfig, init_embeddings, load_embeddings, save_embeddings
from .sampling import SamplerConfig, build_sampler, sample_negatives, sample_positives, sample_subgraph
from .synthgen import SynthConfig, generate
from .trainer import StepStats, TrainConfig, Trainer, train
from .evaluation import auc, inference_eval, memory_eval, precision_at_threshold

__version__ = "0.1.0"
