"""Temporal-coherence representation learning.

Learns low-dimensional representations of frame sequences by making
consecutive outputs similar while keeping the overall output distribution
spread out. Two routes to the same objective: an exact spectral solution
on the sequence's Markov chain, and online unsupervised-learning layers
that train a network one frame at a time.
"""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, build_network, load_config, parse_config
from .data import (
    MovingSquareSpec,
    RotatingPointsSpec,
    Sequence,
    SequenceDataset,
    gen_moving_square,
    gen_rotating_points,
    load_dataset,
    load_image_sequence,
    save_dataset,
)
from .estimators import ClosedFormEmbedding, TemporalCoherenceNetwork
from .evaluate import decode_angle, localize, procrustes_align
from .markov import (
    MarkovStats,
    objective_on_chain,
    states_from_frames,
    stats_from_sequence,
    stats_from_sequences,
)
from .nn import Conv2dLayer, LinearLayer, Network, SgdConfig, TanhLayer
from .spectral import ClosedFormResult, closed_form_embedding, stationarity_residual
from .ul import (
    DivergenceError,
    MetricsRow,
    UlConvState,
    UlHyper,
    UlVecState,
    batch_gradient,
    batch_objective,
    train_online,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
    "ConfigError",
    "ExperimentConfig",
    "build_network",
    "load_config",
    "parse_config",
    "MovingSquareSpec",
    "RotatingPointsSpec",
    "Sequence",
    "SequenceDataset",
    "gen_moving_square",
    "gen_rotating_points",
    "load_dataset",
    "load_image_sequence",
    "save_dataset",
    "ClosedFormEmbedding",
    "TemporalCoherenceNetwork",
    "decode_angle",
    "localize",
    "procrustes_align",
    "MarkovStats",
    "objective_on_chain",
    "states_from_frames",
    "stats_from_sequence",
    "stats_from_sequences",
    "Conv2dLayer",
    "LinearLayer",
    "Network",
    "SgdConfig",
    "TanhLayer",
    "ClosedFormResult",
    "closed_form_embedding",
    "stationarity_residual",
    "DivergenceError",
    "MetricsRow",
    "UlConvState",
    "UlHyper",
    "UlVecState",
    "batch_gradient",
    "batch_objective",
    "train_online",
    "__version__",
]
