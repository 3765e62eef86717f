"""Top-n recommendation for occasional groups: graph embedding trained by
negative-sampling SGD, self-attentive member aggregation, and
centrality-aware graph convolution over the social network."""

from .errors import CagrError, ConvergenceError, DataError, FormatError, NumericError
from .evaluation import EvalReport, SplitSpec, evaluate, rank_items, temporal_split
from .graphs import (
    BipartiteGraph,
    Dataset,
    GroupTable,
    SocialGraph,
    empirical_distribution,
    load_dataset,
    load_dataset_dir,
)
from .params import ModelState, init, load, save
from .synth import SynthSpec, generate
from .training import TrainingConfig, train

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph",
    "CagrError",
    "ConvergenceError",
    "DataError",
    "Dataset",
    "EvalReport",
    "FormatError",
    "GroupTable",
    "ModelState",
    "NumericError",
    "SocialGraph",
    "SplitSpec",
    "SynthSpec",
    "TrainingConfig",
    "empirical_distribution",
    "evaluate",
    "generate",
    "init",
    "load",
    "load_dataset",
    "load_dataset_dir",
    "rank_items",
    "save",
    "temporal_split",
    "train",
    "__version__",
]
