"""Conflict-aware fusion of protein and genome-context embeddings for
gene-pair co-membership prediction, in plain numpy."""

from .data import EmbeddingStore, GenePair, GeneRecord, PairRules, build_pairs, hard_subset
from .experiment import ExperimentConfig, PairDataset, evaluate, run_suite, train
from .losses import LossConfig
from .metrics import auroc, average_precision, map_macro, metric_report
from .model import FusionConfig, FusionModel, build_model
from .synthetic import SyntheticWorld, desk_world

__version__ = "0.1.0"

__all__ = ["EmbeddingStore", "ExperimentConfig", "FusionConfig", "FusionModel", "GenePair", "GeneRecord",
           "LossConfig", "PairDataset", "PairRules", "SyntheticWorld", "auroc", "average_precision",
           "build_model", "build_pairs", "desk_world", "evaluate", "hard_subset", "map_macro",
           "metric_report", "run_suite", "train"]
