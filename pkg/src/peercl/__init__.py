"""Online class-incremental learning with two peer learners, mutual
distillation, and a difficulty-ordered augmentation chain."""

from .autodiff import GraphError, ShapeError, Tensor, backward, detach, no_grad
from .buffer import ReplayBuffer
from .config import Diagnostics, RunConfig, load_config, save_config
from .data import LabeledSet, SyntheticSpec, gen_synthetic, load_idx, write_idx
from .errors import ConfigError, IdxParseError, MetricDomainError
from .losses import LossWeights
from .metrics import AccuracyMatrix, metric_report
from .nn import Mlp, MlpSpec, OptimizerSpec, PeerPair, predict
from .training import ExperimentResult, run_experiment, schedule_tasks

__all__ = [
    "AccuracyMatrix",
    "ConfigError",
    "Diagnostics",
    "ExperimentResult",
    "GraphError",
    "IdxParseError",
    "LabeledSet",
    "LossWeights",
    "MetricDomainError",
    "Mlp",
    "MlpSpec",
    "OptimizerSpec",
    "PeerPair",
    "ReplayBuffer",
    "RunConfig",
    "ShapeError",
    "SyntheticSpec",
    "Tensor",
    "backward",
    "detach",
    "gen_synthetic",
    "load_config",
    "load_idx",
    "metric_report",
    "no_grad",
    "predict",
    "run_experiment",
    "save_config",
    "schedule_tasks",
    "write_idx",
]

__version__ = "0.1.0"
