"""One-shot behavior evaluation for offline reinforcement learning.

Stage 1 fits the return distribution of the behavior policy with an implicit
quantile network; stage 2 fits a pessimistically regularized critic ensemble
against it; policies are then read off greedily, either by a trained actor or
by a nearest-neighbor search over dataset actions.
"""

from .config import RunConfig, load_config, parse_config, serialize_config
from .critic import PessimisticCritic, ensemble_min
from .dataset import TransitionDataset, load_dataset, save_dataset
from .errors import ConfigurationError, LoadError, TrainingError, UsageError, YoeoError
from .kernels import BACKEND
from .policies import ActorPolicy, KnnActionIndex, KnnPolicy, knn_policy
from .train import run_training, train_stage1, train_stage2
from .value import QuantileValueModel, ValueEnsemble

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ActorPolicy",
    "ConfigurationError",
    "KnnActionIndex",
    "KnnPolicy",
    "LoadError",
    "PessimisticCritic",
    "QuantileValueModel",
    "RunConfig",
    "TrainingError",
    "TransitionDataset",
    "UsageError",
    "ValueEnsemble",
    "YoeoError",
    "ensemble_min",
    "knn_policy",
    "load_config",
    "load_dataset",
    "parse_config",
    "run_training",
    "save_dataset",
    "serialize_config",
    "train_stage1",
    "train_stage2",
]
