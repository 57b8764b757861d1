"""Multi-task imitation with task-blind proto-policy modules and a task-aware selector."""

from .envs import ExpertPolicy, generate_demos, get_suite
from .errors import ConfigError, ExpertFailureError, FileFormatError, MapsError, TrainingDivergedError
from .evaluation import ComparisonTable, UsageReport, ablate, compare, module_usage, rollout_usage, success_rate
from .policy import MapsModel, init_maps, maps_forward, total_loss
from .trainer import TrainConfig, suite_config, train_maps, train_mt_bc, train_mtmh_bc, train_single_bc_all

__all__ = [
    "ComparisonTable",
    "ConfigError",
    "ExpertFailureError",
    "ExpertPolicy",
    "FileFormatError",
    "MapsError",
    "MapsModel",
    "TrainConfig",
    "TrainingDivergedError",
    "UsageReport",
    "ablate",
    "compare",
    "generate_demos",
    "get_suite",
    "init_maps",
    "maps_forward",
    "module_usage",
    "rollout_usage",
    "success_rate",
    "suite_config",
    "total_loss",
    "train_maps",
    "train_mt_bc",
    "train_mtmh_bc",
    "train_single_bc_all",
]
__version__ = "0.1.0"
