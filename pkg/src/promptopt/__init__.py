"""Two-stage instruction optimization for multiple-choice question answering."""

from promptopt.dataset import Dataset, TaskItem, TaskSet, load_dataset
from promptopt.evaluator import EvalResult, ItemRecord, evaluate_prompt
from promptopt.metrics import CompositeScore, MetricVector, compute_metrics, normalize_and_compose
from promptopt.optimizer import OptimizerConfig, run_stage

__version__ = "0.1.0"

__all__ = [
    "CompositeScore",
    "Dataset",
    "EvalResult",
    "ItemRecord",
    "MetricVector",
    "OptimizerConfig",
    "TaskItem",
    "TaskSet",
    "compute_metrics",
    "evaluate_prompt",
    "load_dataset",
    "normalize_and_compose",
    "run_stage",
]
