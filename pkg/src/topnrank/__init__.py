"""Top-N-Rank: list-wise learning to rank for top-N recommendation.

Optimizes a weighted, top-truncated DCG surrogate over a latent factor
model, with a generic trainer for any smoothing and a linear-time sorted
trainer for the rectifier.
"""

from .data import (
    InteractionDataset,
    RawRating,
    SplitPair,
    filter_sparse_users,
    load_ratings,
    split_half,
    to_implicit,
)
from .evaluation import (
    AblationReport,
    ExperimentReport,
    SplitMetrics,
    evaluate_model,
    ndcg_at_n,
    run_ablation,
    run_experiment,
)
from .model import (
    FactorModel,
    init_model,
    init_width,
    load_checkpoint,
    save_checkpoint,
    score_moments,
)
from .objective import (
    DivergenceError,
    LossGradient,
    Objective,
    OpCounters,
    Smoothing,
    loss_and_gradient,
    sgd_step_generic,
    smoothed_rank,
    smoothed_ranks,
    wdcg_exact,
)
from .training import (
    BenchmarkRow,
    TrainConfig,
    TrainingLog,
    benchmark_scaling,
    sgd_step,
    sgd_step_fast,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AblationReport",
    "BenchmarkRow",
    "DivergenceError",
    "ExperimentReport",
    "FactorModel",
    "InteractionDataset",
    "LossGradient",
    "Objective",
    "OpCounters",
    "RawRating",
    "SplitMetrics",
    "SplitPair",
    "Smoothing",
    "TrainConfig",
    "TrainingLog",
    "benchmark_scaling",
    "evaluate_model",
    "filter_sparse_users",
    "init_model",
    "init_width",
    "load_checkpoint",
    "load_ratings",
    "loss_and_gradient",
    "ndcg_at_n",
    "run_ablation",
    "run_experiment",
    "save_checkpoint",
    "score_moments",
    "sgd_step",
    "sgd_step_fast",
    "sgd_step_generic",
    "smoothed_rank",
    "smoothed_ranks",
    "split_half",
    "to_implicit",
    "train",
    "wdcg_exact",
]
