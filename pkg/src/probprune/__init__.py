"""Structured probabilistic pruning of small convolutional networks.

A numpy CNN stack where convolution weights form a (c_out, c_in*kh*kw)
matrix whose columns are prunable weight groups.  Each group carries a
pruning probability that a rank-driven schedule nudges up or down every few
iterations; masks are re-sampled from those probabilities during training,
and a group whose probability saturates at one is removed for good.  The
package also ships the one-shot magnitude baseline, PCA-based layer
sensitivity, FLOP-targeted ratio allocation, checkpointing, and a compacted
inference path that turns finished masks into measured speedups.
"""

from .bench import BenchResult, CompactedNet, dense_forward, run_benchmark
from .checkpoint import load_checkpoint, model_arrays, restore_model_arrays, save_checkpoint
from .config import (
    ExperimentConfig,
    load_config,
    load_dataset,
    parse_model_spec,
    rebuild_model,
    spawn_rngs,
)
from .criteria import (
    RatioPlan,
    SensitivityCurve,
    allocate_ratios,
    conv_flops,
    fp_oneshot_prune,
    group_l1_norms,
    pca_sensitivity,
    rank_ascending,
    round_half_even,
)
from .data import Dataset, load_cifar10, synthetic_dataset, write_cifar10_dir
from .engine import (
    GroupStates,
    PruningRun,
    RecoveryRecord,
    recovery_ratio,
    retrain,
    run_training,
    sample_masks,
    spp_run,
    stop_condition,
    update_probabilities,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataFormatError,
    NumericsError,
    ProbpruneError,
    PruneTimeoutError,
    ShapeError,
)
from .layers import ConvLayer, FcLayer, MaxPoolLayer, ReluLayer, im2col, softmax_cross_entropy
from .metrics import METRICS_HEADER, MetricRow, RunMetrics, emit_metrics, read_metrics
from .network import ConvNetModel, MomentumSgd, SgdConfig, gradient_check, sgd_step
from .schedule import LayerSchedule, PruningSchedule, solve_schedule

__version__ = "0.1.0"

__all__ = [
    "BenchResult",
    "CheckpointError",
    "CompactedNet",
    "ConfigError",
    "ConvLayer",
    "ConvNetModel",
    "DataFormatError",
    "Dataset",
    "ExperimentConfig",
    "FcLayer",
    "GroupStates",
    "LayerSchedule",
    "METRICS_HEADER",
    "MaxPoolLayer",
    "MetricRow",
    "MomentumSgd",
    "NumericsError",
    "ProbpruneError",
    "PruneTimeoutError",
    "PruningRun",
    "PruningSchedule",
    "RatioPlan",
    "RecoveryRecord",
    "ReluLayer",
    "RunMetrics",
    "SensitivityCurve",
    "SgdConfig",
    "ShapeError",
    "allocate_ratios",
    "conv_flops",
    "dense_forward",
    "emit_metrics",
    "fp_oneshot_prune",
    "gradient_check",
    "group_l1_norms",
    "im2col",
    "load_checkpoint",
    "load_cifar10",
    "load_config",
    "load_dataset",
    "model_arrays",
    "parse_model_spec",
    "pca_sensitivity",
    "rank_ascending",
    "read_metrics",
    "rebuild_model",
    "recovery_ratio",
    "restore_model_arrays",
    "retrain",
    "round_half_even",
    "run_benchmark",
    "run_training",
    "sample_masks",
    "save_checkpoint",
    "sgd_step",
    "softmax_cross_entropy",
    "solve_schedule",
    "spawn_rngs",
    "spp_run",
    "stop_condition",
    "synthetic_dataset",
    "update_probabilities",
    "write_cifar10_dir",
]
