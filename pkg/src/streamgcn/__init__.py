"""Desk-scale engine for online continual learning on streaming graph nodes.

A graph grows one node event at a time; a message-passing classifier trains
on each mini-batch under a bounded per-batch budget via fan-out-limited
neighborhood sampling; pluggable strategies (replay buffers, gradient
projection, importance regularization, distillation, decoupled or subgraph
memories) fight catastrophic forgetting; evaluation tracks the task
performance matrix, its average-performance and average-forgetting
summaries, and the per-batch anytime trace.
"""

from .datasets import SbmSpec, gen_sbm, load_dataset, save_dataset
from .evaluation import (AnytimeTrace, PerformanceMatrix, average_anytime,
                         average_forgetting, average_performance, f1_binary)
from .graph import (GrowingGraph, NodeEvent, SampledEgoGraph, HopProfile,
                    normalized_adjacency, profile_hops, sample_ego)
from .linalg import (AdamState, CsrMatrix, ParameterSet, finite_diff_check,
                     softmax_cross_entropy, spmm)
from .models import (GcnModel, MlpModel, OutputHead, load_checkpoint,
                     save_checkpoint, sgc_embed)
from .runner import (RunConfig, grid_select, load_config, run_experiment,
                     run_joint_upper_bound)
from .strategies import ReservoirBuffer, agem_project
from .streams import (build_class_incremental, build_time_incremental,
                      assign_splits)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AnytimeTrace", "CsrMatrix", "GcnModel", "GrowingGraph",
    "HopProfile", "MlpModel", "NodeEvent", "OutputHead", "ParameterSet",
    "PerformanceMatrix", "ReservoirBuffer", "RunConfig", "SampledEgoGraph",
    "SbmSpec", "agem_project", "assign_splits", "average_anytime",
    "average_forgetting", "average_performance", "build_class_incremental",
    "build_time_incremental", "f1_binary", "finite_diff_check", "gen_sbm",
    "grid_select", "load_checkpoint", "load_config", "load_dataset",
    "normalized_adjacency", "profile_hops", "run_experiment",
    "run_joint_upper_bound", "sample_ego", "save_checkpoint", "save_dataset",
    "sgc_embed", "softmax_cross_entropy", "spmm",
]
