"""Task-wise evaluation and the stream-level metric suite.

The performance matrix M is T x T: row i holds per-task test performance
measured right after task i's portion of the stream finished. The summary
metrics are

    average performance   AP  = mean of the final row,
    average forgetting    AF  = mean over i < T of M[T-1, i] - M[i, i],
    average anytime perf. AAP = mean of the per-batch validation AP trace.

Entries for tasks whose nodes have not streamed yet are absent (NaN), never
zero, and absent tasks are left out of every denominator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import GrowingGraph, UNLABELED
from .streams import TaskSchedule


class MetricContractError(ValueError):
    """A metric was requested before its inputs were complete."""


@dataclass
class PerformanceMatrix:
    num_tasks: int
    values: np.ndarray = field(init=False)
    _rows_filled: set = field(init=False, default_factory=set)

    def __post_init__(self):
        self.values = np.full((self.num_tasks, self.num_tasks), np.nan)

    def fill_row(self, i: int, per_task: dict[int, float]) -> None:
        for j, v in per_task.items():
            if v is not None:
                if not 0.0 <= v <= 1.0:
                    raise MetricContractError(f"metric value {v} outside [0, 1]")
                self.values[i, j] = v
        self._rows_filled.add(i)

    def row_complete(self, i: int) -> bool:
        return i in self._rows_filled and not np.isnan(self.values[i]).any()


def average_performance(matrix: PerformanceMatrix) -> float:
    last = matrix.num_tasks - 1
    if not matrix.row_complete(last):
        raise MetricContractError("final row of the performance matrix unfilled")
    return float(matrix.values[last].mean())


def average_forgetting(matrix: PerformanceMatrix) -> float | None:
    t = matrix.num_tasks
    if t < 2:
        return None
    last = matrix.values[t - 1]
    diag = np.diag(matrix.values)
    if np.isnan(last[: t - 1]).any() or np.isnan(diag[: t - 1]).any():
        raise MetricContractError("forgetting needs the diagonal and final row")
    return float((last[: t - 1] - diag[: t - 1]).mean())


@dataclass
class AnytimeTrace:
    """Validation AP after each evaluated batch."""

    stride: int = 1
    batch_indices: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def record(self, batch_index: int, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise MetricContractError(f"AP value {value} outside [0, 1]")
        self.batch_indices.append(batch_index)
        self.values.append(value)


def average_anytime(trace: AnytimeTrace) -> float:
    """Mean of AP over the evaluated batches (stride > 1 averages only the
    points actually evaluated)."""
    if not trace.values:
        raise MetricContractError("anytime trace is empty")
    return float(np.mean(trace.values))


def f1_binary(predictions: np.ndarray, labels: np.ndarray,
              positive_class: int) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    tp = int(np.sum((predictions == positive_class) & (labels == positive_class)))
    fp = int(np.sum((predictions == positive_class) & (labels != positive_class)))
    fn = int(np.sum((predictions != positive_class) & (labels == positive_class)))
    if tp == 0 and (fp > 0 or fn > 0):
        return 0.0
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2.0 * precision * recall / (precision + recall))


def task_eval_nodes(graph: GrowingGraph, schedule: TaskSchedule, task: int,
                    split: int) -> np.ndarray:
    """Streamed, labeled nodes of a task restricted to one split."""
    t = graph.size
    all_ids = np.arange(t)
    labels = graph.labels_of(all_ids)
    splits = graph.splits_of(all_ids)
    if schedule.kind == "class":
        group = schedule.label_groups[task]
        mask = np.isin(labels, group) & (splits == split)
    else:
        lo, hi = schedule.intervals[task]
        mask = (all_ids >= lo) & (all_ids < hi) & \
            (labels != UNLABELED) & (splits == split)
    return all_ids[mask]


def evaluate_tasks(predict, graph: GrowingGraph, schedule: TaskSchedule,
                   split: int, metric: str = "accuracy",
                   positive_class: int = 1,
                   tasks: list[int] | None = None) -> dict[int, float | None]:
    """Score each task's split nodes with one shared forward pass.

    ``predict(graph, ids)`` must return predicted labels for the given node
    ids using only currently streamed nodes. Tasks with no streamed split
    nodes map to None (absent).
    """
    if tasks is None:
        tasks = list(range(schedule.num_tasks))
    per_task_ids = {j: task_eval_nodes(graph, schedule, j, split) for j in tasks}
    all_ids = np.concatenate([v for v in per_task_ids.values() if len(v)]) \
        if any(len(v) for v in per_task_ids.values()) else np.zeros(0, np.int64)
    if len(all_ids) == 0:
        return {j: None for j in tasks}
    preds = predict(graph, all_ids)
    pred_of = dict(zip(all_ids.tolist(), np.asarray(preds).tolist()))

    out: dict[int, float | None] = {}
    for j, ids in per_task_ids.items():
        if len(ids) == 0:
            out[j] = None
            continue
        p = np.array([pred_of[int(v)] for v in ids])
        y = graph.labels_of(ids)
        if metric == "accuracy":
            out[j] = float(np.mean(p == y))
        elif metric == "f1":
            out[j] = f1_binary(p, y, positive_class)
        else:
            raise ValueError(f"unknown metric {metric!r}")
    return out


def evaluate_task(predict, graph: GrowingGraph, schedule: TaskSchedule,
                  task: int, split: int, metric: str = "accuracy",
                  positive_class: int = 1) -> float | None:
    return evaluate_tasks(predict, graph, schedule, split, metric,
                          positive_class, tasks=[task])[task]


def anytime_ap(predict, graph: GrowingGraph, schedule: TaskSchedule,
               split: int, metric: str = "accuracy",
               positive_class: int = 1) -> float | None:
    """Mean task performance over tasks already introduced to the stream."""
    scores = evaluate_tasks(predict, graph, schedule, split, metric,
                            positive_class)
    present = [v for v in scores.values() if v is not None]
    if not present:
        return None
    return float(np.mean(present))
