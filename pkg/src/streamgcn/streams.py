"""Node-stream construction from a static dataset: class-incremental and
time-incremental orderings, stratified transductive splits, and mini-batch
iteration.

Streams re-index nodes by arrival: event ids are 0..n-1 in stream order, and
each event's neighbor list is pre-filtered to nodes that already arrived, so
an edge attaches when its second endpoint streams. Task boundaries are
evaluation metadata only; the training loop never receives them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .datasets import StaticDataset
from .graph import TRAIN, VAL, TEST, UNLABELED, NodeEvent


class ScheduleError(ValueError):
    """The dataset cannot produce the requested stream/task layout."""


class EndOfStream(Exception):
    """All events have been consumed."""


@dataclass
class TaskSchedule:
    """Ordered tasks: label groups (class-incremental) or arrival-index
    intervals (time-incremental). ``boundaries[i]`` is the arrival index one
    past the last node of task i."""

    kind: str                           # "class" | "time"
    label_groups: list[tuple[int, ...]] | None
    intervals: list[tuple[int, int]] | None
    boundaries: list[int]
    boundary_index: int                 # tasks [0, boundary_index) tune hyperparameters

    @property
    def num_tasks(self) -> int:
        return len(self.boundaries)

    def task_of_label(self, label: int) -> int:
        for i, group in enumerate(self.label_groups or []):
            if label in group:
                return i
        raise ScheduleError(f"label {label} not covered by any task")

    def task_node_range(self, i: int) -> tuple[int, int]:
        start = 0 if i == 0 else self.boundaries[i - 1]
        return start, self.boundaries[i]

    def task_end_batches(self, batch_size: int) -> list[int]:
        """1-based index of the batch that completes each task."""
        return [int(np.ceil(b / batch_size)) for b in self.boundaries]


@dataclass
class SplitAssignment:
    """Per-node split tag, fixed for the run and independent of strategy."""

    tags: np.ndarray                    # aligned to ARRIVAL ids
    seed: int
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)


class NodeStream:
    """Ordered event sequence with a batch cursor."""

    def __init__(self, events: list[NodeEvent], split_tags: np.ndarray,
                 batch_size: int, source_ids: np.ndarray):
        if batch_size < 1:
            raise ScheduleError("batch size must be >= 1")
        self.events = events
        self.split_tags = np.asarray(split_tags, dtype=np.int64)
        self.batch_size = batch_size
        self.source_ids = np.asarray(source_ids, dtype=np.int64)
        self.cursor = 0

    def __len__(self) -> int:
        return len(self.events)

    @property
    def num_batches(self) -> int:
        return int(np.ceil(len(self.events) / self.batch_size))

    def exhausted(self) -> bool:
        return self.cursor >= len(self.events)

    def next_minibatch(self) -> list[NodeEvent]:
        if self.exhausted():
            raise EndOfStream
        end = min(self.cursor + self.batch_size, len(self.events))
        batch = self.events[self.cursor:end]
        self.cursor = end
        return batch

    def reset(self) -> None:
        self.cursor = 0

    def prefix(self, num_events: int) -> "NodeStream":
        """A stream over the first ``num_events`` events (shared event objects)."""
        return NodeStream(self.events[:num_events],
                          self.split_tags[:num_events],
                          self.batch_size,
                          self.source_ids[:num_events])


def assign_splits(labels: np.ndarray, seed: int,
                  fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
                  ) -> np.ndarray:
    """Stratified-by-class split tags over DATASET node ids.

    Unlabeled nodes are tagged train: they stream and join message passing
    but never produce a loss or evaluation term.
    """
    rng = np.random.default_rng(seed)
    n = len(labels)
    tags = np.full(n, TRAIN, dtype=np.int64)
    for cls in np.unique(labels):
        if cls == UNLABELED:
            continue
        ids = np.flatnonzero(labels == cls)
        if len(ids) < 5:
            warnings.warn(
                f"class {cls} has only {len(ids)} nodes; "
                "split falls back to plain proportions", stacklevel=2)
        ids = rng.permutation(ids)
        n_val = int(round(fractions[1] * len(ids)))
        n_test = int(round(fractions[2] * len(ids)))
        n_train = len(ids) - n_val - n_test
        tags[ids[:n_train]] = TRAIN
        tags[ids[n_train:n_train + n_val]] = VAL
        tags[ids[n_train + n_val:]] = TEST
    return tags


def events_for_order(dataset: StaticDataset, order: np.ndarray
                      ) -> list[NodeEvent]:
    """Re-index nodes by ``order`` and build arrival events whose neighbor
    lists contain only already-arrived nodes."""
    arrival = np.empty(dataset.num_nodes, dtype=np.int64)
    arrival[order] = np.arange(dataset.num_nodes)
    adj = dataset.neighbor_lists()
    events = []
    for t, orig in enumerate(order):
        nbrs = sorted(int(arrival[u]) for u in adj[orig] if arrival[u] < t)
        ts = int(dataset.timestamps[orig]) if dataset.timestamps is not None else None
        events.append(NodeEvent(
            node_id=t,
            features=dataset.features[orig],
            neighbors=np.array(nbrs, dtype=np.int64),
            label=int(dataset.labels[orig]),
            timestamp=ts,
        ))
    return events


def _boundary_index(num_tasks: int, frac: float, override: int | None) -> int:
    if override is not None:
        return min(max(1, override), max(num_tasks - 1, 0))
    if num_tasks < 2:
        return 0
    return min(max(1, int(round(frac * num_tasks))), num_tasks - 1)


def build_class_incremental(
    dataset: StaticDataset,
    classes_per_task: int = 2,
    class_order: list[int] | None = None,
    split_seed: int = 0,
    batch_size: int = 10,
    boundary_frac: float = 0.2,
    boundary_override: int | None = None,
) -> tuple[NodeStream, TaskSchedule, SplitAssignment]:
    """Group classes into fixed-order tasks and stream task by task, with a
    seeded shuffle inside each task. A trailing remainder of classes forms a
    smaller final task."""
    if classes_per_task < 1:
        raise ScheduleError("classes_per_task must be >= 1")
    if (dataset.labels == UNLABELED).any():
        raise ScheduleError("class-incremental streams need fully labeled nodes")
    present = sorted(int(c) for c in np.unique(dataset.labels))
    if class_order is None:
        class_order = present
    if sorted(class_order) != present:
        raise ScheduleError("class order must cover exactly the dataset classes")
    for cls in class_order:
        if not (dataset.labels == cls).any():
            raise ScheduleError(f"class {cls} has no nodes")

    groups = [tuple(class_order[i:i + classes_per_task])
              for i in range(0, len(class_order), classes_per_task)]

    rng = np.random.default_rng(split_seed)
    order_chunks = []
    boundaries = []
    total = 0
    for group in groups:
        mask = np.isin(dataset.labels, group)
        ids = rng.permutation(np.flatnonzero(mask))
        order_chunks.append(ids)
        total += len(ids)
        boundaries.append(total)
    order = np.concatenate(order_chunks)

    tags_by_orig = assign_splits(dataset.labels, split_seed)
    events = events_for_order(dataset, order)
    stream = NodeStream(events, tags_by_orig[order], batch_size, order)
    schedule = TaskSchedule(
        kind="class",
        label_groups=groups,
        intervals=None,
        boundaries=boundaries,
        boundary_index=_boundary_index(len(groups), boundary_frac,
                                       boundary_override),
    )
    return stream, schedule, SplitAssignment(tags=stream.split_tags, seed=split_seed)


def build_time_incremental(
    dataset: StaticDataset,
    eval_tasks: int = 10,
    split_seed: int = 0,
    batch_size: int = 50,
    boundary_frac: float = 0.2,
    boundary_override: int | None = None,
) -> tuple[NodeStream, TaskSchedule, SplitAssignment]:
    """Stream nodes by timestamp (stable tie-break on id); tasks are
    equal-count arrival intervals used only by evaluation."""
    if dataset.timestamps is None:
        raise ScheduleError("time-incremental streams need timestamps")
    if eval_tasks < 1:
        raise ScheduleError("eval_tasks must be >= 1")
    order = np.argsort(dataset.timestamps, kind="stable")

    n = dataset.num_nodes
    cuts = np.linspace(0, n, eval_tasks + 1).round().astype(int)
    intervals = [(int(cuts[i]), int(cuts[i + 1])) for i in range(eval_tasks)]
    boundaries = [int(c) for c in cuts[1:]]

    tags_by_orig = assign_splits(dataset.labels, split_seed)
    events = events_for_order(dataset, order)
    stream = NodeStream(events, tags_by_orig[order], batch_size, order)
    schedule = TaskSchedule(
        kind="time",
        label_groups=None,
        intervals=intervals,
        boundaries=boundaries,
        boundary_index=_boundary_index(eval_tasks, boundary_frac,
                                       boundary_override),
    )
    return stream, schedule, SplitAssignment(tags=stream.split_tags, seed=split_seed)
