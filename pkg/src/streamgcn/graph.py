"""The evolving graph: node-event ingestion, incremental undirected adjacency,
fan-out-bounded ego-graph sampling, symmetric normalization, and a hop
expansion profiler.

Node ids are dense arrival indices: the t-th ingested event must carry id t,
and may only reference neighbors that already arrived. The global adjacency is
loop-free; self-loops exist only inside sampled ego graphs, where the GCN
normalization needs them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import CsrMatrix

UNLABELED = -1

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {"train": TRAIN, "val": VAL, "test": TEST}


class StreamOrderError(ValueError):
    """Event id does not match the next arrival index."""


class DanglingEdgeError(ValueError):
    """Event references a neighbor that has not arrived."""


class EmptyBatchError(ValueError):
    """Ego sampling was asked for an empty seed list."""


class ContractViolation(ValueError):
    """An internal precondition did not hold."""


@dataclass
class NodeEvent:
    """One arrival: a node, its features, and edges to already-present nodes."""

    node_id: int
    features: np.ndarray
    neighbors: np.ndarray
    label: int = UNLABELED
    timestamp: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.neighbors = np.asarray(self.neighbors, dtype=np.int64)
        if len(np.unique(self.neighbors)) != len(self.neighbors):
            raise DanglingEdgeError(f"event {self.node_id}: duplicate neighbor ids")


class GrowingGraph:
    """Time-indexed snapshot of the streamed graph.

    Training code must only read labels through the masked loss path; the
    label table exists so evaluation can score val/test nodes. Storage is
    append-only with doubling numpy buffers.
    """

    def __init__(self, feature_dim: int, num_classes: int):
        self.feature_dim = int(feature_dim)
        self.num_classes = int(num_classes)
        self._size = 0
        cap = 16
        self._feat = np.empty((cap, self.feature_dim))
        self._label = np.empty(cap, dtype=np.int64)
        self._split = np.empty(cap, dtype=np.int64)
        self._ts = np.full(cap, -1, dtype=np.int64)
        self.adj: list[list[int]] = []
        self._op_cache: tuple[int, CsrMatrix] | None = None

    @property
    def size(self) -> int:
        return self._size

    def _grow(self) -> None:
        cap = self._feat.shape[0]
        if self._size < cap:
            return
        new_cap = cap * 2
        self._feat = np.concatenate(
            [self._feat, np.empty((new_cap - cap, self.feature_dim))])
        self._label = np.concatenate(
            [self._label, np.empty(new_cap - cap, dtype=np.int64)])
        self._split = np.concatenate(
            [self._split, np.empty(new_cap - cap, dtype=np.int64)])
        self._ts = np.concatenate(
            [self._ts, np.full(new_cap - cap, -1, dtype=np.int64)])

    def ingest(self, event: NodeEvent, split: int = TRAIN) -> None:
        if event.node_id != self._size:
            raise StreamOrderError(
                f"expected event id {self._size}, got {event.node_id}"
            )
        if event.features.shape != (self.feature_dim,):
            raise ContractViolation(
                f"event {event.node_id}: feature length {event.features.shape} "
                f"!= {self.feature_dim}"
            )
        if len(event.neighbors) and (
            event.neighbors.min() < 0 or event.neighbors.max() >= self._size
        ):
            raise DanglingEdgeError(
                f"event {event.node_id}: neighbor outside arrived nodes"
            )
        self._grow()
        t = self._size
        self._feat[t] = event.features
        self._label[t] = int(event.label)
        self._split[t] = int(split)
        self._ts[t] = -1 if event.timestamp is None else int(event.timestamp)
        self.adj.append([])
        self._size += 1
        for u in event.neighbors.tolist():
            self.adj[u].append(t)
            self.adj[t].append(u)
        self._op_cache = None

    def degree(self, v: int) -> int:
        return len(self.adj[v])

    def features_of(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) == 0:
            return np.zeros((0, self.feature_dim))
        return self._feat[ids]

    def labels_of(self, ids) -> np.ndarray:
        return self._label[np.asarray(ids, dtype=np.int64)]

    def splits_of(self, ids) -> np.ndarray:
        return self._split[np.asarray(ids, dtype=np.int64)]

    def label_of(self, v: int) -> int:
        return int(self._label[v])

    def split_of(self, v: int) -> int:
        return int(self._split[v])

    def edge_count(self) -> int:
        return sum(len(n) for n in self.adj) // 2

    def snapshot_operator(self) -> tuple[CsrMatrix, np.ndarray]:
        """Normalized full-graph adjacency (with self-loops) and the feature
        table over all streamed nodes; cached until the next ingest."""
        if self._op_cache is not None and self._op_cache[0] == self._size:
            return self._op_cache[1], self._feat[: self._size]
        n = self._size
        counts = np.array([len(self.adj[v]) + 1 for v in range(n)], dtype=np.int64)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        cols = np.empty(offsets[-1], dtype=np.int64)
        for v in range(n):
            cs = sorted(self.adj[v] + [v])
            cols[offsets[v]:offsets[v + 1]] = cs
        adj = CsrMatrix(n, n, offsets, cols, np.ones(len(cols)))
        norm = normalized_adjacency(adj)
        self._op_cache = (n, norm)
        return norm, self._feat[:n]


@dataclass
class SampledEgoGraph:
    """Locally renumbered computation graph for one mini-batch.

    ``nodes[i]`` is the global id of local node i; seeds occupy the first
    ``len(seed_ids)`` local rows. ``norm_adj`` is the symmetrically normalized
    local adjacency including self-loops.
    """

    seed_ids: np.ndarray
    nodes: np.ndarray
    hop_lists: list[np.ndarray]
    adj: CsrMatrix
    norm_adj: CsrMatrix
    features: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def seed_rows(self) -> np.ndarray:
        return np.arange(len(self.seed_ids))


def ego_node_bound(batch_size: int, fanouts) -> int:
    """Closed-form cap on sampled ego size: B*(1 + f1 + f1*f2 + ...)."""
    total = 1
    layer = 1
    for f in fanouts:
        layer *= f
        total += layer
    return batch_size * total


def sample_ego(
    graph: GrowingGraph,
    seeds,
    fanouts,
    rng: np.random.Generator | None = None,
) -> SampledEgoGraph:
    """Sample a fan-out-bounded multi-hop ego graph around ``seeds``.

    Per node and hop, ``min(degree, fanout)`` neighbors are drawn uniformly
    without replacement; a fanout of ``None`` keeps the full neighborhood. Hop
    lists contain only first-discovered nodes, so the total node count obeys
    ``ego_node_bound``. The local adjacency is the symmetrized set of sampled
    edges plus a self-loop on every node.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    if len(seeds) == 0:
        raise EmptyBatchError("seed list is empty")
    if len(np.unique(seeds)) != len(seeds):
        raise ContractViolation("seed ids must be unique")
    if seeds.max() >= graph.size:
        raise ContractViolation("seed id beyond streamed nodes")

    local_of: dict[int, int] = {int(g): i for i, g in enumerate(seeds)}
    nodes: list[int] = [int(g) for g in seeds]
    hop_lists: list[np.ndarray] = [seeds.copy()]
    edge_src: list[int] = []
    edge_dst: list[int] = []

    frontier = nodes[:]
    for cap in fanouts:
        next_frontier: list[int] = []
        for u in frontier:
            nbrs = graph.adj[u]
            deg = len(nbrs)
            if deg == 0:
                continue
            if cap is None or deg <= cap:
                chosen = nbrs
            else:
                if rng is None:
                    raise ContractViolation("rng required when fan-out binds")
                pick = rng.choice(deg, size=cap, replace=False)
                chosen = [nbrs[int(i)] for i in pick]
            lu = local_of[u]
            for w in chosen:
                lw = local_of.get(w)
                if lw is None:
                    lw = len(nodes)
                    local_of[w] = lw
                    nodes.append(w)
                    next_frontier.append(w)
                edge_src.append(lu)
                edge_dst.append(lw)
        hop_lists.append(np.array(next_frontier, dtype=np.int64))
        frontier = next_frontier

    n = len(nodes)
    src = np.array(edge_src + edge_dst + list(range(n)), dtype=np.int64)
    dst = np.array(edge_dst + edge_src + list(range(n)), dtype=np.int64)
    adj = CsrMatrix.from_edges(n, n, src, dst, np.ones(len(src)))
    # duplicate sampled edges collapse to pattern, not weight
    adj = CsrMatrix(n, n, adj.row_offsets, adj.col_indices,
                    np.ones_like(adj.nz_values))
    norm = normalized_adjacency(adj)
    feats = graph.features_of(nodes)

    bound_fanouts = [f for f in fanouts if f is not None]
    if len(bound_fanouts) == len(fanouts):
        assert n <= ego_node_bound(len(seeds), fanouts), "ego bound violated"

    return SampledEgoGraph(
        seed_ids=seeds,
        nodes=np.array(nodes, dtype=np.int64),
        hop_lists=hop_lists,
        adj=adj,
        norm_adj=norm,
        features=feats,
    )


def normalized_adjacency(adj: CsrMatrix) -> CsrMatrix:
    """Symmetric GCN normalization D^{-1/2} A D^{-1/2} of an adjacency that
    already includes self-loops."""
    if adj.rows != adj.cols:
        raise ContractViolation("adjacency must be square")
    row_ids = np.repeat(np.arange(adj.rows), np.diff(adj.row_offsets))
    diag_hits = np.bincount(row_ids[adj.col_indices == row_ids],
                            minlength=adj.rows)
    if (diag_hits == 0).any():
        raise ContractViolation("self-loops required before normalization")
    deg = np.diff(adj.row_offsets).astype(np.float64)
    # symmetry: pattern of A must equal pattern of A^T
    t = adj._as_scipy().transpose().tocsr()
    t.sort_indices()
    if not (
        np.array_equal(t.indptr, adj.row_offsets)
        and np.array_equal(t.indices, adj.col_indices)
    ):
        raise ContractViolation("adjacency must be symmetric")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return adj.scale_rows_cols(inv_sqrt, inv_sqrt)


@dataclass
class HopProfile:
    """Cumulative l-hop neighborhood sizes of a batch, plus the edge counts
    crossing from each (l-1)-hop union into the new l-th shell."""

    node_counts: list[int]
    edge_counts: list[int]

    def __post_init__(self):
        if any(b < a for a, b in zip(self.node_counts, self.node_counts[1:])):
            raise ContractViolation("hop node counts must be non-decreasing")


def profile_hops(graph: GrowingGraph, batch, l_max: int) -> HopProfile:
    """BFS layering from ``batch``: node_counts[l] is the size of the union
    l-hop neighborhood (hop 0 = the batch itself), edge_counts[l] the number
    of undirected edges between the (l-1)-hop union and the l-th shell."""
    batch = [int(b) for b in batch]
    if not batch:
        raise EmptyBatchError("batch is empty")
    ball = set(batch)
    frontier = list(ball)
    node_counts = [len(ball)]
    edge_counts = [0]
    for _ in range(l_max):
        shell_set: set[int] = set()
        for u in frontier:
            for w in graph.adj[u]:
                if w not in ball:
                    shell_set.add(w)
        crossing = 0
        for w in shell_set:
            for u in graph.adj[w]:
                if u in ball:
                    crossing += 1
        ball |= shell_set
        frontier = sorted(shell_set)
        node_counts.append(len(ball))
        edge_counts.append(crossing)
    return HopProfile(node_counts=node_counts, edge_counts=edge_counts)
