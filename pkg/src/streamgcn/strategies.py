"""Pluggable train-step strategies over the streaming backbone.

Every strategy consumes one ingested mini-batch at a time: it samples a
fan-out-bounded ego graph around the batch, takes one optimizer step per
pass (optionally several passes per batch), and maintains its own persistent
state (replay buffer, importance accumulators, teacher snapshot, embedding or
subgraph memory). Buffer insertion happens once per batch regardless of the
number of passes, so inclusion probabilities stay honest.

Per-step compute is bounded: the number of forward-pass nodes each optimizer
step touches never exceeds a closed form in the batch size, fan-outs, and
memory-sample sizes, independent of how large the graph has grown.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import (TRAIN, UNLABELED, GrowingGraph, SampledEgoGraph,
                    ego_node_bound, sample_ego)
from .linalg import AdamState, CsrMatrix, ParameterSet, softmax_cross_entropy
from .models import GcnModel, MlpModel, OutputHead, sgc_embed


class ConfigurationError(ValueError):
    """A strategy was configured inconsistently."""


# ---------------------------------------------------------------------------
# buffers and persistent state


class ReservoirBuffer:
    """Capacity-k uniform sample of a stream: after n insertions each item
    remains with probability k/n."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 0:
            raise ConfigurationError("buffer capacity must be >= 0")
        self.capacity = capacity
        self.rng = rng
        self.items: list = []
        self.seen = 0

    def __len__(self) -> int:
        return len(self.items)

    def insert(self, item) -> None:
        self.seen += 1
        if self.capacity == 0:
            return
        if len(self.items) < self.capacity:
            self.items.append(item)
            return
        j = int(self.rng.integers(0, self.seen))
        if j < self.capacity:
            self.items[j] = item

    def sample(self, size: int, rng: np.random.Generator) -> list:
        if size >= len(self.items):
            return list(self.items)
        idx = rng.choice(len(self.items), size=size, replace=False)
        return [self.items[int(i)] for i in idx]


@dataclass
class ImportanceState:
    """Running-average per-parameter importance plus the anchor weights the
    quadratic penalty pulls toward."""

    importance: dict[str, np.ndarray]
    anchor: dict[str, np.ndarray]
    n_upd: int = 0

    @classmethod
    def fresh(cls, params: ParameterSet) -> "ImportanceState":
        return cls(importance=params.zeros_like_values(),
                   anchor=params.clone_values())

    def update(self, source: dict[str, np.ndarray],
               new_anchor: dict[str, np.ndarray]) -> None:
        for n, s in source.items():
            self.importance[n] = (self.n_upd * self.importance[n] + s) \
                / (self.n_upd + 1)
        self.n_upd += 1
        self.anchor = new_anchor


@dataclass
class TeacherSnapshot:
    """Frozen parameter copy for distillation; refreshed every
    ``update_every`` batches."""

    values: dict[str, np.ndarray] | None = None
    label_to_col: dict[int, int] = field(default_factory=dict)
    batches_since: int = 0


@dataclass
class SubgraphEntry:
    """A sparsified ego graph frozen at insertion time (seed at local row 0)."""

    seed_id: int
    features: np.ndarray
    norm_adj: CsrMatrix
    label: int

    @property
    def node_count(self) -> int:
        return self.features.shape[0]


class SparsifiedSubgraphMemory:
    """Reservoir of sparsified subgraphs; capacity counts total stored nodes,
    so fewer examples fit than a flat node buffer of the same size."""

    def __init__(self, capacity_nodes: int, budgets: tuple[int, int],
                 rng: np.random.Generator):
        b1, b2 = budgets
        self.budgets = (int(b1), int(b2))
        self.max_entry_nodes = 1 + b1 + b1 * b2
        if capacity_nodes < self.max_entry_nodes:
            raise ConfigurationError(
                f"capacity {capacity_nodes} cannot hold one entry of up to "
                f"{self.max_entry_nodes} nodes")
        self.buffer = ReservoirBuffer(capacity_nodes // self.max_entry_nodes, rng)
        self.capacity_nodes = capacity_nodes

    def __len__(self) -> int:
        return len(self.buffer)

    def total_stored_nodes(self) -> int:
        return sum(e.node_count for e in self.buffer.items)

    def insert_node(self, graph: GrowingGraph, v: int,
                    rng: np.random.Generator) -> None:
        ego = sample_ego(graph, [v], self.budgets, rng)
        entry = SubgraphEntry(seed_id=v,
                              features=ego.features.copy(),
                              norm_adj=ego.norm_adj,
                              label=graph.label_of(v))
        self.buffer.insert(entry)

    def sample(self, size: int, rng: np.random.Generator) -> list[SubgraphEntry]:
        return self.buffer.sample(size, rng)


def block_diag_csr(mats: list[CsrMatrix]) -> CsrMatrix:
    """Stack square CSR matrices along the diagonal."""
    n = sum(m.rows for m in mats)
    offsets = [np.zeros(1, dtype=np.int64)]
    cols = []
    vals = []
    row_base = 0
    nnz_base = 0
    for m in mats:
        offsets.append(m.row_offsets[1:] + nnz_base)
        cols.append(m.col_indices + row_base)
        vals.append(m.nz_values)
        row_base += m.rows
        nnz_base += m.nnz
    return CsrMatrix(n, n,
                     np.concatenate(offsets),
                     np.concatenate(cols) if cols else np.zeros(0, np.int64),
                     np.concatenate(vals) if vals else np.zeros(0))


# ---------------------------------------------------------------------------
# loss terms shared by the regularization strategies


def agem_project(g: np.ndarray, g_ref: np.ndarray) -> np.ndarray:
    """Project g out of the half-space opposing g_ref.

    Returns g unchanged when the gradients agree (dot >= 0) or the reference
    vanishes; otherwise g - (g.g_ref / g_ref.g_ref) g_ref, whose dot with
    g_ref is zero.
    """
    if g.shape != g_ref.shape:
        raise ConfigurationError("gradient vectors must have equal length")
    denom = float(g_ref @ g_ref)
    if denom == 0.0:
        return g
    dot = float(g @ g_ref)
    if dot >= 0.0:
        return g
    return g - (dot / denom) * g_ref


def quadratic_penalty(params: ParameterSet, importance: dict[str, np.ndarray],
                      anchor: dict[str, np.ndarray], lam: float,
                      accumulate: bool = True) -> float:
    """lam * sum_i importance_i (theta_i - anchor_i)^2; gradient
    2 lam importance (theta - anchor) is accumulated unless disabled."""
    total = 0.0
    for n in params.names:
        d = params.values[n] - anchor[n]
        total += float(lam * np.sum(importance[n] * d * d))
        if accumulate:
            params.grads[n] += 2.0 * lam * importance[n] * d
    return total


def distillation_term(student_logits: np.ndarray, teacher_logits: np.ndarray,
                      cols: np.ndarray, lam: float, temperature: float
                      ) -> tuple[float, np.ndarray]:
    """Temperature-scaled soft-target cross-entropy over the teacher's
    columns, scaled by lam * T^2 so its gradient magnitude stays comparable
    across temperatures. Returns the term and its student-logit gradient."""
    cols = np.asarray(cols, dtype=np.int64)
    if len(cols) == 0:
        return 0.0, np.zeros_like(student_logits)
    t = float(temperature)
    zs = student_logits[:, cols] / t
    zt = teacher_logits[:, cols] / t

    def softmax(z):
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    p = softmax(zt)
    log_q = zs - zs.max(axis=1, keepdims=True)
    log_q = log_q - np.log(np.exp(log_q).sum(axis=1, keepdims=True))
    rows = student_logits.shape[0]
    term = float(lam * t * t * np.mean(-(p * log_q).sum(axis=1)))
    d = np.zeros_like(student_logits)
    d[:, cols] = lam * t * (softmax(zs) - p) / rows
    return term, d


def empirical_fisher(params: ParameterSet) -> dict[str, np.ndarray]:
    """Squared per-parameter gradients of the label cross-entropy."""
    return {n: params.grads[n] ** 2 for n in params.names}


# ---------------------------------------------------------------------------
# strategy scaffolding


@dataclass
class StepStats:
    skipped: bool = False
    notice: str | None = None
    losses: list[float] = field(default_factory=list)
    touched: list[int] = field(default_factory=list)
    agem_dots: list[float] = field(default_factory=list)


@dataclass
class PassResult:
    loss: float
    touched: int
    agem_dot: float | None = None
    extras: dict = field(default_factory=dict)


class GcnStrategyBase:
    """Shared skeleton: mask the batch to labeled train seeds, grow the head,
    run ``passes`` optimizer steps, then update persistent state once."""

    name = "base"

    def __init__(self, model: GcnModel, head: OutputHead, opt: AdamState,
                 rng: np.random.Generator, batch_size: int, fanouts,
                 passes: int = 1):
        self.model = model
        self.head = head
        self.opt = opt
        self.rng = rng
        # memory maintenance draws from its own stream so that strategies
        # with inert state consume the ego-sampling stream exactly like bare
        self.mem_rng = np.random.default_rng(rng.integers(2**63 - 1, size=8))
        self.batch_size = batch_size
        self.fanouts = tuple(fanouts)
        self.passes = passes

    # -- shared pieces ------------------------------------------------------

    def _batch_ego(self, graph: GrowingGraph, batch_ids: np.ndarray
                   ) -> SampledEgoGraph:
        return sample_ego(graph, batch_ids, self.fanouts, self.rng)

    def _ce_backward(self, logits: np.ndarray, cache, train_pos: np.ndarray,
                     label_cols: np.ndarray) -> float:
        """Zero grads, backprop the masked batch cross-entropy, return loss."""
        loss, dsub = softmax_cross_entropy(
            logits[train_pos], label_cols, self.head.active_cols)
        dlog = np.zeros_like(logits)
        dlog[train_pos] = dsub
        self.model.params.zero_grads()
        self.model.backward(cache, dlog)
        return loss

    def process_batch(self, graph: GrowingGraph, batch_ids) -> StepStats:
        batch_ids = np.asarray(batch_ids, dtype=np.int64)
        splits = graph.splits_of(batch_ids)
        labels = graph.labels_of(batch_ids)
        train_pos = np.flatnonzero((splits == TRAIN) & (labels != UNLABELED))
        if len(train_pos) == 0:
            return StepStats(skipped=True,
                             notice="batch has no labeled train nodes")
        train_labels = labels[train_pos]
        self.head.observe(self.model, train_labels)

        stats = StepStats()
        first: PassResult | None = None
        for _ in range(self.passes):
            res = self._pass(graph, batch_ids, train_pos, train_labels)
            if first is None:
                first = res
            stats.losses.append(res.loss)
            stats.touched.append(res.touched)
            if res.agem_dot is not None:
                stats.agem_dots.append(res.agem_dot)
        self._after_batch(graph, batch_ids[train_pos], train_labels, first)
        return stats

    # -- per-strategy hooks --------------------------------------------------

    def _pass(self, graph, batch_ids, train_pos, train_labels) -> PassResult:
        raise NotImplementedError

    def _after_batch(self, graph, train_ids, train_labels,
                     first: PassResult) -> None:
        pass

    def touched_bound(self) -> int | None:
        """Closed-form per-step cap on forward-pass nodes; None if unbounded
        (full neighborhoods)."""
        if any(f is None for f in self.fanouts):
            return None
        return ego_node_bound(self.batch_size, self.fanouts)

    # -- inference -----------------------------------------------------------

    def predict(self, graph: GrowingGraph, ids, fanouts=None,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Predicted labels for ``ids`` over currently streamed nodes.

        Default is full message passing on the whole snapshot (deterministic);
        passing fanouts switches to sampled neighborhoods using ``rng``.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if fanouts is None:
            norm, feats = graph.snapshot_operator()
            logits, _ = self.model.forward_parts(norm, feats, ids)
        else:
            ego = sample_ego(graph, np.unique(ids), fanouts, rng)
            row_of = {int(g): i for i, g in enumerate(ego.seed_ids)}
            all_logits, _ = self.model.forward(ego)
            logits = all_logits[[row_of[int(v)] for v in ids]]
        return self.head.predict(logits)


class BareStrategy(GcnStrategyBase):
    """Plain fine-tuning on the incoming stream; the lower bound."""

    name = "bare"

    def _pass(self, graph, batch_ids, train_pos, train_labels) -> PassResult:
        ego = self._batch_ego(graph, batch_ids)
        logits, cache = self.model.forward(ego)
        loss = self._ce_backward(logits, cache, train_pos,
                                 self.head.cols_of(train_labels))
        self.opt.step(self.model.params)
        return PassResult(loss=loss, touched=ego.num_nodes)


class ErStrategy(GcnStrategyBase):
    """Experience replay: the batch loss is augmented with the loss on nodes
    drawn uniformly from a reservoir buffer, replayed with neighborhoods
    re-sampled from the current graph (structural shift included)."""

    name = "er"

    def __init__(self, *args, buffer_capacity: int = 1000,
                 memory_proportion: int = 1, **kwargs):
        super().__init__(*args, **kwargs)
        if memory_proportion < 0:
            raise ConfigurationError("memory proportion must be >= 0")
        self.m = memory_proportion
        self.buffer = ReservoirBuffer(buffer_capacity, self.mem_rng)

    def _replay_sample(self) -> tuple[np.ndarray, np.ndarray]:
        picked = self.buffer.sample(self.m * self.batch_size, self.mem_rng)
        ids = np.array([p[0] for p in picked], dtype=np.int64)
        labels = np.array([p[1] for p in picked], dtype=np.int64)
        return ids, labels

    def _pass(self, graph, batch_ids, train_pos, train_labels) -> PassResult:
        ego = self._batch_ego(graph, batch_ids)
        logits, cache = self.model.forward(ego)
        loss = self._ce_backward(logits, cache, train_pos,
                                 self.head.cols_of(train_labels))
        touched = ego.num_nodes
        if len(self.buffer) and self.m > 0:
            r_ids, r_labels = self._replay_sample()
            rego = sample_ego(graph, r_ids, self.fanouts, self.rng)
            r_logits, r_cache = self.model.forward(rego)
            r_loss, r_dsub = softmax_cross_entropy(
                r_logits, self.head.cols_of(r_labels), self.head.active_cols)
            self.model.backward(r_cache, r_dsub)
            loss += r_loss
            touched += rego.num_nodes
        self.opt.step(self.model.params)
        return PassResult(loss=loss, touched=touched)

    def _after_batch(self, graph, train_ids, train_labels, first) -> None:
        for v, y in zip(train_ids.tolist(), train_labels.tolist()):
            self.buffer.insert((v, y))

    def touched_bound(self) -> int | None:
        base = super().touched_bound()
        if base is None:
            return None
        return base + self.m * ego_node_bound(self.batch_size, self.fanouts)


class AGemStrategy(ErStrategy):
    """Averaged gradient episodic memory: the batch gradient is projected
    onto the half-space where the buffer-sample gradient does not increase."""

    name = "agem"

    def _pass(self, graph, batch_ids, train_pos, train_labels) -> PassResult:
        ego = self._batch_ego(graph, batch_ids)
        logits, cache = self.model.forward(ego)
        loss = self._ce_backward(logits, cache, train_pos,
                                 self.head.cols_of(train_labels))
        touched = ego.num_nodes
        dot = None
        if len(self.buffer) and self.m > 0:
            g = self.model.params.flat_grads()
            r_ids, r_labels = self._replay_sample()
            rego = sample_ego(graph, r_ids, self.fanouts, self.rng)
            r_logits, r_cache = self.model.forward(rego)
            _, r_dsub = softmax_cross_entropy(
                r_logits, self.head.cols_of(r_labels), self.head.active_cols)
            self.model.params.zero_grads()
            self.model.backward(r_cache, r_dsub)
            g_ref = self.model.params.flat_grads()
            g_proj = agem_project(g, g_ref)
            dot = float(g_proj @ g_ref)
            assert dot >= -1e-9, "projected gradient opposes the memory gradient"
            self.model.params.set_flat_grads(g_proj)
            touched += rego.num_nodes
        self.opt.step(self.model.params)
        return PassResult(loss=loss, touched=touched, agem_dot=dot)


class EwcStrategy(GcnStrategyBase):
    """Quadratic pull toward anchor weights, weighted by a running-average
    empirical Fisher diagonal; fully task-free (anchor refreshed per batch)."""

    name = "ewc"

    def __init__(self, *args, penalty_lambda: float = 1.0, **kwargs):
        super().__init__(*args, **kwargs)
        self.lam = float(penalty_lambda)
        self.state = ImportanceState.fresh(self.model.params)

    def _pass(self, graph, batch_ids, train_pos, train_labels) -> PassResult:
        ego = self._batch_ego(graph, batch_ids)
        logits, cache = self.model.forward(ego)
        loss = self._ce_backward(logits, cache, train_pos,
                                 self.head.cols_of(train_labels))
        fisher_src = empirical_fisher(self.model.params)
        loss += quadratic_penalty(self.model.params, self.state.importance,
                                  self.state.anchor, self.lam)
        self.opt.step(self.model.params)
        return PassResult(loss=loss, touched=ego.num_nodes,
                          extras={"fisher": fisher_src})

    def _after_batch(self, graph, train_ids, train_labels, first) -> None:
        self.state.update(first.extras["fisher"],
                          self.model.params.clone_values())


class MasStrategy(GcnStrategyBase):
    """Importance from the sensitivity of the squared logit norm to each
    parameter, accumulated with every batch; penalty as in the Fisher case."""

    name = "mas"

    def __init__(self, *args, penalty_lambda: float = 1.0, **kwargs):
        super().__init__(*args, **kwargs)
        self.lam = float(penalty_lambda)
        self.state = ImportanceState.fresh(self.model.params)

    def _logit_norm_grads(self, logits: np.ndarray, cache) -> dict[str, np.ndarray]:
        """Gradient source d||logits||^2 / d theta over active columns."""
        d = np.zeros_like(logits)
        cols = self.head.active_cols
        d[:, cols] = 2.0 * logits[:, cols]
        saved = {n: self.model.params.grads[n].copy()
                 for n in self.model.params.names}
        self.model.params.zero_grads()
        self.model.backward(cache, d)
        rows = max(logits.shape[0], 1)
        src = {n: np.abs(self.model.params.grads[n]) / rows
               for n in self.model.params.names}
        for n, g in saved.items():
            self.model.params.grads[n][...] = g
        return src

    def _pass(self, graph, batch_ids, train_pos, train_labels) -> PassResult:
        ego = self._batch_ego(graph, batch_ids)
        logits, cache = self.model.forward(ego)
        loss = self._ce_backward(logits, cache, train_pos,
                                 self.head.cols_of(train_labels))
        omega_src = self._logit_norm_grads(logits, cache)
        loss += quadratic_penalty(self.model.params, self.state.importance,
                                  self.state.anchor, self.lam)
        self.opt.step(self.model.params)
        return PassResult(loss=loss, touched=ego.num_nodes,
                          extras={"omega": omega_src})

    def _after_batch(self, graph, train_ids, train_labels, first) -> None:
        self.state.update(first.extras["omega"],
                          self.model.params.clone_values())


class LwfStrategy(GcnStrategyBase):
    """Distillation against a periodically refreshed frozen teacher on the
    current batch, restricted to the teacher's active classes."""

    name = "lwf"

    def __init__(self, *args, distill_lambda: float = 1.0,
                 temperature: float = 2.0, update_every: int = 1, **kwargs):
        super().__init__(*args, **kwargs)
        if update_every < 1:
            raise ConfigurationError("update_every must be >= 1")
        self.lam = float(distill_lambda)
        self.temperature = float(temperature)
        self.update_every = update_every
        self.teacher = TeacherSnapshot()
        self._teacher_model = GcnModel(
            self.model.in_dim, self.model.hidden, self.model.out_dim,
            layers=self.model.layers, bias=self.model.bias)

    def _pass(self, graph, batch_ids, train_pos, train_labels) -> PassResult:
        ego = self._batch_ego(graph, batch_ids)
        logits, cache = self.model.forward(ego)
        label_cols = self.head.cols_of(train_labels)
        loss, dsub = softmax_cross_entropy(
            logits[train_pos], label_cols, self.head.active_cols)
        dlog = np.zeros_like(logits)
        dlog[train_pos] = dsub
        if self.teacher.values is not None and self.teacher.label_to_col:
            t_logits, _ = self._teacher_model.forward(ego)
            t_cols = np.array(sorted(self.teacher.label_to_col.values()),
                              dtype=np.int64)
            term, ddist = distillation_term(
                logits, t_logits, t_cols, self.lam, self.temperature)
            loss += term
            dlog += ddist
        self.model.params.zero_grads()
        self.model.backward(cache, dlog)
        self.opt.step(self.model.params)
        return PassResult(loss=loss, touched=ego.num_nodes)

    def _after_batch(self, graph, train_ids, train_labels, first) -> None:
        self.teacher.batches_since += 1
        if self.teacher.batches_since % self.update_every == 0:
            self.teacher.values = self.model.params.clone_values()
            self.teacher.label_to_col = self.head.snapshot()
            self._teacher_model.params.load_values(self.teacher.values)


class TwpStrategy(GcnStrategyBase):
    """Weight preservation with two running importances: the label-loss
    gradient magnitude, and the sensitivity of the first layer's propagated
    message norm (the topological term for a GCN). A plasticity term
    beta * ||dCE/dtheta||_1 is added to the training loss; its gradient is a
    Hessian-vector product evaluated by central differencing the CE gradient
    along the sign vector."""

    name = "twp"

    def __init__(self, *args, lambda_loss: float = 0.0,
                 lambda_topology: float = 0.0, beta: float = 0.0, **kwargs):
        super().__init__(*args, **kwargs)
        self.lam_l = float(lambda_loss)
        self.lam_t = float(lambda_topology)
        self.beta = float(beta)
        self.state_loss = ImportanceState.fresh(self.model.params)
        self.state_topo = ImportanceState.fresh(self.model.params)

    def _topology_grads(self, cache, seed_rows: np.ndarray
                        ) -> dict[str, np.ndarray]:
        msgs = self.model.first_layer_messages(cache)
        d = np.zeros_like(msgs)
        d[seed_rows] = 2.0 * msgs[seed_rows]
        saved = {n: self.model.params.grads[n].copy()
                 for n in self.model.params.names}
        self.model.params.zero_grads()
        self.model.backward_first_layer_messages(cache, d)
        src = {n: np.abs(self.model.params.grads[n])
               for n in self.model.params.names}
        for n, g in saved.items():
            self.model.params.grads[n][...] = g
        return src

    def _ce_flat_grad_at(self, flat_values: np.ndarray, ego, train_pos,
                         label_cols) -> np.ndarray:
        params = self.model.params
        orig_vals = params.flat_values()
        orig_grads = {n: params.grads[n].copy() for n in params.names}
        params.set_flat_values(flat_values)
        logits, cache = self.model.forward(ego)
        _, dsub = softmax_cross_entropy(logits[train_pos], label_cols,
                                        self.head.active_cols)
        dlog = np.zeros_like(logits)
        dlog[train_pos] = dsub
        params.zero_grads()
        self.model.backward(cache, dlog)
        out = params.flat_grads()
        params.set_flat_values(orig_vals)
        for n, g in orig_grads.items():
            params.grads[n][...] = g
        return out

    def _pass(self, graph, batch_ids, train_pos, train_labels) -> PassResult:
        ego = self._batch_ego(graph, batch_ids)
        logits, cache = self.model.forward(ego)
        label_cols = self.head.cols_of(train_labels)
        loss = self._ce_backward(logits, cache, train_pos, label_cols)
        ce_flat = self.model.params.flat_grads()
        loss_src = {n: np.abs(self.model.params.grads[n])
                    for n in self.model.params.names}
        topo_src = self._topology_grads(cache, ego.seed_rows)

        loss += quadratic_penalty(self.model.params, self.state_loss.importance,
                                  self.state_loss.anchor, self.lam_l)
        loss += quadratic_penalty(self.model.params, self.state_topo.importance,
                                  self.state_topo.anchor, self.lam_t)
        if self.beta != 0.0:
            sign = np.sign(ce_flat)
            loss += self.beta * float(np.abs(ce_flat).sum())
            eps = 1e-6
            theta = self.model.params.flat_values()
            g_plus = self._ce_flat_grad_at(theta + eps * sign, ego,
                                           train_pos, label_cols)
            g_minus = self._ce_flat_grad_at(theta - eps * sign, ego,
                                            train_pos, label_cols)
            hvp = (g_plus - g_minus) / (2.0 * eps)
            flat = self.model.params.flat_grads() + self.beta * hvp
            self.model.params.set_flat_grads(flat)
        self.opt.step(self.model.params)
        return PassResult(loss=loss, touched=ego.num_nodes,
                          extras={"loss_src": loss_src, "topo_src": topo_src})

    def _after_batch(self, graph, train_ids, train_labels, first) -> None:
        anchor = self.model.params.clone_values()
        self.state_loss.update(first.extras["loss_src"], anchor)
        self.state_topo.update(first.extras["topo_src"],
                               {n: v.copy() for n, v in anchor.items()})


class PdgnnStrategy:
    """Decoupled propagation and prediction: seeds are embedded by k-step
    parameter-free propagation over their sampled ego graph at arrival, the
    embeddings feed an MLP, and a reservoir of frozen embeddings provides
    replay. Replay never touches the graph again."""

    name = "pdgnn"

    def __init__(self, mlp: MlpModel, head: OutputHead, opt: AdamState,
                 rng: np.random.Generator, batch_size: int, fanouts,
                 passes: int = 1, sgc_depth: int = 2,
                 buffer_capacity: int = 1000, memory_proportion: int = 1):
        if sgc_depth < 0:
            raise ConfigurationError("propagation depth must be >= 0")
        self.mlp = mlp
        self.head = head
        self.opt = opt
        self.rng = rng
        self.mem_rng = np.random.default_rng(rng.integers(2**63 - 1, size=8))
        self.batch_size = batch_size
        self.fanouts = tuple(fanouts)
        self.passes = passes
        self.depth = sgc_depth
        self.m = memory_proportion
        self.memory = ReservoirBuffer(buffer_capacity, self.mem_rng)

    @property
    def model(self):
        return self.mlp

    def process_batch(self, graph: GrowingGraph, batch_ids) -> StepStats:
        batch_ids = np.asarray(batch_ids, dtype=np.int64)
        splits = graph.splits_of(batch_ids)
        labels = graph.labels_of(batch_ids)
        train_pos = np.flatnonzero((splits == TRAIN) & (labels != UNLABELED))
        if len(train_pos) == 0:
            return StepStats(skipped=True,
                             notice="batch has no labeled train nodes")
        train_labels = labels[train_pos]
        self.head.observe(self.mlp, train_labels)

        stats = StepStats()
        stored_emb: np.ndarray | None = None
        for p in range(self.passes):
            ego = sample_ego(graph, batch_ids, self.fanouts, self.rng)
            emb = sgc_embed(ego, self.depth)
            if stored_emb is None:
                stored_emb = emb[train_pos].copy()
            x = emb[train_pos]
            logits, cache = self.mlp.forward(x)
            loss, dsub = softmax_cross_entropy(
                logits, self.head.cols_of(train_labels), self.head.active_cols)
            self.mlp.params.zero_grads()
            self.mlp.backward(cache, dsub)
            touched = ego.num_nodes
            if len(self.memory) and self.m > 0:
                picked = self.memory.sample(self.m * self.batch_size,
                                            self.mem_rng)
                x_mem = np.stack([e for e, _ in picked])
                y_mem = np.array([y for _, y in picked], dtype=np.int64)
                m_logits, m_cache = self.mlp.forward(x_mem)
                m_loss, m_dsub = softmax_cross_entropy(
                    m_logits, self.head.cols_of(y_mem), self.head.active_cols)
                self.mlp.backward(m_cache, m_dsub)
                loss += m_loss
                touched += len(picked)
            self.opt.step(self.mlp.params)
            stats.losses.append(loss)
            stats.touched.append(touched)
        for i, y in enumerate(train_labels.tolist()):
            self.memory.insert((stored_emb[i].copy(), y))
        return stats

    def touched_bound(self) -> int | None:
        if any(f is None for f in self.fanouts):
            return None
        return ego_node_bound(self.batch_size, self.fanouts) \
            + self.m * self.batch_size

    def predict(self, graph: GrowingGraph, ids, fanouts=None,
                rng: np.random.Generator | None = None) -> np.ndarray:
        from .linalg import spmm

        ids = np.asarray(ids, dtype=np.int64)
        if fanouts is None:
            norm, feats = graph.snapshot_operator()
            h = feats
            for _ in range(self.depth):
                h = spmm(norm, h)
            emb = h[ids]
        else:
            ego = sample_ego(graph, np.unique(ids), fanouts, rng)
            row_of = {int(g): i for i, g in enumerate(ego.seed_ids)}
            all_emb = sgc_embed(ego, self.depth)
            emb = all_emb[[row_of[int(v)] for v in ids]]
        logits, _ = self.mlp.forward(emb)
        return self.head.predict(logits)


class SsmStrategy(GcnStrategyBase):
    """Replay from sparsified subgraphs frozen at insertion: each stored seed
    keeps its own features, budget-capped two-hop neighborhood, and local
    normalized adjacency. Works as the replay source for either the additive
    (er) or the projection (agem) combination rule."""

    name = "ssm"

    def __init__(self, *args, mode: str = "er", buffer_capacity: int = 1000,
                 memory_proportion: int = 1, budgets: tuple[int, int] = (10, 10),
                 **kwargs):
        super().__init__(*args, **kwargs)
        if mode not in ("er", "agem"):
            raise ConfigurationError(f"unknown combination mode {mode!r}")
        self.mode = mode
        self.m = memory_proportion
        self.memory = SparsifiedSubgraphMemory(buffer_capacity, budgets,
                                               self.mem_rng)

    def _replay_forward_backward(self, entries: list[SubgraphEntry]
                                 ) -> tuple[float, int]:
        """Accumulate gradients of the mean CE over the stored seeds."""
        adj = block_diag_csr([e.norm_adj for e in entries])
        x = np.concatenate([e.features for e in entries])
        seed_rows = np.cumsum([0] + [e.node_count for e in entries[:-1]]
                              ).astype(np.int64)
        labels = np.array([e.label for e in entries], dtype=np.int64)
        logits, cache = self.model.forward_parts(adj, x, seed_rows)
        r_loss, dsub = softmax_cross_entropy(
            logits, self.head.cols_of(labels), self.head.active_cols)
        self.model.backward(cache, dsub, seed_rows=seed_rows)
        return r_loss, sum(e.node_count for e in entries)

    def _pass(self, graph, batch_ids, train_pos, train_labels) -> PassResult:
        ego = self._batch_ego(graph, batch_ids)
        logits, cache = self.model.forward(ego)
        loss = self._ce_backward(logits, cache, train_pos,
                                 self.head.cols_of(train_labels))
        touched = ego.num_nodes
        dot = None
        entries = self.memory.sample(self.m * self.batch_size, self.mem_rng) \
            if (len(self.memory) and self.m > 0) else []
        if entries:
            if self.mode == "er":
                r_loss, r_touched = self._replay_forward_backward(entries)
                loss += r_loss
                touched += r_touched
            else:
                g = self.model.params.flat_grads()
                self.model.params.zero_grads()
                _, r_touched = self._replay_forward_backward(entries)
                touched += r_touched
                g_ref = self.model.params.flat_grads()
                g_proj = agem_project(g, g_ref)
                dot = float(g_proj @ g_ref)
                assert dot >= -1e-9, \
                    "projected gradient opposes the memory gradient"
                self.model.params.set_flat_grads(g_proj)
        self.opt.step(self.model.params)
        return PassResult(loss=loss, touched=touched, agem_dot=dot)

    def _after_batch(self, graph, train_ids, train_labels, first) -> None:
        for v in train_ids.tolist():
            self.memory.insert_node(graph, v, self.mem_rng)

    def touched_bound(self) -> int | None:
        base = super().touched_bound()
        if base is None:
            return None
        return base + self.m * self.batch_size * self.memory.max_entry_nodes
