"""Message-passing backbone and heads: a configurable-depth GCN with
hand-derived backward passes, the parameter-free multi-hop propagation
encoder, a plain two-layer MLP, and class-incremental output-head growth.

The output layer is allocated at its maximum width up front; classes become
active one at a time as their first training instance arrives, with the new
column zeroed so logits of previously active classes are untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import ContractViolation, SampledEgoGraph
from .linalg import AdamState, CsrMatrix, DimensionError, ParameterSet, spmm


class CapacityError(RuntimeError):
    """Output head has no free column left."""


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


@dataclass
class ForwardCache:
    """Intermediate activations of one forward pass.

    ``mixed[l]`` is the layer-l input after neighborhood mixing (what the
    weight gradient needs), ``pre[l]`` the pre-activation, ``post[l]`` the
    post-activation. Invalidated by any parameter update.
    """

    ego: SampledEgoGraph | None
    norm_adj: CsrMatrix | None
    x: np.ndarray
    mixed: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    params_version: int


class GcnModel:
    """L-layer graph convolution (ReLU between layers, linear output).

    Layer l computes ``H_l = act(Â H_{l-1} W_l [+ b_l])`` on a sampled ego
    graph's normalized adjacency. Gradients are accumulated into the
    parameter set's grad slots; the caller zeroes them between steps.
    """

    def __init__(self, in_dim: int, hidden: int, out_dim: int, layers: int = 2,
                 bias: bool = False, rng: np.random.Generator | None = None):
        if not 1 <= layers <= 3:
            raise ValueError("layer count must be 1..3")
        if hidden <= 0 or out_dim <= 0:
            raise ValueError("widths must be positive")
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden = hidden
        self.out_dim = out_dim
        self.layers = layers
        self.bias = bias
        self.params = ParameterSet()
        dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
        for l in range(1, layers + 1):
            self.params.add(f"w{l}", glorot(rng, dims[l - 1], dims[l]))
            if bias:
                self.params.add(f"b{l}", np.zeros((1, dims[l])))

    def output_param_names(self) -> list[str]:
        names = [f"w{self.layers}"]
        if self.bias:
            names.append(f"b{self.layers}")
        return names

    def zero_output_column(self, col: int) -> None:
        self.params.version += 1
        self.params.values[f"w{self.layers}"][:, col] = 0.0
        if self.bias:
            self.params.values[f"b{self.layers}"][0, col] = 0.0

    def forward(self, ego: SampledEgoGraph) -> tuple[np.ndarray, ForwardCache]:
        return self.forward_parts(ego.norm_adj, ego.features, ego.seed_rows, ego)

    def forward_parts(self, norm_adj: CsrMatrix, x: np.ndarray,
                      seed_rows: np.ndarray,
                      ego: SampledEgoGraph | None = None
                      ) -> tuple[np.ndarray, ForwardCache]:
        if x.shape[1] != self.in_dim:
            raise DimensionError(f"feature dim {x.shape[1]} != {self.in_dim}")
        h = x
        mixed, pre, post = [], [], []
        for l in range(1, self.layers + 1):
            s = spmm(norm_adj, h)
            p = s @ self.params.values[f"w{l}"]
            if self.bias:
                p = p + self.params.values[f"b{l}"]
            h = np.maximum(p, 0.0) if l < self.layers else p
            mixed.append(s)
            pre.append(p)
            post.append(h)
        cache = ForwardCache(ego=ego, norm_adj=norm_adj, x=x, mixed=mixed,
                             pre=pre, post=post,
                             params_version=self.params.version)
        return h[seed_rows], cache

    def backward(self, cache: ForwardCache, d_logits: np.ndarray,
                 seed_rows: np.ndarray | None = None) -> None:
        """Accumulate parameter gradients for seed-row logit gradients."""
        if cache.params_version != self.params.version:
            raise ContractViolation("forward cache is stale")
        norm_adj = cache.norm_adj
        if norm_adj is None:
            raise ContractViolation("cache carries no adjacency")
        if seed_rows is None:
            if cache.ego is None:
                raise ContractViolation("seed rows required without an ego")
            seed_rows = cache.ego.seed_rows
        n = cache.x.shape[0]
        dp = np.zeros((n, self.out_dim))
        np.add.at(dp, seed_rows, d_logits)  # duplicate seeds accumulate
        for l in range(self.layers, 0, -1):
            self.params.accumulate(f"w{l}", cache.mixed[l - 1].T @ dp)
            if self.bias:
                self.params.accumulate(f"b{l}", dp.sum(axis=0, keepdims=True))
            if l > 1:
                ds = dp @ self.params.values[f"w{l}"].T
                dh = spmm(norm_adj, ds)  # Â symmetric, so Â^T = Â
                dp = dh * (cache.pre[l - 2] > 0.0)

    def first_layer_messages(self, cache: ForwardCache) -> np.ndarray:
        """Layer-1 propagated messages Â X W_1 from a cached forward."""
        return cache.pre[0]

    def backward_first_layer_messages(self, cache: ForwardCache,
                                      d_msgs: np.ndarray) -> None:
        """Accumulate d(objective)/dW_1 given a gradient on Â X W_1 rows."""
        if cache.params_version != self.params.version:
            raise ContractViolation("forward cache is stale")
        self.params.accumulate("w1", cache.mixed[0].T @ d_msgs)
        if self.bias:
            self.params.accumulate("b1", d_msgs.sum(axis=0, keepdims=True))


class MlpModel:
    """Two-layer ReLU MLP on row features; independent of the GCN path."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int,
                 bias: bool = False, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden = hidden
        self.out_dim = out_dim
        self.layers = 2
        self.bias = bias
        self.params = ParameterSet()
        self.params.add("w1", glorot(rng, in_dim, hidden))
        if bias:
            self.params.add("b1", np.zeros((1, hidden)))
        self.params.add("w2", glorot(rng, hidden, out_dim))
        if bias:
            self.params.add("b2", np.zeros((1, out_dim)))

    def output_param_names(self) -> list[str]:
        return ["w2", "b2"] if self.bias else ["w2"]

    def zero_output_column(self, col: int) -> None:
        self.params.version += 1
        self.params.values["w2"][:, col] = 0.0
        if self.bias:
            self.params.values["b2"][0, col] = 0.0

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        if x.shape[1] != self.in_dim:
            raise DimensionError(f"feature dim {x.shape[1]} != {self.in_dim}")
        p1 = x @ self.params.values["w1"]
        if self.bias:
            p1 = p1 + self.params.values["b1"]
        h1 = np.maximum(p1, 0.0)
        p2 = h1 @ self.params.values["w2"]
        if self.bias:
            p2 = p2 + self.params.values["b2"]
        cache = ForwardCache(ego=None, norm_adj=None, x=x, mixed=[x, h1],
                             pre=[p1, p2], post=[h1, p2],
                             params_version=self.params.version)
        return p2, cache

    def backward(self, cache: ForwardCache, d_logits: np.ndarray) -> None:
        if cache.params_version != self.params.version:
            raise ContractViolation("forward cache is stale")
        self.params.accumulate("w2", cache.mixed[1].T @ d_logits)
        if self.bias:
            self.params.accumulate("b2", d_logits.sum(axis=0, keepdims=True))
        dh1 = d_logits @ self.params.values["w2"].T
        dp1 = dh1 * (cache.pre[0] > 0.0)
        self.params.accumulate("w1", cache.mixed[0].T @ dp1)
        if self.bias:
            self.params.accumulate("b1", dp1.sum(axis=0, keepdims=True))


def sgc_embed(ego: SampledEgoGraph, k: int) -> np.ndarray:
    """Parameter-free k-step propagation Â^k X, restricted to seed rows."""
    if k < 0:
        raise ValueError("propagation depth must be >= 0")
    h = ego.features
    for _ in range(k):
        h = spmm(ego.norm_adj, h)
    return h[ego.seed_rows]


class OutputHead:
    """Injective mapping from observed class labels to output columns."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.label_to_col: dict[int, int] = {}

    @property
    def active_labels(self) -> list[int]:
        return sorted(self.label_to_col)

    @property
    def active_cols(self) -> np.ndarray:
        return np.array([self.label_to_col[l] for l in self.active_labels],
                        dtype=np.int64)

    def is_active(self, label: int) -> bool:
        return label in self.label_to_col

    def col_of(self, label: int) -> int:
        return self.label_to_col[label]

    def cols_of(self, labels) -> np.ndarray:
        return np.array([self.label_to_col[int(l)] for l in labels], dtype=np.int64)

    def expand(self, model, new_label: int) -> int:
        if new_label in self.label_to_col:
            raise ContractViolation(f"label {new_label} already active")
        col = len(self.label_to_col)
        if col >= self.capacity:
            raise CapacityError(
                f"no free output column for label {new_label} "
                f"(capacity {self.capacity})")
        self.label_to_col[new_label] = col
        model.zero_output_column(col)
        return col

    def observe(self, model, labels) -> None:
        """Activate any not-yet-seen labels, in the order given."""
        for l in labels:
            l = int(l)
            if l not in self.label_to_col:
                self.expand(model, l)

    def predict(self, logits: np.ndarray) -> np.ndarray:
        """Argmax over active classes; ties resolve to the lowest label."""
        labels = self.active_labels
        if not labels:
            raise ContractViolation("no active classes to predict")
        cols = [self.label_to_col[l] for l in labels]
        sub = logits[:, cols]
        return np.array(labels, dtype=np.int64)[np.argmax(sub, axis=1)]

    def snapshot(self) -> dict[int, int]:
        return dict(self.label_to_col)


def save_checkpoint(params: ParameterSet, directory: str) -> None:
    """Write tensors as one little-endian float64 blob plus a text manifest
    of ``name rows cols offset`` lines; round-trips bit-exactly."""
    import os

    os.makedirs(directory, exist_ok=True)
    offset = 0
    lines = []
    with open(os.path.join(directory, "weights.bin"), "wb") as fh:
        for n in params.names:
            v = params.values[n]
            if v.ndim != 2:
                raise ContractViolation("checkpoint tensors must be 2-D")
            raw = v.astype("<f8").tobytes(order="C")
            fh.write(raw)
            lines.append(f"{n} {v.shape[0]} {v.shape[1]} {offset}")
            offset += len(raw)
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(params: ParameterSet, directory: str) -> None:
    """Load a checkpoint into an existing, shape-matched parameter set."""
    import os

    with open(os.path.join(directory, "manifest.txt")) as fh:
        entries = [line.split() for line in fh if line.strip()]
    blob = open(os.path.join(directory, "weights.bin"), "rb").read()
    seen = set()
    for name, rows, cols, offset in entries:
        rows, cols, offset = int(rows), int(cols), int(offset)
        if name not in params.values:
            raise ContractViolation(f"unknown tensor {name!r} in checkpoint")
        if params.values[name].shape != (rows, cols):
            raise ContractViolation(f"shape mismatch for {name!r}")
        count = rows * cols
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=offset).reshape(rows, cols)
        params.values[name][...] = arr
        seen.add(name)
    if seen != set(params.names):
        raise ContractViolation("checkpoint does not cover all tensors")
    params.version += 1
