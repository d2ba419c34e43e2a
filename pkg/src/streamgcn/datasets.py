"""On-disk ingestion format and the synthetic block-model generator.

A dataset directory holds:

    meta.json       num_nodes, feature_dim, num_classes, has_timestamps,
                    format_version
    features.f32    little-endian float32, row-major num_nodes x feature_dim
    labels.u32      little-endian uint32 per node; 0xFFFFFFFF = unlabeled
    edges.u32       little-endian (src, dst) pairs, each undirected edge
                    once with src < dst
    timestamps.u32  optional, one per node
    order.u32       optional explicit stream permutation

Features are stored in 32-bit to halve the footprint and widened to 64-bit at
load; the training path never sees float32.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .graph import UNLABELED

FORMAT_VERSION = 1
LABEL_SENTINEL = 0xFFFFFFFF


class FormatError(ValueError):
    """A dataset file is malformed or inconsistent with meta.json."""

    def __init__(self, path: str, message: str, offset: int | None = None):
        loc = f"{path}" if offset is None else f"{path} @ byte {offset}"
        super().__init__(f"{loc}: {message}")
        self.path = path
        self.offset = offset


@dataclass
class StaticDataset:
    """A fully materialized graph as loaded from an ingestion directory."""

    features: np.ndarray        # num_nodes x feature_dim, float64
    labels: np.ndarray          # int64, UNLABELED for the sentinel
    edges: np.ndarray           # E x 2, src < dst
    timestamps: np.ndarray | None
    order: np.ndarray | None
    num_classes: int

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def neighbor_lists(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for s, d in self.edges:
            adj[s].append(int(d))
            adj[d].append(int(s))
        return adj


def _read_exact(path: str, dtype, count: int) -> np.ndarray:
    size = os.path.getsize(path)
    want = count * np.dtype(dtype).itemsize
    if size != want:
        raise FormatError(path, f"expected {want} bytes, found {size}",
                          offset=min(size, want))
    return np.fromfile(path, dtype=dtype)


def load_dataset(directory: str) -> StaticDataset:
    """Load and validate an ingestion directory."""
    meta_path = os.path.join(directory, "meta.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise FormatError(meta_path, "missing meta.json")
    except json.JSONDecodeError as e:
        raise FormatError(meta_path, f"invalid JSON: {e}")
    for key in ("num_nodes", "feature_dim", "num_classes",
                "has_timestamps", "format_version"):
        if key not in meta:
            raise FormatError(meta_path, f"missing key {key!r}")
    if meta["format_version"] != FORMAT_VERSION:
        raise FormatError(meta_path,
                          f"unsupported format_version {meta['format_version']}")
    n = int(meta["num_nodes"])
    f = int(meta["feature_dim"])
    c = int(meta["num_classes"])

    feat_path = os.path.join(directory, "features.f32")
    features = _read_exact(feat_path, "<f4", n * f).astype(np.float64).reshape(n, f)

    lab_path = os.path.join(directory, "labels.u32")
    raw_labels = _read_exact(lab_path, "<u4", n)
    labels = raw_labels.astype(np.int64)
    labels[raw_labels == LABEL_SENTINEL] = UNLABELED
    bad = (labels != UNLABELED) & (labels >= c)
    if bad.any():
        idx = int(np.argmax(bad))
        raise FormatError(lab_path, f"label {labels[idx]} >= num_classes {c}",
                          offset=idx * 4)

    edge_path = os.path.join(directory, "edges.u32")
    size = os.path.getsize(edge_path)
    if size % 8 != 0:
        raise FormatError(edge_path, "truncated edge record", offset=size - size % 8)
    raw_edges = np.fromfile(edge_path, dtype="<u4").astype(np.int64).reshape(-1, 2)
    if len(raw_edges):
        if raw_edges.max() >= n:
            idx = int(np.argmax(raw_edges.max(axis=1) >= n))
            raise FormatError(edge_path, f"edge endpoint >= num_nodes {n}",
                              offset=idx * 8)
        if (raw_edges[:, 0] >= raw_edges[:, 1]).any():
            idx = int(np.argmax(raw_edges[:, 0] >= raw_edges[:, 1]))
            raise FormatError(edge_path, "edge must satisfy src < dst",
                              offset=idx * 8)
        keys = raw_edges[:, 0] * n + raw_edges[:, 1]
        if len(np.unique(keys)) != len(keys):
            raise FormatError(edge_path, "duplicate undirected edge")

    timestamps = None
    ts_path = os.path.join(directory, "timestamps.u32")
    if meta["has_timestamps"]:
        timestamps = _read_exact(ts_path, "<u4", n).astype(np.int64)
    elif os.path.exists(ts_path):
        raise FormatError(ts_path, "present but meta says has_timestamps=false")

    order = None
    order_path = os.path.join(directory, "order.u32")
    if os.path.exists(order_path):
        order = _read_exact(order_path, "<u4", n).astype(np.int64)
        if not np.array_equal(np.sort(order), np.arange(n)):
            raise FormatError(order_path, "order is not a permutation of nodes")

    return StaticDataset(features=features, labels=labels, edges=raw_edges,
                         timestamps=timestamps, order=order, num_classes=c)


def save_dataset(directory: str, features: np.ndarray, labels: np.ndarray,
                 edges: np.ndarray, num_classes: int,
                 timestamps: np.ndarray | None = None,
                 order: np.ndarray | None = None) -> None:
    """Write an ingestion directory; deterministic byte-for-byte."""
    os.makedirs(directory, exist_ok=True)
    n, f = features.shape
    meta = {
        "num_nodes": int(n),
        "feature_dim": int(f),
        "num_classes": int(num_classes),
        "has_timestamps": timestamps is not None,
        "format_version": FORMAT_VERSION,
    }
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    features.astype("<f4").tofile(os.path.join(directory, "features.f32"))
    raw_labels = np.where(labels == UNLABELED, LABEL_SENTINEL, labels)
    raw_labels.astype("<u4").tofile(os.path.join(directory, "labels.u32"))
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges):
        lo = edges.min(axis=1)
        hi = edges.max(axis=1)
        edges = np.stack([lo, hi], axis=1)
        edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    edges.astype("<u4").tofile(os.path.join(directory, "edges.u32"))
    if timestamps is not None:
        timestamps.astype("<u4").tofile(os.path.join(directory, "timestamps.u32"))
    if order is not None:
        order.astype("<u4").tofile(os.path.join(directory, "order.u32"))


@dataclass
class SbmSpec:
    """Stochastic block model with class-separated Gaussian features.

    Class means are orthogonal axes scaled by ``separation`` (requires
    classes <= feature_dim); features add isotropic Gaussian noise. Setting
    p_out > p_in yields a heterophilous graph.
    """

    classes: int
    per_class: int
    p_in: float
    p_out: float
    feature_dim: int
    separation: float = 4.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("at least two classes required")
        if not (0.0 <= self.p_in <= 1.0 and 0.0 <= self.p_out <= 1.0):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.classes > self.feature_dim:
            raise ValueError("orthogonal class means need feature_dim >= classes")

    @property
    def num_nodes(self) -> int:
        return self.classes * self.per_class


def gen_sbm(spec: SbmSpec, out_dir: str) -> StaticDataset:
    """Generate a block-model dataset and write it in the ingestion format.

    Reproducible: identical spec and seed give identical directory bytes.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.num_nodes
    labels = np.repeat(np.arange(spec.classes), spec.per_class).astype(np.int64)

    means = np.zeros((spec.classes, spec.feature_dim))
    means[np.arange(spec.classes), np.arange(spec.classes)] = spec.separation
    features = means[labels] + rng.normal(0.0, spec.noise, size=(n, spec.feature_dim))

    # blockwise over class pairs to keep peak memory flat in graph size
    chunks: list[np.ndarray] = []
    for ci in range(spec.classes):
        lo_i = ci * spec.per_class
        for cj in range(ci, spec.classes):
            lo_j = cj * spec.per_class
            if ci == cj:
                iu, ju = np.triu_indices(spec.per_class, k=1)
                p = spec.p_in
            else:
                iu, ju = np.meshgrid(np.arange(spec.per_class),
                                     np.arange(spec.per_class), indexing="ij")
                iu, ju = iu.ravel(), ju.ravel()
                p = spec.p_out
            keep = rng.random(len(iu)) < p
            if keep.any():
                chunks.append(np.stack([lo_i + iu[keep], lo_j + ju[keep]], axis=1))
    edges = (np.concatenate(chunks) if chunks
             else np.zeros((0, 2), dtype=np.int64))

    save_dataset(out_dir, features, labels, edges, spec.classes)
    return load_dataset(out_dir)
