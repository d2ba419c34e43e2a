"""Minimal deterministic numerical kernel: CSR sparse matrices, the masked
softmax cross-entropy loss, Adam, and a central-difference gradient checker.

Everything runs in 64-bit floats. All kernels are deterministic: the same
inputs produce bit-identical outputs, which the experiment runner relies on
for reproducible metrics files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class InvalidLabelError(ValueError):
    """A label refers to a class outside the active set."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


@dataclass
class CsrMatrix:
    """Sparse matrix in CSR form with sorted column indices per row.

    Invariants (checked at construction): ``row_offsets`` is monotone
    non-decreasing with ``row_offsets[rows]`` equal to the nonzero count,
    column indices are strictly increasing within each row, and all stored
    values are finite.
    """

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    nz_values: np.ndarray
    _scipy: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int64)
        self.nz_values = np.asarray(self.nz_values, dtype=np.float64)
        if self.row_offsets.shape != (self.rows + 1,):
            raise DimensionError("row_offsets must have length rows+1")
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != len(self.col_indices):
            raise DimensionError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(self.row_offsets) < 0):
            raise DimensionError("row_offsets must be non-decreasing")
        if len(self.col_indices) != len(self.nz_values):
            raise DimensionError("col_indices and nz_values must align")
        if len(self.col_indices) and (
            self.col_indices.min() < 0 or self.col_indices.max() >= self.cols
        ):
            raise DimensionError("column index out of range")
        nnz = len(self.col_indices)
        if nnz > 1:
            is_start = np.zeros(nnz, dtype=bool)
            starts = self.row_offsets[:-1]
            is_start[starts[starts < nnz]] = True
            bad = (np.diff(self.col_indices) <= 0) & ~is_start[1:]
            if bad.any():
                raise DimensionError("columns within a row must strictly increase")
        if not np.all(np.isfinite(self.nz_values)):
            raise NumericError("sparse values must be finite")

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "CsrMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        m = sp.csr_matrix(dense)
        m.sort_indices()
        return cls(dense.shape[0], dense.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_edges(cls, rows: int, cols: int, edge_rows, edge_cols, values) -> "CsrMatrix":
        """Build from coordinate lists; duplicate entries are summed."""
        m = sp.coo_matrix(
            (np.asarray(values, dtype=np.float64), (edge_rows, edge_cols)),
            shape=(rows, cols),
        ).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(rows, cols, m.indptr, m.indices, m.data)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        for r in range(self.rows):
            lo, hi = self.row_offsets[r], self.row_offsets[r + 1]
            out[r, self.col_indices[lo:hi]] = self.nz_values[lo:hi]
        return out

    def _as_scipy(self) -> sp.csr_matrix:
        if self._scipy is None:
            self._scipy = sp.csr_matrix(
                (self.nz_values, self.col_indices, self.row_offsets),
                shape=(self.rows, self.cols),
            )
        return self._scipy

    def row_cols(self, r: int) -> np.ndarray:
        lo, hi = self.row_offsets[r], self.row_offsets[r + 1]
        return self.col_indices[lo:hi]

    def row_vals(self, r: int) -> np.ndarray:
        lo, hi = self.row_offsets[r], self.row_offsets[r + 1]
        return self.nz_values[lo:hi]

    def scale_rows_cols(self, left: np.ndarray, right: np.ndarray) -> "CsrMatrix":
        """Return diag(left) @ A @ diag(right) with the same sparsity pattern."""
        row_ids = np.repeat(np.arange(self.rows), np.diff(self.row_offsets))
        vals = left[row_ids] * self.nz_values * right[self.col_indices]
        return CsrMatrix(self.rows, self.cols, self.row_offsets.copy(), self.col_indices.copy(), vals)


def spmm(a: CsrMatrix, b: np.ndarray) -> np.ndarray:
    """Sparse-dense product ``a @ b``.

    Row sums accumulate in ascending column-index order, so results are
    deterministic across calls.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2:
        raise DimensionError("dense operand must be 2-D")
    if a.cols != b.shape[0]:
        raise DimensionError(f"shape mismatch: {a.rows}x{a.cols} @ {b.shape}")
    return np.asarray(a._as_scipy().dot(b))


class ParameterSet:
    """Ordered named float64 tensors with a shape-matched gradient slot each."""

    def __init__(self):
        self._names: list[str] = []
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.version = 0  # bumped on value mutation; lets caches detect staleness

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.values:
            raise ValueError(f"duplicate parameter name {name!r}")
        v = np.array(value, dtype=np.float64)
        self._names.append(name)
        self.values[name] = v
        self.grads[name] = np.zeros_like(v)

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        if grad.shape != self.grads[name].shape:
            raise DimensionError(f"gradient shape mismatch for {name!r}")
        self.grads[name] += grad

    def size(self) -> int:
        return sum(v.size for v in self.values.values())

    def flat_values(self) -> np.ndarray:
        return np.concatenate([self.values[n].ravel() for n in self._names])

    def flat_grads(self) -> np.ndarray:
        return np.concatenate([self.grads[n].ravel() for n in self._names])

    def set_flat_values(self, flat: np.ndarray) -> None:
        self.version += 1
        i = 0
        for n in self._names:
            v = self.values[n]
            v[...] = flat[i : i + v.size].reshape(v.shape)
            i += v.size

    def set_flat_grads(self, flat: np.ndarray) -> None:
        i = 0
        for n in self._names:
            g = self.grads[n]
            g[...] = flat[i : i + g.size].reshape(g.shape)
            i += g.size

    def clone_values(self) -> dict[str, np.ndarray]:
        return {n: self.values[n].copy() for n in self._names}

    def load_values(self, snapshot: dict[str, np.ndarray]) -> None:
        self.version += 1
        for n in self._names:
            self.values[n][...] = snapshot[n]

    def zeros_like_values(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(self.values[n]) for n in self._names}


class AdamState:
    """Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8.

    Gradients are read but never modified: the caller zeroes them.
    """

    def __init__(self, params: ParameterSet, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = params.zeros_like_values()
        self.v = params.zeros_like_values()

    def step(self, params: ParameterSet) -> None:
        self.step_count += 1
        params.version += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for n in params.names:
            g = params.grads[n]
            m = self.m[n]
            v = self.v[n]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / b1t
            vhat = v / b2t
            params.values[n] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def softmax_cross_entropy(
    logits: np.ndarray,
    label_cols: np.ndarray,
    active_cols: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood with the softmax restricted to active columns.

    ``label_cols`` hold the target column per row; columns outside
    ``active_cols`` are excluded from the softmax and receive zero gradient,
    which is what lets the output head grow without touching history.
    Returns ``(loss, dLoss/dLogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    label_cols = np.asarray(label_cols, dtype=np.int64)
    active_cols = np.asarray(sorted(active_cols), dtype=np.int64)
    n, c = logits.shape
    if label_cols.shape != (n,):
        raise DimensionError("one label per logit row required")
    if len(active_cols) == 0:
        raise InvalidLabelError("active class set is empty")
    if active_cols.min() < 0 or active_cols.max() >= c:
        raise InvalidLabelError("active column outside logit width")
    active_lookup = np.full(c, -1, dtype=np.int64)
    active_lookup[active_cols] = np.arange(len(active_cols))
    label_pos = active_lookup[label_cols]
    if np.any(label_pos < 0):
        bad = label_cols[label_pos < 0][0]
        raise InvalidLabelError(f"label column {bad} is not active")

    sub = logits[:, active_cols]
    mx = sub.max(axis=1, keepdims=True)
    ex = np.exp(sub - mx)
    denom = ex.sum(axis=1, keepdims=True)
    logp = (sub - mx) - np.log(denom)
    loss = float(-logp[np.arange(n), label_pos].mean())

    grad_sub = ex / denom
    grad_sub[np.arange(n), label_pos] -= 1.0
    grad_sub /= n
    grad = np.zeros_like(logits)
    grad[:, active_cols] = grad_sub
    if not np.isfinite(loss):
        raise NumericError("loss is not finite")
    return loss, grad


def finite_diff_check(f, params: ParameterSet, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradients stored in ``params``
    and a central finite difference of ``f``.

    ``f`` takes the parameter set and returns a scalar; it must not depend on
    hidden state. Per coordinate the error is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    analytic = {n: params.grads[n].copy() for n in params.names}
    worst = 0.0
    for n in params.names:
        v = params.values[n]
        flat = v.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(params))
            flat[i] = orig - h
            fm = float(f(params))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("objective returned a non-finite value")
            numeric = (fp - fm) / (2.0 * h)
            err = abs(analytic[n].reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    for n in params.names:
        params.grads[n][...] = analytic[n]
    return worst
