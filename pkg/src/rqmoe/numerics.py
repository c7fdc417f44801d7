"""Small dense linear algebra kernels with a fixed reduction order.

Every reduction below accumulates left to right with plain float64 adds, so
results do not depend on BLAS, thread count or numpy's pairwise summation.
The single-vector and batched paths share these kernels and therefore agree
bit for bit.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError


class Matrix:
    """Immutable row-major float64 matrix holding only finite values."""

    __slots__ = ("_a",)

    def __init__(self, values, cols: int | None = None):
        a = np.array(values, dtype=np.float64, copy=True)
        if a.ndim == 1 and cols is not None:
            if cols <= 0 or a.size % cols:
                raise ShapeError(f"cannot reshape {a.size} values into rows of {cols}")
            a = a.reshape(-1, cols)
        if a.ndim == 1 and a.size == 0:
            raise ShapeError("empty value list needs an explicit column count")
        if a.ndim != 2:
            raise ShapeError(f"expected a 2-D array, got shape {a.shape}")
        if a.shape[1] == 0:
            raise ShapeError("matrix must have at least one column")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix values must be finite")
        a.flags.writeable = False
        self._a = a

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.zeros((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "Matrix":
        return cls(np.eye(n))

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._a.shape

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the underlying (rows, cols) array."""
        return self._a

    @property
    def values(self) -> list[float]:
        return self._a.ravel().tolist()

    def row(self, i: int) -> np.ndarray:
        return self._a[i]

    def take_rows(self, idx: Sequence[int]) -> "Matrix":
        return Matrix(self._a[np.asarray(idx, dtype=np.intp)].reshape(-1, self.cols))

    def scale(self, c: float) -> "Matrix":
        return Matrix(self._a * c)

    def tolist(self) -> list[list[float]]:
        return self._a.tolist()

    def __eq__(self, other):
        if not isinstance(other, Matrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._a, other._a))

    def __hash__(self):
        return hash((self.shape, self._a.tobytes()))

    def __repr__(self):
        return f"Matrix({self.rows}x{self.cols})"


def as_array(x) -> np.ndarray:
    if isinstance(x, Matrix):
        return x.array
    return np.asarray(x, dtype=np.float64)


def matmul_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, d) @ (d, c) summing the inner dimension strictly left to right."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for j in range(a.shape[1]):
        out += a[:, j : j + 1] * b[j : j + 1, :]
    return out


def matmul(a: Matrix, b: Matrix) -> Matrix:
    return Matrix(matmul_array(a.array, b.array))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D array with max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    total = e[:, 0].copy()
    for j in range(1, e.shape[1]):
        total += e[:, j]
    return e / total[:, None]


def softmax_row(logits: Iterable[float]) -> list[float]:
    x = np.asarray(list(logits), dtype=np.float64)
    if x.size == 0:
        raise ValueError("softmax of an empty sequence")
    if not np.all(np.isfinite(x)):
        raise ValueError("logits must be finite")
    return softmax_rows(x[None, :])[0].tolist()


def topk_rows(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries per row, descending, lowest index first on ties."""
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k]


def topk_indices(scores: Sequence[float], k: int) -> list[int]:
    s = np.asarray(list(scores), dtype=np.float64)
    if k < 1 or k > s.size:
        raise ValueError(f"k={k} must lie in [1, {s.size}]")
    return topk_rows(s[None, :], k)[0].tolist()


def col_l2_norms(x) -> list[float]:
    a = as_array(x)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError("column norms need a non-empty 2-D input")
    return col_l2_norms_array(a).tolist()


def col_l2_norms_array(a: np.ndarray) -> np.ndarray:
    acc = np.zeros(a.shape[1])
    for i in range(a.shape[0]):
        acc += a[i] * a[i]
    return np.sqrt(acc)


def sum_ltr(values: Iterable[float]) -> float:
    total = 0.0
    for v in values:
        total += float(v)
    return total
