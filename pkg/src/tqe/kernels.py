"""Dense 2-D tensors and the kernel vocabulary relational operators are built from.

Every relational operator in :mod:`tqe.operators` is a composition of the
functions defined here.  A :class:`Tensor` is always two-dimensional
(``n x m`` with ``m >= 1``); a column vector is ``n x 1``.  Kernels never
mutate their inputs.

Element-level work is delegated to numpy; this module is the only place in the
engine that touches raw arrays.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from tqe.errors import KernelError

__all__ = [
    "Tensor", "DTYPES", "tensor", "from_numpy",
    "set_num_threads", "get_num_threads", "set_debug",
    "sort_with_indices", "lex_sort_rows", "bincount", "cumsum", "bucketize",
    "index_select", "masked_select_rows", "nonzero", "elementwise",
    "scatter_reduce", "scatter", "unique_consecutive_rows",
    "concat_cols", "concat_rows", "arange", "full", "cast", "bitcast",
    "narrow", "where", "reduce",
]

DTYPES = {
    "int32": np.dtype(np.int32),
    "int64": np.dtype(np.int64),
    "float32": np.dtype(np.float32),
    "float64": np.dtype(np.float64),
    "bool": np.dtype(np.bool_),
    "uint8": np.dtype(np.uint8),
}
_ALLOWED = frozenset(DTYPES.values())

_PARALLEL_MIN_ROWS = 1 << 16

_num_threads = max(1, int(os.environ.get("TQE_THREADS", "1") or 1))
_debug = os.environ.get("TQE_DEBUG", "") not in ("", "0")
_pool: ThreadPoolExecutor | None = None


def set_num_threads(n: int) -> None:
    """Set the number of worker threads used inside kernels.

    Results never depend on this value; only wall-clock time does.
    """
    global _num_threads, _pool
    n = int(n)
    if n < 1:
        raise KernelError("thread count must be >= 1")
    if n != _num_threads and _pool is not None:
        _pool.shutdown(wait=True)
        _pool = None
    _num_threads = n


def get_num_threads() -> int:
    return _num_threads


def set_debug(flag: bool) -> None:
    """Enable validation of preconditions that are skipped by default."""
    global _debug
    _debug = bool(flag)


class Tensor:
    """Immutable dense 2-D array of one dtype."""

    __slots__ = ("_a",)

    def __init__(self, data, dtype=None):
        a = np.array(data, dtype=DTYPES.get(dtype, dtype), copy=True)
        self._a = _check(a)

    @classmethod
    def _wrap(cls, a: np.ndarray) -> "Tensor":
        # kernel results: owned arrays, no copy
        t = object.__new__(cls)
        t._a = _check(a)
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return self._a.shape

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def dtype(self) -> str:
        return self._a.dtype.name

    def numpy(self) -> np.ndarray:
        """Read-only view of the underlying buffer."""
        return self._a

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self._a.astype(dtype)
        return self._a

    def __len__(self) -> int:
        return self._a.shape[0]

    def to_list(self) -> list:
        """Python values; flat for a column vector, nested otherwise."""
        if self.cols == 1:
            return self._a[:, 0].tolist()
        return self._a.tolist()

    def item(self):
        if self._a.size != 1:
            raise KernelError(f"item() on tensor of shape {self.shape}")
        return self._a[0, 0].item()

    def equals(self, other: "Tensor") -> bool:
        """Same shape, dtype and bytes."""
        return (
            self.shape == other.shape
            and self.dtype == other.dtype
            and self._a.tobytes() == other._a.tobytes()
        )

    def __repr__(self) -> str:
        return f"Tensor({self.shape[0]}x{self.shape[1]} {self.dtype}, {self.to_list()!r})"


def _check(a: np.ndarray) -> np.ndarray:
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise KernelError(f"tensors are 2-D, got {a.ndim} dimensions")
    if a.shape[1] < 1:
        raise KernelError("tensor needs at least one column")
    if a.dtype not in _ALLOWED:
        raise KernelError(f"unsupported dtype {a.dtype}")
    if a.flags.writeable:
        a.flags.writeable = False
    return a


def tensor(data, dtype=None) -> Tensor:
    return Tensor(data, dtype)


def from_numpy(a: np.ndarray) -> Tensor:
    """Wrap an existing array without copying (a read-only view)."""
    v = np.asarray(a).view()
    return Tensor._wrap(v)


def _col(t: Tensor, what: str) -> np.ndarray:
    if t.cols != 1:
        raise KernelError(f"{what} requires 1-column tensor")
    return t._a[:, 0]


def _get_pool() -> ThreadPoolExecutor:
    global _pool
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_num_threads)
    return _pool


def _chunked(fn, n: int, *arrays):
    """Apply ``fn`` to row chunks of ``arrays`` and stitch the results.

    Row chunks are independent, so output is identical for every thread count.
    """
    if _num_threads == 1 or n < _PARALLEL_MIN_ROWS:
        return fn(*arrays)
    bounds = np.linspace(0, n, _num_threads + 1).astype(int)
    parts = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        parts.append(tuple(x[lo:hi] if isinstance(x, np.ndarray) and x.ndim and x.shape[0] == n else x
                           for x in arrays))
    results = list(_get_pool().map(lambda p: fn(*p), parts))
    return np.concatenate(results, axis=0)


# -- sorting ------------------------------------------------------------------

def sort_with_indices(t: Tensor, descending: bool = False) -> tuple[Tensor, Tensor]:
    """Stable sort of a column vector; returns ``(sorted, perm)``."""
    x = _col(t, "sort")
    if descending:
        # stable descending: reverse, stable ascending, reverse back
        n = x.shape[0]
        perm = (n - 1 - np.argsort(x[::-1], kind="stable"))[::-1]
    else:
        perm = np.argsort(x, kind="stable")
    perm = perm.astype(np.int64)
    return Tensor._wrap(x[perm]), Tensor._wrap(perm)


def lex_sort_rows(t: Tensor) -> tuple[Tensor, Tensor]:
    """Stable lexicographic row sort by columns ``0..m-1``."""
    a = t._a
    if a.shape[0] == 0:
        return Tensor._wrap(a.copy()), Tensor._wrap(np.zeros(0, np.int64))
    perm = np.lexsort(a.T[::-1]).astype(np.int64)
    return Tensor._wrap(a[perm]), Tensor._wrap(perm)


# -- histograms and prefix sums --------------------------------------------------

def bincount(t: Tensor, length: int) -> Tensor:
    x = _col(t, "bincount")
    if x.dtype.kind not in "iub":
        raise KernelError("bincount requires integer input")
    if x.size and (x.min() < 0 or x.max() >= length):
        raise KernelError("bincount domain violation")
    return Tensor._wrap(np.bincount(x.astype(np.int64), minlength=length).astype(np.int64))


def cumsum(t: Tensor) -> Tensor:
    """Inclusive prefix sum along rows (integer inputs accumulate in int64)."""
    x = _col(t, "cumsum")
    acc = np.int64 if x.dtype.kind in "iub" else x.dtype
    return Tensor._wrap(np.cumsum(x, dtype=acc))


def bucketize(values: Tensor, boundaries: Tensor) -> Tensor:
    """Smallest ``j`` with ``values[i] < boundaries[j]`` (``K`` when none)."""
    v = _col(values, "bucketize")
    b = _col(boundaries, "bucketize")
    if _debug and b.size > 1 and np.any(b[1:] < b[:-1]):
        raise KernelError("bucketize boundaries must be non-decreasing")
    return Tensor._wrap(np.searchsorted(b, v, side="right").astype(np.int64))


# -- indexing -----------------------------------------------------------------

def index_select(t: Tensor, idx: Tensor) -> Tensor:
    """Row gather: ``out[i, :] = t[idx[i], :]``."""
    i = _col(idx, "index_select")
    if i.dtype.kind not in "iu":
        raise KernelError("gather index must be integer")
    n = t.rows
    if i.size and (i.min() < 0 or i.max() >= n):
        raise KernelError("gather index out of range")
    return Tensor._wrap(_chunked(lambda ix: t._a[ix], i.shape[0], i))


def masked_select_rows(t: Tensor, mask: Tensor) -> Tensor:
    m = _col(mask, "masked_select_rows")
    if m.dtype != np.bool_:
        raise KernelError("mask must be boolean")
    if m.shape[0] != t.rows:
        raise KernelError(f"mask length {m.shape[0]} does not match {t.rows} rows")
    return Tensor._wrap(t._a[m])


def nonzero(mask: Tensor) -> Tensor:
    m = _col(mask, "nonzero")
    return Tensor._wrap(np.flatnonzero(m).astype(np.int64))


def narrow(t: Tensor, start: int, length: int, dim: int = 1) -> Tensor:
    """Contiguous slice of ``length`` columns (``dim=1``) or rows (``dim=0``)."""
    a = t._a
    size = a.shape[dim]
    if start < 0 or length < 0 or start + length > size:
        raise KernelError(f"narrow [{start}, {start + length}) outside dimension of size {size}")
    if dim == 1:
        if length == 0:
            raise KernelError("narrow to zero columns")
        return Tensor._wrap(a[:, start:start + length].copy())
    return Tensor._wrap(a[start:start + length].copy())


# -- pointwise ----------------------------------------------------------------

_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "fmod": np.fmod,
    "remainder": np.remainder,
    "eq": np.equal,
    "ne": np.not_equal,
    "lt": np.less,
    "le": np.less_equal,
    "gt": np.greater,
    "ge": np.greater_equal,
    "logical_and": np.logical_and,
    "logical_or": np.logical_or,
    "logical_xor": np.logical_xor,
    "bitwise_and": np.bitwise_and,
    "bitwise_or": np.bitwise_or,
    "bitwise_xor": np.bitwise_xor,
    "shift_left": np.left_shift,
    "shift_right": np.right_shift,
}
_UNARY = {
    "logical_not": np.logical_not,
    "neg": np.negative,
}
_COMPARISONS = frozenset({"eq", "ne", "lt", "le", "gt", "ge"})
_LOGICAL = frozenset({"logical_and", "logical_or", "logical_xor", "logical_not"})
_BITWISE = frozenset({"bitwise_and", "bitwise_or", "bitwise_xor", "shift_left", "shift_right"})


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Pointwise ``op`` over ``a`` and ``b`` (a same-shaped tensor or a scalar).

    Integer ``div`` and ``remainder`` use floor semantics; integer division by
    zero raises, float division follows IEEE.  Comparisons return bool.
    """
    x = a._a
    if op in _UNARY:
        if b is not None:
            raise KernelError(f"{op} is unary")
        if op == "logical_not" and x.dtype != np.bool_:
            raise KernelError("logical_not requires bool input")
        return Tensor._wrap(_chunked(_UNARY[op], x.shape[0], x))
    if b is None:
        raise KernelError(f"{op} is binary")

    if isinstance(b, Tensor):
        y = b._a
        if y.shape != x.shape:
            raise KernelError(f"shape mismatch {x.shape} vs {y.shape}")
        if y.dtype != x.dtype:
            raise KernelError(f"dtype mismatch {x.dtype} vs {y.dtype}; cast explicitly")
    else:
        y = _scalar_for(op, x.dtype, b)

    if op in _LOGICAL and x.dtype != np.bool_:
        raise KernelError(f"{op} requires bool input")
    if op in _BITWISE:
        if x.dtype.kind not in "iub":
            raise KernelError(f"{op} requires integer input")
        if op.startswith("shift") and np.any((np.asarray(y) < 0) | (np.asarray(y) > 63)):
            raise KernelError("shift amount outside [0, 63]")

    if op == "div":
        if x.dtype.kind in "iub":
            if np.any(np.asarray(y) == 0):
                raise KernelError("integer division by zero")
            fn = np.floor_divide
        else:
            fn = np.true_divide
    elif op == "remainder" or op == "fmod":
        if x.dtype.kind in "iub" and np.any(np.asarray(y) == 0):
            raise KernelError("integer division by zero")
        fn = _BINARY[op]
    else:
        try:
            fn = _BINARY[op]
        except KeyError:
            raise KernelError(f"unknown elementwise op {op!r}") from None

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if isinstance(y, np.ndarray) and y.ndim:
            out = _chunked(fn, x.shape[0], x, y)
        else:
            out = _chunked(lambda u: fn(u, y), x.shape[0], x)
    if op not in _COMPARISONS and out.dtype != x.dtype and x.dtype != np.bool_:
        out = out.astype(x.dtype)
    return Tensor._wrap(out)


def _scalar_for(op, dtype, b):
    if isinstance(b, (bool, np.bool_)):
        return np.bool_(b) if dtype == np.bool_ or op in _COMPARISONS else dtype.type(b)
    if op in _COMPARISONS:
        return b
    if dtype.kind in "iu":
        if isinstance(b, (float, np.floating)) and float(b) != int(b):
            raise KernelError(f"non-integral scalar {b!r} for {dtype} tensor; cast explicitly")
        try:
            return dtype.type(int(b))
        except OverflowError:
            raise KernelError(f"scalar {b!r} out of range for {dtype}") from None
    return dtype.type(b)


def where(mask: Tensor, a, b) -> Tensor:
    """Row select: ``a`` where ``mask`` holds, else ``b`` (tensors or scalars)."""
    m = _col(mask, "where")
    if m.dtype != np.bool_:
        raise KernelError("where mask must be boolean")
    xa = a._a if isinstance(a, Tensor) else a
    xb = b._a if isinstance(b, Tensor) else b
    for x in (xa, xb):
        if isinstance(x, np.ndarray) and x.shape[0] != m.shape[0]:
            raise KernelError("where operand row count does not match mask")
    if isinstance(xa, np.ndarray) and isinstance(xb, np.ndarray):
        if xa.shape != xb.shape:
            raise KernelError(f"shape mismatch {xa.shape} vs {xb.shape}")
        if xa.dtype != xb.dtype:
            raise KernelError(f"dtype mismatch {xa.dtype} vs {xb.dtype}; cast explicitly")
    out = np.where(m[:, None], xa, xb)
    ref = xa if isinstance(xa, np.ndarray) else xb
    if isinstance(ref, np.ndarray) and out.dtype != ref.dtype:
        out = out.astype(ref.dtype)
    return Tensor._wrap(out)


# -- reductions and scatters ------------------------------------------------------

def _identity(reduce: str, dtype: np.dtype):
    if reduce in ("sum", "count"):
        return 0
    if dtype == np.bool_:
        return reduce == "min"
    info = np.iinfo(dtype) if dtype.kind in "iu" else np.finfo(dtype)
    return info.max if reduce == "min" else info.min


def scatter_reduce(idx: Tensor, values: Tensor, num_buckets: int, reduce: str) -> Tensor:
    """Per-bucket reduction of ``values`` keyed by ``idx``.

    Empty buckets hold the identity: 0 for ``sum``/``count``, the dtype's max
    (``min``) or min (``max``) otherwise.  Sums over integers accumulate in
    int64; the summation order is input order.
    """
    i = _col(idx, "scatter_reduce")
    v = _col(values, "scatter_reduce")
    if i.shape[0] != v.shape[0]:
        raise KernelError("scatter_reduce index and values differ in length")
    if i.size and (i.min() < 0 or i.max() >= num_buckets):
        raise KernelError("scatter index out of range")
    if reduce == "count":
        return Tensor._wrap(np.bincount(i, minlength=num_buckets).astype(np.int64))
    if reduce == "sum":
        dt = np.int64 if v.dtype.kind in "iub" else v.dtype
        out = np.zeros(num_buckets, dt)
        np.add.at(out, i, v.astype(dt, copy=False))
        return Tensor._wrap(out)
    if reduce in ("min", "max"):
        out = np.full(num_buckets, _identity(reduce, v.dtype), v.dtype)
        (np.minimum if reduce == "min" else np.maximum).at(out, i, v)
        return Tensor._wrap(out)
    raise KernelError(f"unknown reduction {reduce!r}")


def scatter(target: Tensor, idx: Tensor, values) -> Tensor:
    """Copy of ``target`` with rows ``idx[i]`` replaced by ``values[i]``.

    Duplicate indices resolve deterministically: the last write wins.
    """
    i = _col(idx, "scatter")
    out = target._a.copy()
    if i.size == 0:
        return Tensor._wrap(out)
    if i.min() < 0 or i.max() >= out.shape[0]:
        raise KernelError("scatter index out of range")
    if isinstance(values, Tensor):
        if values.rows != i.shape[0]:
            raise KernelError("scatter values and index differ in length")
        if values.dtype != target.dtype:
            raise KernelError("scatter dtype mismatch")
        # last occurrence of every target row
        rev = i[::-1]
        uniq, first = np.unique(rev, return_index=True)
        src = i.shape[0] - 1 - first
        out[uniq] = values._a[src]
    else:
        out[i] = values
    return Tensor._wrap(out)


def reduce(t: Tensor, op: str, dim: int | None = None) -> Tensor:
    """``sum/min/max/any/all`` over every element (1x1 result) or per row (``dim=1``)."""
    fns = {"sum": np.sum, "min": np.min, "max": np.max, "any": np.any, "all": np.all}
    if op not in fns:
        raise KernelError(f"unknown reduction {op!r}")
    a = t._a
    if dim is None:
        if a.size == 0 and op in ("min", "max"):
            raise KernelError(f"{op} of empty tensor")
        return Tensor._wrap(np.asarray(fns[op](a)).reshape(1, 1))
    if dim != 1:
        raise KernelError("row reductions use dim=1")
    return Tensor._wrap(fns[op](a, axis=1))


def unique_consecutive_rows(t: Tensor) -> tuple[Tensor, Tensor]:
    """Collapse runs of equal rows; ``inverse[i]`` is row i's run number."""
    a = t._a
    n = a.shape[0]
    if n == 0:
        return Tensor._wrap(a.copy()), Tensor._wrap(np.zeros(0, np.int64))
    starts = np.empty(n, np.bool_)
    starts[0] = True
    np.any(a[1:] != a[:-1], axis=1, out=starts[1:])
    inverse = np.cumsum(starts, dtype=np.int64) - 1
    return Tensor._wrap(a[starts]), Tensor._wrap(inverse)


# -- construction and reshaping -----------------------------------------------------

def concat_cols(ts: Sequence[Tensor]) -> Tensor:
    if not ts:
        raise KernelError("concat_cols of nothing")
    n = ts[0].rows
    if any(t.rows != n for t in ts):
        raise KernelError("concat_cols row-count mismatch")
    dt = ts[0]._a.dtype
    if any(t._a.dtype != dt for t in ts):
        raise KernelError("concat_cols dtype mismatch; cast explicitly")
    return Tensor._wrap(np.concatenate([t._a for t in ts], axis=1))


def concat_rows(ts: Sequence[Tensor]) -> Tensor:
    if not ts:
        raise KernelError("concat_rows of nothing")
    m = ts[0].cols
    dt = ts[0]._a.dtype
    if any(t.cols != m for t in ts):
        raise KernelError("concat_rows column-count mismatch")
    if any(t._a.dtype != dt for t in ts):
        raise KernelError("concat_rows dtype mismatch; cast explicitly")
    return Tensor._wrap(np.concatenate([t._a for t in ts], axis=0))


def arange(start: int, stop: int | None = None) -> Tensor:
    if stop is None:
        start, stop = 0, start
    return Tensor._wrap(np.arange(int(start), int(stop), dtype=np.int64))


def full(n: int, value, dtype: str, cols: int = 1) -> Tensor:
    return Tensor._wrap(np.full((int(n), int(cols)), value, dtype=DTYPES[dtype]))


def cast(t: Tensor, dtype: str) -> Tensor:
    """Convert dtype; float to int truncates toward zero."""
    target = DTYPES[dtype]
    if t._a.dtype == target:
        return t
    with np.errstate(invalid="ignore"):
        return Tensor._wrap(t._a.astype(target))


def bitcast(t: Tensor, dtype: str) -> Tensor:
    """Reinterpret the element bytes as another dtype of the same width."""
    target = DTYPES[dtype]
    if target.itemsize != t._a.dtype.itemsize:
        raise KernelError(f"bitcast {t.dtype} -> {dtype} changes element width")
    return Tensor._wrap(t._a.view(target).copy())
