"""Key encodings shared by joins, grouping and sorting.

Every key column is mapped to int64 columns whose lexicographic order and
equality match the source values:  integers and dates are widened, floats are
bit-cast with the sign-magnitude fix-up (so equal bit patterns group
together), and strings contribute one column per byte.
"""
from __future__ import annotations

from typing import Sequence

from tqe import kernels as K
from tqe.errors import CompileError
from tqe.kernels import Tensor

_LOW63 = 0x7FFF_FFFF_FFFF_FFFF


def encode_key(t: Tensor) -> Tensor:
    if t.dtype in ("float64", "float32"):
        bits = K.bitcast(K.cast(t, "float64"), "int64")
        neg = K.elementwise("lt", bits, 0)
        return K.where(neg, K.elementwise("bitwise_xor", bits, _LOW63), bits)
    return K.cast(t, "int64")


def encode_keys(ts: Sequence[Tensor]) -> Tensor:
    """Concatenate the encodings of several key tensors into one n x k matrix."""
    return K.concat_cols([encode_key(t) for t in ts])


def _pad(t: Tensor, width: int) -> Tensor:
    if t.cols >= width:
        return t
    return K.concat_cols([t, K.full(t.rows, 0, "uint8", width - t.cols)])


def align_pair(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Bring one left and one right key column to a comparable representation."""
    sa, sb = a.dtype == "uint8", b.dtype == "uint8"
    if sa != sb:
        raise CompileError(f"cannot compare key columns of dtype {a.dtype} and {b.dtype}")
    if sa:
        w = max(a.cols, b.cols)
        return _pad(a, w), _pad(b, w)
    fa, fb = a.dtype.startswith("float"), b.dtype.startswith("float")
    if fa or fb:
        return K.cast(a, "float64"), K.cast(b, "float64")
    return a, b


def encode_key_pair(left: Sequence[Tensor], right: Sequence[Tensor]) -> tuple[Tensor, Tensor]:
    if len(left) != len(right) or not left:
        raise CompileError("join needs the same positive number of left and right keys")
    pairs = [align_pair(a, b) for a, b in zip(left, right)]
    return encode_keys([p[0] for p in pairs]), encode_keys([p[1] for p in pairs])


def densify(left: Tensor, right: Tensor) -> tuple[Tensor, Tensor, int]:
    """Map key rows of both sides through one shared dictionary onto [0, K).

    Dense ids preserve the lexicographic order of the key rows.
    """
    n_left = left.rows
    both = K.concat_rows([left, right])
    ordered, perm = K.lex_sort_rows(both)
    uniques, inverse = K.unique_consecutive_rows(ordered)
    dense = K.scatter(K.full(both.rows, 0, "int64"), perm, inverse)
    return (K.narrow(dense, 0, n_left, dim=0),
            K.narrow(dense, n_left, right.rows, dim=0),
            uniques.rows)


def dense_rank(t: Tensor) -> tuple[Tensor, Tensor]:
    """Order-preserving dense rank of each row, plus one source row per rank."""
    ordered, perm = K.lex_sort_rows(t)
    uniques, inverse = K.unique_consecutive_rows(ordered)
    rank = K.scatter(K.full(t.rows, 0, "int64"), perm, inverse)
    representative = K.scatter(K.full(uniques.rows, 0, "int64"), inverse, perm)
    return rank, representative
