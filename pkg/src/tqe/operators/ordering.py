"""ORDER BY, projection and LIMIT."""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

from tqe import kernels as K
from tqe.kernels import Tensor
from tqe.operators.keys import dense_rank


def _sortable(t: Tensor) -> Tensor:
    if t.dtype == "uint8":
        return dense_rank(K.cast(t, "int64"))[0]
    if t.dtype == "bool":
        return K.cast(t, "int64")
    return t


def sort_permutation(keys: Sequence[tuple[Tensor, bool]], nrows: int) -> Tensor:
    """Row order for ``(key values, descending)`` pairs, most significant first.

    Stable single-key sorts are applied from the least significant key up, so
    ties on every key keep their input order.
    """
    perm = K.arange(nrows)
    for values, desc in reversed(list(keys)):
        reordered = K.index_select(_sortable(values), perm)
        _, step = K.sort_with_indices(reordered, descending=desc)
        perm = K.index_select(perm, step)
    return perm


def sort_operator(columns: Mapping[str, Tensor], keys: Sequence[tuple[Callable, bool]],
                  nrows: int | None = None) -> dict[str, Tensor]:
    if nrows is None:
        nrows = next((t.rows for t in columns.values()), 0)
    perm = sort_permutation([(k(columns, nrows), desc) for k, desc in keys], nrows)
    return {n: K.index_select(t, perm) for n, t in columns.items()}


def project(columns: Mapping[str, Tensor], exprs: Sequence[Callable], names: Sequence[str],
            nrows: int | None = None) -> dict[str, Tensor]:
    if nrows is None:
        nrows = next((t.rows for t in columns.values()), 0)
    return {name: e(columns, nrows) for name, e in zip(names, exprs)}


def limit(columns: Mapping[str, Tensor], count: int) -> dict[str, Tensor]:
    out = {}
    for n, t in columns.items():
        out[n] = K.narrow(t, 0, min(max(count, 0), t.rows), dim=0)
    return out
