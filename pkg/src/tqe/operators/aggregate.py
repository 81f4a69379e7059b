"""Sort-based group-by aggregation.

Group keys are encoded and concatenated into one matrix, rows are sorted
lexicographically, every input column is permuted into that order, and runs
of equal keys become groups.  Aggregates are scatter reductions keyed by each
row's group number, so output rows come out ordered by group key.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from tqe import kernels as K
from tqe.errors import CompileError
from tqe.kernels import Tensor
from tqe.operators.keys import dense_rank, encode_key, encode_keys

AGG_FUNCTIONS = ("sum", "avg", "min", "max", "count")


@dataclass(frozen=True)
class AggSpec:
    fn: str
    expr: Callable | None  # None means count(*)
    name: str
    distinct: bool = False

    def __post_init__(self):
        if self.fn not in AGG_FUNCTIONS:
            raise CompileError(f"unknown aggregate {self.fn!r}")
        if self.expr is None and (self.fn != "count" or self.distinct):
            raise CompileError(f"{self.fn} needs an argument")


def _reduce(fn: str, groups: Tensor, values: Tensor, n_groups: int) -> Tensor:
    if fn == "count":
        return K.scatter_reduce(groups, K.full(groups.rows, 0, "int64"), n_groups, "count")
    if values.dtype == "uint8":
        if fn in ("sum", "avg"):
            raise CompileError(f"{fn} over a string column")
        # strings: reduce over dense ranks, then map back to a source row
        rank, representative = dense_rank(values)
        best = K.scatter_reduce(groups, rank, n_groups, fn)
        return K.index_select(values, K.index_select(representative, best))
    if values.dtype == "bool":
        raise CompileError(f"{fn} over a boolean column")
    if fn == "avg":
        total = K.cast(K.scatter_reduce(groups, values, n_groups, "sum"), "float64")
        count = K.cast(K.scatter_reduce(groups, values, n_groups, "count"), "float64")
        return K.elementwise("div", total, count)
    return K.scatter_reduce(groups, values, n_groups, fn)


def _distinct(groups: Tensor, values: Tensor) -> tuple[Tensor, Tensor]:
    """Group number and value of every distinct (group, value) pair."""
    pairs = K.concat_cols([groups, encode_key(values)])
    ordered, perm = K.lex_sort_rows(pairs)
    uniques, inverse = K.unique_consecutive_rows(ordered)
    first = K.scatter_reduce(inverse, K.arange(pairs.rows), uniques.rows, "min")
    return K.narrow(uniques, 0, 1), K.index_select(values, K.index_select(perm, first))


def groupby_aggregate(columns: Mapping[str, Tensor], group_by: Sequence[Callable],
                      group_names: Sequence[str], aggs: Sequence[AggSpec],
                      nrows: int | None = None) -> dict[str, Tensor]:
    """One output row per distinct group key, ordered by key.

    With no group-by expressions all rows form a single group; an empty input
    then produces no rows.
    """
    if nrows is None:
        nrows = next((t.rows for t in columns.values()), 0)
    n = nrows
    if len(group_names) != len(group_by):
        raise CompileError("group_by and group_names differ in length")

    keys = [g(columns, n) for g in group_by]
    if keys:
        ordered, perm = K.lex_sort_rows(encode_keys(keys))
        data = {name: K.index_select(t, perm) for name, t in columns.items()}
        _, groups = K.unique_consecutive_rows(ordered)
        n_groups = (K.reduce(groups, "max").item() + 1) if n else 0
        first = K.index_select(perm, K.scatter_reduce(groups, K.arange(n), n_groups, "min"))
    else:
        data = dict(columns)
        groups = K.full(n, 0, "int64")
        n_groups = 1 if n else 0
        first = K.full(n_groups, 0, "int64")

    out: dict[str, Tensor] = {}
    for name, key in zip(group_names, keys):
        out[name] = K.index_select(key, first)
    for agg in aggs:
        if agg.name in out:
            raise CompileError(f"duplicate output column {agg.name!r}")
        if agg.expr is None:
            out[agg.name] = _reduce("count", groups, groups, n_groups)
            continue
        values = agg.expr(data, n)
        if agg.distinct:
            g, v = _distinct(groups, values)
            if agg.fn == "count":
                out[agg.name] = K.bincount(g, n_groups)
            else:
                out[agg.name] = _reduce(agg.fn, g, v, n_groups)
        else:
            out[agg.name] = _reduce(agg.fn, groups, values, n_groups)
    return out
