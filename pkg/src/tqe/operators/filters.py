"""Selection with bitmaps or selection vectors."""
from __future__ import annotations

from typing import Callable, Mapping

from tqe import kernels as K
from tqe.errors import CompileError
from tqe.kernels import Tensor

Columns = dict[str, Tensor]


def _mask(columns: Mapping[str, Tensor], predicate: Callable, nrows: int | None) -> Tensor:
    if nrows is None:
        nrows = next((t.rows for t in columns.values()), 0)
    ltype = getattr(predicate, "logical_type", None)
    if ltype is not None and ltype != "bool":
        raise CompileError(f"filter predicate must be boolean, got {ltype}")
    mask = predicate(columns, nrows)
    if mask.dtype != "bool":
        raise CompileError(f"filter predicate must be boolean, got {mask.dtype}")
    return mask


def filter_sv(columns: Mapping[str, Tensor], predicate: Callable, nrows: int | None = None) -> Columns:
    """Evaluate the mask, turn it into row indexes, gather every column."""
    idx = K.nonzero(_mask(columns, predicate, nrows))
    return {name: K.index_select(t, idx) for name, t in columns.items()}


def filter_bm(columns: Mapping[str, Tensor], predicate: Callable, nrows: int | None = None) -> Columns:
    """Apply the boolean mask to every column directly."""
    mask = _mask(columns, predicate, nrows)
    return {name: K.masked_select_rows(t, mask) for name, t in columns.items()}
