"""Equi-joins as tensor programs.

Three inner-join strategies share one contract (the output multiset equals a
nested-loop join):

* ``sort``: histogram join.  Sort both key columns, count rows per key,
  multiply the histograms to get bucket sizes, and locate each output row's
  bucket with a binary search over the prefix sum of bucket sizes.
* ``hash``: build and probe a hash table in rounds; each round scatters at
  most one left row per slot.
* ``pkfk``: binary search of every right key in the sorted, unique left keys.

Semi, anti and left-outer joins are built on a sorted membership probe.
"""
from __future__ import annotations

from typing import Mapping, Sequence

from tqe import kernels as K
from tqe.errors import CompileError, KernelError
from tqe.kernels import Tensor
from tqe.operators.keys import densify, encode_key_pair

Columns = dict[str, Tensor]

STRATEGIES = ("sort", "hash", "pkfk")
JOIN_TYPES = ("inner", "left_outer", "left_semi", "left_anti")

_GOLDEN = 0x9E3779B97F4A7C15 - (1 << 64)  # as signed int64


# -- sort-based ---------------------------------------------------------------

def sort_join_indices(left: Tensor, right: Tensor, domain: int,
                      trace: dict | None = None) -> tuple[Tensor, Tensor]:
    """Histogram join of two key columns with values in ``[0, domain)``.

    Returns ``(left_rows, right_rows)`` ordered by key, then left occurrence,
    then right occurrence.  Intermediate tensors are written to ``trace``
    when one is passed.
    """
    ew = K.elementwise
    left_sorted, left_idx = K.sort_with_indices(left)
    right_sorted, right_idx = K.sort_with_indices(right)

    left_hist = K.bincount(left_sorted, domain)
    right_hist = K.bincount(right_sorted, domain)
    hist_mul = ew("mul", left_hist, right_hist)

    cum_left = K.cumsum(left_hist)
    cum_right = K.cumsum(right_hist)
    cum_mul = K.cumsum(hist_mul)

    out_size = int(cum_mul.numpy()[-1, 0]) if domain else 0
    offset = K.arange(out_size)
    bucket = K.bucketize(offset, cum_mul)

    def at(t):
        return K.index_select(t, bucket)

    # offset inside the bucket
    offset = ew("sub", offset, ew("sub", at(cum_mul), at(hist_mul)))
    right_in_bucket = at(right_hist)
    left_pos = ew("add", ew("sub", at(cum_left), at(left_hist)), ew("div", offset, right_in_bucket))
    right_pos = ew("add", ew("sub", at(cum_right), right_in_bucket), ew("remainder", offset, right_in_bucket))
    left_out = K.index_select(left_idx, left_pos)
    right_out = K.index_select(right_idx, right_pos)

    if trace is not None:
        trace.update(
            left_sorted=left_sorted, left_idx=left_idx,
            right_sorted=right_sorted, right_idx=right_idx,
            left_hist=left_hist, right_hist=right_hist, hist_mul=hist_mul,
            cum_left_hist=cum_left, cum_right_hist=cum_right, cum_hist_mul=cum_mul,
            out_size=out_size, out_bucket=bucket, bucket_offset=offset,
            left_out_idx=left_out, right_out_idx=right_out,
        )
    return left_out, right_out


def _single_key_domain(left: Tensor, right: Tensor) -> tuple[Tensor, Tensor, int]:
    """One int64 key column per side plus its domain size.

    Small non-negative integer keys are used as they are; anything else goes
    through the shared dictionary so the histograms stay O(distinct keys).
    """
    n = left.rows + right.rows
    if left.cols == 1 and n:
        both = K.concat_rows([left, right])
        lo = K.reduce(both, "min").item()
        hi = K.reduce(both, "max").item()
        if lo >= 0 and hi + 1 <= n:
            return left, right, hi + 1
    return densify(left, right)


def _sort_indices(lk: Tensor, rk: Tensor, trace=None):
    left, right, domain = _single_key_domain(lk, rk)
    return sort_join_indices(left, right, domain, trace)


# -- hash-based ---------------------------------------------------------------

def _rotl(h: Tensor, r: int) -> Tensor:
    ew = K.elementwise
    high = ew("bitwise_and", ew("shift_right", h, 64 - r), (1 << r) - 1)
    return ew("bitwise_or", ew("shift_left", h, r), high)


def hash_rows(keys: Tensor, bits: int) -> Tensor:
    """Multiplicative hash of encoded key rows onto ``[0, 2**bits)``."""
    ew = K.elementwise
    if bits == 0:
        return K.full(keys.rows, 0, "int64")
    h = K.narrow(keys, 0, 1)
    for j in range(1, keys.cols):
        h = ew("bitwise_xor", _rotl(h, 5), K.narrow(keys, j, 1))
    h = ew("mul", h, _GOLDEN)
    return ew("bitwise_and", ew("shift_right", h, 64 - bits), (1 << bits) - 1)


def hash_join_indices(left: Tensor, right: Tensor, trace: dict | None = None) -> tuple[Tensor, Tensor]:
    """Interleaved build/probe rounds over encoded key rows (any column count)."""
    ew = K.elementwise
    n_left, n_right = left.rows, right.rows
    bits = max(n_left - 1, 0).bit_length()
    size = 1 << bits
    left_index = K.arange(n_left)
    right_index = K.arange(n_right)
    left_hash = hash_rows(left, bits)
    right_hash = hash_rows(right, bits)

    rounds = K.reduce(K.bincount(left_hash, size), "max").item() if n_left and n_right else 0
    left_parts, right_parts = [], []
    for _ in range(rounds):
        table = K.scatter(K.full(size + 1, -1, "int64"), left_hash, left_index)
        # retire this round's rows by parking them in the spare slot
        built = K.narrow(table, 0, size, dim=0)
        scattered = K.masked_select_rows(built, ew("ge", built, 0))
        left_hash = K.scatter(left_hash, scattered, size)

        candidate = K.index_select(table, right_hash)
        valid = ew("ge", candidate, 0)
        cand_left = K.masked_select_rows(candidate, valid)
        cand_right = K.masked_select_rows(right_index, valid)
        same = ew("eq", K.index_select(left, cand_left), K.index_select(right, cand_right))
        match = K.reduce(same, "all", dim=1)
        left_parts.append(K.masked_select_rows(cand_left, match))
        right_parts.append(K.masked_select_rows(cand_right, match))

    if trace is not None:
        trace.update(table_size=size, rounds=rounds)
    if not left_parts:
        empty = K.full(0, 0, "int64")
        return empty, empty
    return K.concat_rows(left_parts), K.concat_rows(right_parts)


# -- primary key / foreign key ---------------------------------------------------

def _search(sorted_keys: Tensor, probe: Tensor) -> tuple[Tensor, Tensor]:
    """Position of each probe in ``sorted_keys`` and whether it is an exact hit."""
    ew = K.elementwise
    if sorted_keys.rows == 0:
        return K.full(probe.rows, 0, "int64"), K.full(probe.rows, False, "bool")
    pos = ew("sub", K.bucketize(probe, sorted_keys), 1)
    found = ew("ge", pos, 0)
    pos = K.where(found, pos, 0)
    hit = ew("logical_and", found, ew("eq", K.index_select(sorted_keys, pos), probe))
    return pos, hit


def _one_column(left: Tensor, right: Tensor) -> tuple[Tensor, Tensor]:
    if left.cols == 1:
        return left, right
    dl, dr, _ = densify(left, right)
    return dl, dr


def pkfk_join_indices(left: Tensor, right: Tensor) -> tuple[Tensor, Tensor]:
    """Binary-search every right key among the unique left keys."""
    ew = K.elementwise
    lk, rk = _one_column(left, right)
    left_sorted, left_idx = K.sort_with_indices(lk)
    n = left_sorted.rows
    if n > 1:
        dup = ew("eq", K.narrow(left_sorted, 1, n - 1, dim=0), K.narrow(left_sorted, 0, n - 1, dim=0))
        if K.reduce(dup, "any").item():
            raise KernelError("pkfk strategy requires unique build side")
    pos, hit = _search(left_sorted, rk)
    left_out = K.index_select(left_idx, K.masked_select_rows(pos, hit))
    right_out = K.nonzero(hit)
    return left_out, right_out


def membership(left: Tensor, right: Tensor) -> Tensor:
    """Mask of left key rows that occur among the right key rows."""
    lk, rk = _one_column(left, right)
    right_sorted, _ = K.sort_with_indices(rk)
    _, hit = _search(right_sorted, lk)
    return hit


# -- column-level operators ----------------------------------------------------------

def join_indices(strategy: str, left: Tensor, right: Tensor, trace: dict | None = None):
    if strategy == "sort":
        return _sort_indices(left, right, trace)
    if strategy == "hash":
        return hash_join_indices(left, right, trace)
    if strategy == "pkfk":
        return pkfk_join_indices(left, right)
    raise CompileError(f"unknown join strategy {strategy!r}")


def _keys(cols: Mapping[str, Tensor], keys) -> list[Tensor]:
    out = []
    for k in keys:
        if isinstance(k, Tensor):
            out.append(k)
        else:
            try:
                out.append(cols[k])
            except KeyError:
                raise CompileError(f"unknown join key {k!r}") from None
    return out


def _encoded(left, right, left_keys, right_keys):
    if isinstance(left_keys, (str, Tensor)):
        left_keys = [left_keys]
    if isinstance(right_keys, (str, Tensor)):
        right_keys = [right_keys]
    return encode_key_pair(_keys(left, left_keys), _keys(right, right_keys))


def _merge(a: Columns, b: Columns) -> Columns:
    clash = set(a) & set(b)
    if clash:
        raise CompileError(f"join output has duplicate columns {sorted(clash)}")
    return {**a, **b}


def gather_output(left: Mapping[str, Tensor], right: Mapping[str, Tensor],
                  left_rows: Tensor, right_rows: Tensor) -> Columns:
    return _merge({n: K.index_select(t, left_rows) for n, t in left.items()},
                  {n: K.index_select(t, right_rows) for n, t in right.items()})


def sort_join_inner(left, right, left_keys, right_keys, trace: dict | None = None) -> Columns:
    lk, rk = _encoded(left, right, left_keys, right_keys)
    li, ri = _sort_indices(lk, rk, trace)
    return gather_output(left, right, li, ri)


def hash_join_inner(left, right, left_keys, right_keys, trace: dict | None = None) -> Columns:
    lk, rk = _encoded(left, right, left_keys, right_keys)
    li, ri = hash_join_indices(lk, rk, trace)
    return gather_output(left, right, li, ri)


def pkfk_join(left, right, left_keys, right_keys) -> Columns:
    """Inner join where ``left`` is the unique-key side."""
    lk, rk = _encoded(left, right, left_keys, right_keys)
    li, ri = pkfk_join_indices(lk, rk)
    return gather_output(left, right, li, ri)


def inner_join(left, right, left_keys, right_keys, strategy: str = "sort") -> Columns:
    lk, rk = _encoded(left, right, left_keys, right_keys)
    li, ri = join_indices(strategy, lk, rk)
    return gather_output(left, right, li, ri)


def semi_anti_join(left, right, left_keys, right_keys, anti: bool = False) -> Columns:
    """Left rows with (semi) or without (anti) a match, in left order."""
    lk, rk = _encoded(left, right, left_keys, right_keys)
    hit = membership(lk, rk)
    if anti:
        hit = K.elementwise("logical_not", hit)
    rows = K.nonzero(hit)
    return {n: K.index_select(t, rows) for n, t in left.items()}


def left_outer_join(left, right, left_keys, right_keys, strategy: str = "sort",
                    mask_name: str = "match_mask") -> Columns:
    """Inner rows, then one row per unmatched left row padded with sentinels.

    Sentinels are zero for numbers and dates and the empty string for strings;
    the appended boolean ``mask_name`` column is false on padded rows.
    """
    lk, rk = _encoded(left, right, left_keys, right_keys)
    li, ri = join_indices(strategy, lk, rk)
    unmatched = K.nonzero(K.elementwise("logical_not", membership(lk, rk)))
    left_rows = K.concat_rows([li, unmatched])
    out = {n: K.index_select(t, left_rows) for n, t in left.items()}
    pad = unmatched.rows
    right_out = {}
    for n, t in right.items():
        right_out[n] = K.concat_rows([K.index_select(t, ri), K.full(pad, 0, t.dtype, t.cols)])
    if mask_name in right_out:
        raise CompileError(f"match mask name {mask_name!r} collides with a right column")
    right_out[mask_name] = K.concat_rows([K.full(li.rows, True, "bool"), K.full(pad, False, "bool")])
    return _merge(out, right_out)
