"""Row-at-a-time reference interpreter for plan files.

The oracle evaluates the same JSON plans as the engine but over Python values,
one row at a time: nested-loop joins, dict grouping, recursive expression
evaluation.  It deliberately shares nothing with the kernels or operators so
agreement between the two is meaningful.  Speed is not a goal.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from tqe.errors import PlanError

_EPOCH = dt.datetime(1970, 1, 1)
_NUMERIC = {"int32", "int64", "float64"}
_CHILD_KEYS = {"Scan": (), "Join": ("left", "right")}
REL_TOL = 1e-9
ABS_TOL = 1e-12


# -- values ----------------------------------------------------------------------------

def _to_date(s) -> dt.datetime:
    if isinstance(s, dt.datetime):
        return s
    d = dt.datetime.fromisoformat(str(s).strip())
    if d.tzinfo is not None:
        d = d.astimezone(dt.timezone.utc).replace(tzinfo=None)
    return d


def _float_bits(x: float) -> int:
    return struct.unpack("<q", struct.pack("<d", float(x)))[0]


def _norm(v, ltype: str):
    """Hashable identity of a value: floats by bit pattern, the rest as-is."""
    if ltype == "float64":
        return ("f", _float_bits(v))
    return v


def _zero(ltype: str):
    return {"string": "", "date": _EPOCH, "bool": False, "float64": 0.0}.get(ltype, 0)


def _external(v, ltype: str):
    if ltype == "date":
        return v.isoformat()
    if ltype == "float64":
        return float(v)
    if ltype == "bool":
        return bool(v)
    return v


# -- relations -------------------------------------------------------------------------

@dataclass
class _Rel:
    names: list[str]
    types: list[str]
    rows: list[tuple]
    keys: list[tuple] | None = None  # sort key per row when ordered
    pool: list[tuple] | None = None  # admissible rows for the final tie run / any limit subset
    pool_kind: str | None = None     # "tail" or "subset"

    def schema(self) -> dict[str, str]:
        return dict(zip(self.names, self.types))

    def index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.names)}


def _decode_tensor_table(t) -> tuple[list[str], list[str], list[tuple]]:
    names, types, cols = [], [], []
    for meta, tensor in t.columns:
        a = np.asarray(tensor.numpy())
        names.append(meta.name)
        types.append(meta.logical_type)
        if meta.logical_type == "string":
            cols.append([bytes(r).rstrip(b"\x00").decode("utf-8") for r in a.tolist()])
        elif meta.logical_type == "date":
            cols.append([_EPOCH + dt.timedelta(microseconds=int(v)) for v in a[:, 0].tolist()])
        else:
            cols.append(a[:, 0].tolist())
    return names, types, list(zip(*cols)) if cols else []


def _read_csv_source(src) -> tuple[list[str], list[str], list[tuple]]:
    names = [m.name for m in src.schema]
    types = [m.logical_type for m in src.schema]
    conv = {"int32": int, "int64": int, "float64": float, "string": str, "date": _to_date}
    with open(src.path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        pos = [header.index(n) for n in names]
        rows = [tuple(conv[t](r[p]) for t, p in zip(types, pos)) for r in reader]
    return names, types, rows


def _load(tables, name: str) -> tuple[list[str], list[str], list[tuple]]:
    src = tables.sources[name] if hasattr(tables, "sources") else tables[name]
    if hasattr(src, "columns"):
        return _decode_tensor_table(src)
    if hasattr(src, "path"):
        return _read_csv_source(src)
    names, types, rows = src  # (names, types, python rows)
    return list(names), list(types), [tuple(_to_date(v) if t == "date" else v
                                            for v, t in zip(r, types)) for r in rows]


# -- expressions -----------------------------------------------------------------------

def _expr(e):
    return {"kind": "col", "name": e} if isinstance(e, str) else e


def _lit_type(e) -> str:
    t = e.get("type")
    t = {"int": "int64", "float": "float64", "double": "float64", "str": "string"}.get(t, t)
    if t is not None:
        return t
    v = e["value"]
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int64"
    if isinstance(v, float):
        return "float64"
    return "string"


def type_of(e, schema: Mapping[str, str]) -> str:
    e = _expr(e)
    kind = e["kind"]
    if kind == "col":
        return schema[e["name"]]
    if kind == "lit":
        return _lit_type(e)
    fn = e["fn"]
    if fn in ("add", "sub", "mul"):
        ts = [type_of(a, schema) for a in e["args"]]
        return "float64" if "float64" in ts else "int64"
    if fn == "div":
        return "float64"
    if fn in ("year", "month"):
        return "int64"
    if fn == "case":
        ts = [type_of(v, schema) for _, v in e["branches"]] + [type_of(e["else"], schema)]
        if all(t in _NUMERIC for t in ts):
            return "float64" if "float64" in ts else ("int64" if "int64" in ts else "int32")
        return ts[0]
    return "bool"


def _like(s: str, pattern: str) -> bool:
    lead, trail = pattern.startswith("%"), pattern.endswith("%") and len(pattern) > 1
    core = pattern[1 if lead else 0: len(pattern) - (1 if trail else 0)]
    if lead and trail:
        return core in s
    if lead:
        return s.endswith(core)
    if trail:
        return s.startswith(core)
    return s == core


def _divide(a, b) -> float:
    a, b = float(a), float(b)
    if b == 0.0:
        if a == 0.0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def _value_eq(a, b, ta: str, tb: str) -> bool:
    if "float64" in (ta, tb):
        return _float_bits(float(a)) == _float_bits(float(b))
    return a == b


def eval_expr(e, row: Sequence, index: Mapping[str, int], schema: Mapping[str, str]):
    e = _expr(e)
    kind = e["kind"]
    if kind == "col":
        return row[index[e["name"]]]
    if kind == "lit":
        t = _lit_type(e)
        v = e["value"]
        if t == "date":
            return _to_date(v)
        if t == "float64":
            return float(v)
        return v
    fn = e["fn"]
    if fn == "case":
        for cond, value in e["branches"]:
            if eval_expr(cond, row, index, schema):
                out = eval_expr(value, row, index, schema)
                break
        else:
            out = eval_expr(e["else"], row, index, schema)
        return float(out) if type_of(e, schema) == "float64" else out
    args = e["args"]
    if fn == "and":
        return all([eval_expr(a, row, index, schema) for a in args])
    if fn == "or":
        return any([eval_expr(a, row, index, schema) for a in args])
    vals = [eval_expr(a, row, index, schema) for a in args]
    if fn == "not":
        return not vals[0]
    if fn == "add":
        return vals[0] + vals[1]
    if fn == "sub":
        return vals[0] - vals[1]
    if fn == "mul":
        return vals[0] * vals[1]
    if fn == "div":
        return _divide(vals[0], vals[1])
    if fn in ("eq", "ne", "lt", "le", "gt", "ge"):
        a, b = vals
        if "float64" in (type_of(args[0], schema), type_of(args[1], schema)):
            a, b = float(a), float(b)
        return {"eq": a == b, "ne": a != b, "lt": a < b, "le": a <= b, "gt": a > b, "ge": a >= b}[fn]
    if fn == "in":
        if any(type_of(a, schema) == "float64" for a in args):
            return any(float(vals[0]) == float(v) for v in vals[1:])
        return any(vals[0] == v for v in vals[1:])
    if fn == "like":
        return _like(vals[0], args[1]["value"])
    if fn == "year":
        return vals[0].year
    if fn == "month":
        return vals[0].month
    raise PlanError(f"oracle: unknown function {fn!r}")


# -- operators -------------------------------------------------------------------------

def _scan(node, tables) -> _Rel:
    names, types, rows = _load(tables, node["table"])
    idx = [names.index(c) for c in node["columns"]]
    return _Rel(list(node["columns"]), [types[i] for i in idx],
                [tuple(r[i] for i in idx) for r in rows])


def _map_rows(rel: _Rel, fn: Callable[[tuple], tuple | None], names, types) -> _Rel:
    rows, keys = [], [] if rel.keys is not None else None
    for i, r in enumerate(rel.rows):
        out = fn(r)
        if out is not None:
            rows.append(out)
            if keys is not None:
                keys.append(rel.keys[i])
    pool = None
    if rel.pool is not None:
        pool = [o for o in (fn(r) for r in rel.pool) if o is not None]
    return _Rel(names, types, rows, keys, pool, rel.pool_kind)


def _filter(node, rel: _Rel) -> _Rel:
    idx, schema = rel.index(), rel.schema()
    pred = node["predicate"]
    return _map_rows(rel, lambda r: r if eval_expr(pred, r, idx, schema) else None, rel.names, rel.types)


def _project(node, rel: _Rel) -> _Rel:
    idx, schema = rel.index(), rel.schema()
    exprs = [_expr(e) for e in node["exprs"]]
    types = [type_of(e, schema) for e in exprs]

    def fn(r):
        out = []
        for e, t in zip(exprs, types):
            v = eval_expr(e, r, idx, schema)
            out.append(float(v) if t == "float64" else v)
        return tuple(out)
    return _map_rows(rel, fn, list(node["names"]), types)


def _join(node, left: _Rel, right: _Rel) -> _Rel:
    jtype = node.get("type", "inner")
    li, ls = left.index(), left.schema()
    ri, rs = right.index(), right.schema()
    lk = [_expr(k) for k in node["left_keys"]]
    rk = [_expr(k) for k in node["right_keys"]]
    lt = [type_of(k, ls) for k in lk]
    rt = [type_of(k, rs) for k in rk]
    lvals = [[eval_expr(k, r, li, ls) for k in lk] for r in left.rows]
    rvals = [[eval_expr(k, r, ri, rs) for k in rk] for r in right.rows]

    def match(a, b):
        return all(_value_eq(x, y, p, q) for x, y, p, q in zip(a, b, lt, rt))

    rows = []
    if jtype in ("left_semi", "left_anti"):
        want = jtype == "left_semi"
        for lr, lv in zip(left.rows, lvals):
            if any(match(lv, rv) for rv in rvals) == want:
                rows.append(lr)
        return _Rel(list(left.names), list(left.types), rows)
    if jtype == "inner" and node.get("strategy") == "pkfk":
        seen = set()
        for lv in lvals:
            k = tuple(_norm(float(v), "float64") if "float64" in (p, q) else v
                      for v, p, q in zip(lv, lt, rt))
            if k in seen:
                raise PlanError("pkfk strategy requires unique build side")
            seen.add(k)
    outer = jtype == "left_outer"
    pad = tuple(_zero(t) for t in right.types)
    for lr, lv in zip(left.rows, lvals):
        hit = False
        for rr, rv in zip(right.rows, rvals):
            if match(lv, rv):
                hit = True
                rows.append(lr + rr + ((True,) if outer else ()))
        if outer and not hit:
            rows.append(lr + pad + (False,))
    names = list(left.names) + list(right.names)
    types = list(left.types) + list(right.types)
    if outer:
        names.append(node.get("mask_name", "match_mask"))
        types.append("bool")
    return _Rel(names, types, rows)


def _agg_type(fn: str, arg: str | None) -> str:
    if fn == "count":
        return "int64"
    if fn == "avg":
        return "float64"
    if fn == "sum":
        return "float64" if arg == "float64" else "int64"
    return arg


def _aggregate(node, rel: _Rel) -> _Rel:
    idx, schema = rel.index(), rel.schema()
    gexprs = [_expr(g) for g in node.get("group_by", [])]
    gtypes = [type_of(g, schema) for g in gexprs]
    gnames = node.get("group_names") or [g["name"] for g in gexprs]
    aggs = node["aggs"]
    atypes = [type_of(a["expr"], schema) if a.get("expr") is not None else None for a in aggs]

    groups: dict[tuple, tuple[tuple, list]] = {}
    for r in rel.rows:
        gv = tuple(eval_expr(g, r, idx, schema) for g in gexprs)
        key = tuple(_norm(v, t) for v, t in zip(gv, gtypes))
        if key not in groups:
            groups[key] = (gv, [])
        groups[key][1].append(r)

    out = []
    for gv, members in groups.values():
        row = list(gv)
        for a, t in zip(aggs, atypes):
            fn = a["fn"]
            if a.get("expr") is None:
                row.append(len(members))
                continue
            vals = [eval_expr(a["expr"], r, idx, schema) for r in members]
            if a.get("distinct"):
                uniq = {}
                for v in vals:
                    uniq.setdefault(_norm(v, t), v)
                vals = list(uniq.values())
            if fn == "count":
                row.append(len(vals))
            elif fn == "sum":
                row.append(math.fsum(vals) if t == "float64" else sum(vals))
            elif fn == "avg":
                row.append((math.fsum(vals) if t == "float64" else sum(vals)) / len(vals))
            elif fn == "min":
                row.append(min(vals))
            elif fn == "max":
                row.append(max(vals))
            else:
                raise PlanError(f"oracle: unknown aggregate {fn!r}")
        out.append(tuple(row))
    types = gtypes + [_agg_type(a["fn"], t) for a, t in zip(aggs, atypes)]
    return _Rel(list(gnames) + [a["name"] for a in aggs], types, out)


def _sort(node, rel: _Rel) -> _Rel:
    idx, schema = rel.index(), rel.schema()
    keyspec = [(_expr(k["expr"]), bool(k.get("desc", False))) for k in node["keys"]]
    keyed = [(tuple(eval_expr(e, r, idx, schema) for e, _ in keyspec), r) for r in rel.rows]
    for pos in reversed(range(len(keyspec))):
        keyed.sort(key=lambda kr: kr[0][pos], reverse=keyspec[pos][1])
    return _Rel(list(rel.names), list(rel.types), [r for _, r in keyed], [k for k, _ in keyed])


def _limit(node, rel: _Rel) -> _Rel:
    n = node["count"]
    rows = rel.rows[:n]
    if rel.keys is None:
        pool = list(rel.rows) if len(rel.rows) > n else None
        return _Rel(rel.names, rel.types, rows, None, pool, "subset" if pool else None)
    keys = rel.keys[:n]
    pool = None
    if 0 < n < len(rel.rows) and rel.keys[n - 1] == rel.keys[n]:
        last = rel.keys[n - 1]
        pool = [r for r, k in zip(rel.rows, rel.keys) if k == last]
    return _Rel(rel.names, rel.types, rows, keys, pool, "tail" if pool else None)


# -- driver ----------------------------------------------------------------------------

@dataclass
class OracleResult:
    columns: list[str]
    types: list[str]
    rows: list[tuple]
    mode: str                                   # "ordered" or "multiset"
    order_keys: list[tuple] | None = None
    pool: list[tuple] | None = None
    pool_kind: str | None = None
    notes: dict = field(default_factory=dict)


def _load_plan(plan) -> dict:
    if isinstance(plan, Mapping):
        return dict(plan)
    if hasattr(plan, "to_plan"):
        return plan.to_plan()
    text = str(plan)
    if not text.lstrip().startswith("{"):
        text = Path(text).read_text()
    return json.loads(text)


def oracle_execute(plan, tables) -> OracleResult:
    """Interpret ``plan`` over ``tables`` (Catalog, or name -> Table / TableSource /
    ``(names, types, rows)``)."""
    doc = _load_plan(plan)
    nodes = {n["id"]: n for n in doc["nodes"]}
    memo: dict[Any, _Rel] = {}

    def run(nid) -> _Rel:
        if nid in memo:
            return memo[nid]
        node = nodes[nid]
        kind = node["kind"]
        kids = [run(node[k]) for k in _CHILD_KEYS.get(kind, ("input",))]
        if kind == "Scan":
            rel = _scan(node, tables)
        elif kind == "Filter":
            rel = _filter(node, kids[0])
        elif kind == "Project":
            rel = _project(node, kids[0])
        elif kind == "Join":
            rel = _join(node, *kids)
        elif kind == "Aggregate":
            rel = _aggregate(node, kids[0])
        elif kind == "Sort":
            rel = _sort(node, kids[0])
        elif kind == "Limit":
            rel = _limit(node, kids[0])
        else:
            raise PlanError(f"oracle: unsupported operator {kind!r}")
        memo[nid] = rel
        return rel

    rel = run(doc["root"])

    def ext(r):
        return tuple(_external(v, t) for v, t in zip(r, rel.types))

    mode = "ordered" if rel.keys is not None else "multiset"
    keys = None
    if rel.keys is not None:
        keys = [tuple(_norm_sort_key(v) for v in k) for k in rel.keys]
    return OracleResult(list(rel.names), list(rel.types), [ext(r) for r in rel.rows], mode, keys,
                        [ext(r) for r in rel.pool] if rel.pool is not None else None, rel.pool_kind)


def _norm_sort_key(v):
    # -0.0 and 0.0 tie under sorting; keep them in one run
    return 0.0 if isinstance(v, float) and v == 0.0 else v


# -- comparison ------------------------------------------------------------------------

def values_equal(a, b) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        if isinstance(a, bool) or isinstance(b, bool):
            return a == b
        a, b = float(a), float(b)
        if math.isnan(a) or math.isnan(b):
            return math.isnan(a) and math.isnan(b)
        return math.isclose(a, b, rel_tol=REL_TOL, abs_tol=ABS_TOL)
    return a == b


def rows_equal(a: Sequence, b: Sequence) -> bool:
    return len(a) == len(b) and all(values_equal(x, y) for x, y in zip(a, b))


def _sort_key(row):
    return tuple((0, "") if isinstance(v, float) and math.isnan(v) else (1, v) if not isinstance(v, str)
                 else (2, v) for v in row)


def multiset_equal(a: Sequence[Sequence], b: Sequence[Sequence]) -> bool:
    if len(a) != len(b):
        return False
    sa, sb = sorted(a, key=_sort_key), sorted(b, key=_sort_key)
    if all(rows_equal(x, y) for x, y in zip(sa, sb)):
        return True
    return sub_multiset(sa, sb)


def sub_multiset(small: Sequence[Sequence], big: Sequence[Sequence]) -> bool:
    """Greedy tolerance-aware check that every row of ``small`` pairs with a row of ``big``."""
    remaining = list(big)
    for row in small:
        for i, cand in enumerate(remaining):
            if rows_equal(row, cand):
                del remaining[i]
                break
        else:
            return False
    return True


def compare_results(engine_rows: Sequence[Sequence], oracle: OracleResult) -> tuple[bool, str]:
    """Check engine rows against the oracle under the oracle's comparison mode."""
    rows = [tuple(r) for r in engine_rows]
    if len(rows) != len(oracle.rows):
        return False, f"row count {len(rows)} != oracle {len(oracle.rows)}"
    if oracle.mode == "multiset":
        if oracle.pool_kind == "subset":
            ok = sub_multiset(rows, oracle.pool)
        else:
            ok = multiset_equal(rows, oracle.rows)
        return ok, "" if ok else "row multisets differ"
    keys = oracle.order_keys
    start = 0
    while start < len(rows):
        stop = start
        while stop < len(rows) and keys[stop] == keys[start]:
            stop += 1
        mine, theirs = rows[start:stop], oracle.rows[start:stop]
        if stop == len(rows) and oracle.pool_kind == "tail":
            ok = sub_multiset(mine, oracle.pool)
        else:
            ok = multiset_equal(mine, theirs)
        if not ok:
            return False, f"rows {start}..{stop - 1} differ from oracle"
        start = stop
    return True, ""
