"""Compile scalar expression trees into chains of kernel calls.

Expressions are JSON trees::

    {"kind": "col", "name": "l_discount"}
    {"kind": "lit", "type": "float64", "value": 0.05}
    {"kind": "call", "fn": "mul", "args": [...]}

The compiler walks the tree post-order.  Leaves resolve to column tensors or
constants, internal nodes to kernel compositions.  Nothing iterates over rows:
the only host loops run over string byte positions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

from tqe import kernels as K
from tqe.errors import CompileError
from tqe.kernels import Tensor
from tqe.storage import StorageError, parse_date_us

NUMERIC = frozenset({"int32", "int64", "float64"})
DTYPE_OF = {
    "int32": "int32",
    "int64": "int64",
    "float64": "float64",
    "date": "int64",
    "string": "uint8",
    "bool": "bool",
}
_LIT_ALIASES = {"int": "int64", "float": "float64", "double": "float64", "str": "string"}
_FLIP = {"eq": "eq", "ne": "ne", "lt": "gt", "le": "ge", "gt": "lt", "ge": "le"}
_US_PER_DAY = 86_400_000_000


def col(name: str) -> dict:
    return {"kind": "col", "name": name}


def lit(value, type: str | None = None) -> dict:
    d = {"kind": "lit", "value": value}
    if type is not None:
        d["type"] = type
    return d


def call(fn: str, *args, **extra) -> dict:
    return {"kind": "call", "fn": fn, "args": list(args), **extra}


def expr_columns(expr) -> set[str]:
    """Names of every column referenced by ``expr``."""
    if expr is None:
        return set()
    kind = expr.get("kind")
    if kind == "col":
        return {expr["name"]}
    if kind == "lit":
        return set()
    out = set()
    for a in expr.get("args", ()):
        out |= expr_columns(a)
    for cond, value in expr.get("branches", ()):
        out |= expr_columns(cond) | expr_columns(value)
    if expr.get("else") is not None:
        out |= expr_columns(expr["else"])
    return out


def is_column(expr) -> bool:
    return isinstance(expr, Mapping) and expr.get("kind") == "col"


@dataclass(frozen=True)
class Const:
    """A literal that has not been broadcast to a column yet."""

    value: object  # int, float, bool, or bytes for strings


@dataclass
class _Env:
    columns: Mapping[str, Tensor]
    nrows: int


@dataclass(frozen=True)
class CompiledExpression:
    expr: Mapping
    logical_type: str
    columns: frozenset
    _fn: Callable = field(repr=False)

    @property
    def dtype(self) -> str:
        return DTYPE_OF[self.logical_type]

    def __call__(self, columns: Mapping[str, Tensor], nrows: int | None = None) -> Tensor:
        if nrows is None:
            nrows = next((t.rows for t in columns.values()), 0)
        return materialize(self._fn(_Env(columns, nrows)), self.logical_type, nrows)


def materialize(v, ltype: str, n: int) -> Tensor:
    if isinstance(v, Tensor):
        return v
    if ltype == "string":
        raw = v.value or b"\x00"
        row = Tensor([list(raw)], "uint8")
        return K.index_select(row, K.full(n, 0, "int64"))
    return K.full(n, v.value, DTYPE_OF[ltype])


# -- helpers over Tensor-or-Const values ----------------------------------------

def _cast(v, dtype: str):
    if isinstance(v, Const):
        return Const(float(v.value) if dtype == "float64" else v.value)
    return K.cast(v, dtype)


def _numeric_common(ta: str, tb: str) -> str:
    if "float64" in (ta, tb):
        return "float64"
    return "int64"


def _binary(op: str, a, b, ltype: str, env: _Env):
    """Apply ``op`` on two Tensor/Const values of already-aligned dtype."""
    if isinstance(a, Const) and isinstance(b, Const):
        a = materialize(a, ltype, 1)
        out = K.elementwise(op, a, b.value)
        return Const(out.item())
    if isinstance(a, Const):
        if op in _FLIP:
            return K.elementwise(_FLIP[op], b, a.value)
        a = materialize(a, ltype, env.nrows)
    return K.elementwise(op, a, b.value if isinstance(b, Const) else b)


def _pad(v, width: int, env: _Env):
    if isinstance(v, Const):
        return Const(v.value.ljust(width, b"\x00"))
    if v.cols >= width:
        return v
    return K.concat_cols([v, K.full(v.rows, 0, "uint8", width - v.cols)])


def _width(v) -> int:
    return max(len(v.value), 1) if isinstance(v, Const) else v.cols


def _byte(v, j: int):
    if isinstance(v, Const):
        return Const(v.value[j])
    return K.narrow(v, j, 1)


def _and(a, b):
    if isinstance(a, Const):
        return b if a.value else Const(False)
    if isinstance(b, Const):
        return a if b.value else Const(False)
    return K.elementwise("logical_and", a, b)


def _or(a, b):
    if isinstance(a, Const):
        return Const(True) if a.value else b
    if isinstance(b, Const):
        return Const(True) if b.value else a
    return K.elementwise("logical_or", a, b)


def _not(a):
    if isinstance(a, Const):
        return Const(not a.value)
    return K.elementwise("logical_not", a)


def _string_compare(op: str, a, b, env: _Env):
    """Byte-wise comparison of zero-padded strings."""
    if op in ("gt", "ge"):
        return _string_compare("lt" if op == "gt" else "le", b, a, env)
    w = max(_width(a), _width(b))
    a, b = _pad(a, w, env), _pad(b, w, env)
    if isinstance(a, Const) and isinstance(b, Const):
        x, y = a.value, b.value
        return Const({"eq": x == y, "ne": x != y, "lt": x < y, "le": x <= y}[op])
    eq = Const(True)
    less = Const(False)
    for j in range(w):
        aj, bj = _byte(a, j), _byte(b, j)
        if op in ("lt", "le"):
            less = _or(less, _and(eq, _binary("lt", aj, bj, "int64", env)))
        eq = _and(eq, _binary("eq", aj, bj, "int64", env))
    if op == "eq":
        return eq
    if op == "ne":
        return _not(eq)
    if op == "lt":
        return less
    return _or(less, eq)


def _window_eq(v: Tensor, start: int, pattern: bytes, env: _Env):
    out = Const(True)
    for j, byte in enumerate(pattern):
        out = _and(out, K.elementwise("eq", K.narrow(v, start + j, 1), byte))
    return out


def _like(v, pattern: str, env: _Env):
    if "_" in pattern:
        raise CompileError(f"unsupported LIKE pattern {pattern!r}")
    lead = pattern.startswith("%")
    trail = pattern.endswith("%") and len(pattern) > 1
    core = pattern[1 if lead else 0: len(pattern) - (1 if trail else 0)]
    if "%" in core:
        raise CompileError(f"unsupported LIKE pattern {pattern!r}")
    p = core.encode("utf-8")
    if isinstance(v, Const):
        s = v.value
        if lead and trail:
            return Const(p in s)
        if lead:
            return Const(s.endswith(p))
        if trail:
            return Const(s.startswith(p))
        return Const(s == p)
    if not lead and not trail:
        return _string_compare("eq", v, Const(p), env)
    w, k = v.cols, len(p)
    if k == 0:
        return Const(True)
    if k > w:
        return Const(False)
    if trail and not lead:
        return _window_eq(v, 0, p, env)
    if lead and trail:
        out = Const(False)
        for s in range(w - k + 1):
            out = _or(out, _window_eq(v, s, p, env))
        return out
    # suffix: the window must end exactly at the string's length
    length = K.reduce(K.cast(K.elementwise("ne", v, 0), "int64"), "sum", dim=1)
    out = Const(False)
    for s in range(w - k + 1):
        out = _or(out, _and(_window_eq(v, s, p, env), K.elementwise("eq", length, s + k)))
    return out


def _civil(days: Tensor) -> tuple[Tensor, Tensor]:
    """(year, month) from days since 1970-01-01, proleptic Gregorian."""
    ew = K.elementwise
    z = ew("add", days, 719468)
    era = ew("div", z, 146097)
    doe = ew("sub", z, ew("mul", era, 146097))
    yoe = ew("div", ew("add", ew("sub", doe, ew("div", doe, 1460)),
                       ew("sub", ew("div", doe, 36524), ew("div", doe, 146096))), 365)
    doy = ew("sub", doe, ew("sub", ew("add", ew("mul", yoe, 365), ew("div", yoe, 4)), ew("div", yoe, 100)))
    mp = ew("div", ew("add", ew("mul", doy, 5), 2), 153)
    month = ew("add", mp, K.where(ew("lt", mp, 10), 3, -9))
    year = ew("add", ew("add", yoe, ew("mul", era, 400)), K.cast(ew("le", month, 2), "int64"))
    return year, month


# -- compiler -----------------------------------------------------------------------

@dataclass(frozen=True)
class _Node:
    ltype: str
    fn: Callable


def _literal(expr) -> _Node:
    value = expr.get("value")
    ltype = expr.get("type")
    ltype = _LIT_ALIASES.get(ltype, ltype)
    if ltype is None:
        if isinstance(value, bool):
            ltype = "bool"
        elif isinstance(value, int):
            ltype = "int64"
        elif isinstance(value, float):
            ltype = "float64"
        elif isinstance(value, str):
            ltype = "string"
        else:
            raise CompileError(f"cannot type literal {value!r}")
    if ltype == "string":
        if not isinstance(value, str):
            raise CompileError(f"string literal expected, got {value!r}")
        raw = value.encode("utf-8")
        if b"\x00" in raw:
            raise CompileError("string literal contains NUL")
        c = Const(raw)
    elif ltype == "date":
        try:
            c = Const(parse_date_us(value))
        except StorageError as e:
            raise CompileError(str(e)) from None
    elif ltype in ("int32", "int64"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise CompileError(f"integer literal expected, got {value!r}")
        c = Const(int(value))
    elif ltype == "float64":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CompileError(f"numeric literal expected, got {value!r}")
        c = Const(float(value))
    elif ltype == "bool":
        if not isinstance(value, bool):
            raise CompileError(f"bool literal expected, got {value!r}")
        c = Const(value)
    else:
        raise CompileError(f"unknown literal type {ltype!r}")
    return _Node(ltype, lambda env: c)


def _compile(expr, schema: Mapping[str, str]) -> _Node:
    if not isinstance(expr, Mapping):
        raise CompileError(f"malformed expression {expr!r}")
    kind = expr.get("kind")
    if kind == "col":
        name = expr.get("name")
        if name not in schema:
            raise CompileError(f"unknown column {name!r}")
        return _Node(schema[name], lambda env: env.columns[name])
    if kind == "lit":
        return _literal(expr)
    if kind != "call":
        raise CompileError(f"unknown expression kind {kind!r}")
    fn = expr.get("fn")
    if fn == "case":
        return _compile_case(expr, schema)
    args = [_compile(a, schema) for a in expr.get("args", ())]
    builder = _CALLS.get(fn)
    if builder is None:
        raise CompileError(f"unknown function {fn!r}")
    return builder(fn, args, expr)


def _arity(fn, args, n):
    if len(args) != n:
        raise CompileError(f"{fn} takes {n} argument(s), got {len(args)}")


def _arith(fn, args, expr):
    _arity(fn, args, 2)
    a, b = args
    if a.ltype not in NUMERIC or b.ltype not in NUMERIC:
        raise CompileError(f"type mismatch: {fn}({a.ltype}, {b.ltype})")
    out = "float64" if fn == "div" else _numeric_common(a.ltype, b.ltype)

    def run(env):
        x, y = _cast(a.fn(env), out), _cast(b.fn(env), out)
        return _binary(fn, x, y, out, env)
    return _Node(out, run)


def _compare_types(fn, a: _Node, b: _Node) -> str:
    if a.ltype in NUMERIC and b.ltype in NUMERIC:
        return "float64" if "float64" in (a.ltype, b.ltype) else "int64"
    if a.ltype == b.ltype and a.ltype in ("date", "string"):
        return a.ltype
    if a.ltype == b.ltype == "bool" and fn in ("eq", "ne"):
        return "bool"
    raise CompileError(f"type mismatch: {fn}({a.ltype}, {b.ltype})")


def _comparison(fn, args, expr):
    _arity(fn, args, 2)
    a, b = args
    common = _compare_types(fn, a, b)

    def run(env):
        x, y = a.fn(env), b.fn(env)
        if common == "string":
            return _string_compare(fn, x, y, env)
        if common in NUMERIC:
            x, y = _cast(x, common), _cast(y, common)
        return _binary(fn, x, y, DTYPE_OF[common] if common != "date" else "int64", env)
    return _Node("bool", run)


def _logical(fn, args, expr):
    if fn == "not":
        _arity(fn, args, 1)
    elif len(args) < 2:
        raise CompileError(f"{fn} takes at least 2 arguments")
    for a in args:
        if a.ltype != "bool":
            raise CompileError(f"type mismatch: {fn} over {a.ltype}")
    if fn == "not":
        return _Node("bool", lambda env: _not(args[0].fn(env)))
    combine = _and if fn == "and" else _or

    def run(env):
        out = args[0].fn(env)
        for a in args[1:]:
            out = combine(out, a.fn(env))
        return out
    return _Node("bool", run)


def _in(fn, args, expr):
    if len(args) < 2:
        raise CompileError("in needs a value and at least one candidate")
    probe = args[0]
    for c in args[1:]:
        _compare_types("eq", probe, c)
    eqs = [_comparison("eq", [probe, c], expr) for c in args[1:]]

    def run(env):
        out = eqs[0].fn(env)
        for e in eqs[1:]:
            out = _or(out, e.fn(env))
        return out
    return _Node("bool", run)


def _like_call(fn, args, expr):
    _arity(fn, args, 2)
    value, pattern = args
    pexpr = expr["args"][1]
    if value.ltype != "string" or pexpr.get("kind") != "lit" or not isinstance(pexpr.get("value"), str):
        raise CompileError("like needs a string value and a string literal pattern")
    text = pexpr["value"]
    _like(Const(b""), text, None)  # validates the pattern at compile time
    return _Node("bool", lambda env: _like(value.fn(env), text, env))


def _date_part(fn, args, expr):
    _arity(fn, args, 1)
    (a,) = args
    if a.ltype != "date":
        raise CompileError(f"{fn} needs a date argument, got {a.ltype}")

    def run(env):
        v = materialize(a.fn(env), "date", env.nrows)
        days = K.elementwise("div", v, _US_PER_DAY)
        year, month = _civil(days)
        return year if fn == "year" else month
    return _Node("int64", run)


def _unify(types: list[str]) -> str:
    if all(t in NUMERIC for t in types):
        return "float64" if "float64" in types else ("int64" if "int64" in types else "int32")
    if len(set(types)) == 1:
        return types[0]
    raise CompileError(f"case branches have incompatible types {sorted(set(types))}")


def _compile_case(expr, schema) -> _Node:
    branches = expr.get("branches")
    if not branches or expr.get("else") is None:
        raise CompileError("case needs at least one branch and an else value")
    conds, values = [], []
    for pair in branches:
        if len(pair) != 2:
            raise CompileError("case branch must be [condition, value]")
        c = _compile(pair[0], schema)
        if c.ltype != "bool":
            raise CompileError("case condition must be boolean")
        conds.append(c)
        values.append(_compile(pair[1], schema))
    default = _compile(expr["else"], schema)
    out = _unify([v.ltype for v in values] + [default.ltype])

    def run(env):
        n = env.nrows
        vals = [v.fn(env) for v in values]
        dflt = default.fn(env)
        if out == "string":
            w = max(_width(x) for x in vals + [dflt])
            vals = [_pad(x, w, env) for x in vals]
            dflt = _pad(dflt, w, env)
        elif out in NUMERIC:
            vals = [_cast(x, out) for x in vals]
            dflt = _cast(dflt, out)
        result = materialize(dflt, out, n)
        # later branches first so the first matching branch wins
        for c, v in reversed(list(zip(conds, vals))):
            mask = materialize(c.fn(env), "bool", n)
            result = K.where(mask, materialize(v, out, n), result)
        return result
    return _Node(out, run)


_CALLS = {
    "add": _arith, "sub": _arith, "mul": _arith, "div": _arith,
    "eq": _comparison, "ne": _comparison, "lt": _comparison,
    "le": _comparison, "gt": _comparison, "ge": _comparison,
    "and": _logical, "or": _logical, "not": _logical,
    "in": _in, "like": _like_call,
    "year": _date_part, "month": _date_part,
}


def compile_expression(expr: Mapping, schema: Mapping[str, str]) -> CompiledExpression:
    """Compile ``expr`` against ``schema`` (column name -> logical type)."""
    node = _compile(expr, schema)
    return CompiledExpression(expr, node.ltype, frozenset(expr_columns(expr)), node.fn)
