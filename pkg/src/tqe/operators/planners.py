"""Planner factories for the built-in ``TQPLite`` operators.

A factory receives a :class:`PlanningContext` for one IR operator and returns
a :class:`Planned` program: a closure from input tensors to output tensors,
plus the logical types of the outputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from tqe.errors import CompileError, PlanError
from tqe.ir import FRONTEND, IrOperator, register_operator
from tqe.kernels import Tensor
from tqe.operators import aggregate, filters, joins, ordering
from tqe.operators.expressions import NUMERIC, compile_expression, is_column


@dataclass
class PlanningContext:
    op: IrOperator
    input_types: list[str]
    child_widths: list[int]
    catalog: Mapping[str, Sequence] = field(default_factory=dict)
    options: Mapping = field(default_factory=dict)

    @property
    def node(self) -> Mapping:
        return self.op.frontend_ref

    @property
    def schema(self) -> dict[str, str]:
        return dict(zip(self.op.input_names, self.input_types))

    def side(self, i: int) -> tuple[list[str], dict[str, str]]:
        start = sum(self.child_widths[:i])
        stop = start + self.child_widths[i]
        names = self.op.input_names[start:stop]
        return names, dict(zip(names, self.input_types[start:stop]))


@dataclass
class Planned:
    run: Callable[[Sequence[Tensor]], list[Tensor]]
    output_types: list[str]
    info: dict = field(default_factory=dict)
    source: tuple[str, list[str]] | None = None


def _as_expr(key):
    return {"kind": "col", "name": key} if isinstance(key, str) else key


# -- output naming (used while parsing) ----------------------------------------------

def scan_names(node, child_names):
    cols = node["columns"]
    if not isinstance(cols, list) or not all(isinstance(c, str) for c in cols):
        raise TypeError("Scan.columns must be a list of names")
    return list(cols)


def project_names(node, child_names):
    if len(node["exprs"]) != len(node["names"]):
        raise TypeError("Project.exprs and Project.names differ in length")
    return list(node["names"])


def join_names(node, child_names):
    jtype = node.get("type", "inner")
    if jtype not in joins.JOIN_TYPES:
        raise PlanError(f"unknown join type {jtype!r}")
    left, right = child_names
    if jtype in ("left_semi", "left_anti"):
        return list(left)
    names = list(left) + list(right)
    if jtype == "left_outer":
        names.append(node.get("mask_name", "match_mask"))
    return names


def group_names(node) -> list[str]:
    given = node.get("group_names")
    exprs = node.get("group_by", [])
    if given is not None:
        if len(given) != len(exprs):
            raise TypeError("Aggregate.group_names and group_by differ in length")
        return list(given)
    names = []
    for g in exprs:
        g = _as_expr(g)
        if not is_column(g):
            raise TypeError("computed group_by expressions need group_names")
        names.append(g["name"])
    return names


def aggregate_names(node, child_names):
    return group_names(node) + [a["name"] for a in node["aggs"]]


# -- planners --------------------------------------------------------------------------

def plan_scan(ctx: PlanningContext) -> Planned:
    table = ctx.node["table"]
    cols = list(ctx.node["columns"])
    if table not in ctx.catalog:
        raise CompileError(f"unknown table {table!r}")
    types = {m.name: m.logical_type for m in ctx.catalog[table]}
    missing = [c for c in cols if c not in types]
    if missing:
        raise CompileError(f"table {table!r} has no column(s) {missing}")
    return Planned(lambda inputs: list(inputs), [types[c] for c in cols], source=(table, cols))


def plan_filter(ctx: PlanningContext) -> Planned:
    names = ctx.op.input_names
    pred = compile_expression(ctx.node["predicate"], ctx.schema)
    if pred.logical_type != "bool":
        raise CompileError(f"filter predicate must be boolean, got {pred.logical_type}")
    method = ctx.node.get("method", ctx.options.get("filter_method", "sv"))
    impl = {"sv": filters.filter_sv, "bm": filters.filter_bm}.get(method)
    if impl is None:
        raise CompileError(f"unknown filter method {method!r}")

    def run(inputs):
        return list(impl(dict(zip(names, inputs)), pred, _rows(inputs)).values())
    return Planned(run, list(ctx.input_types), {"method": method})


def plan_project(ctx: PlanningContext) -> Planned:
    names = ctx.op.input_names
    if not ctx.node["exprs"]:
        raise CompileError("zero-column projection must be canonicalized first")
    exprs = [compile_expression(_as_expr(e), ctx.schema) for e in ctx.node["exprs"]]
    out_names = list(ctx.node["names"])

    def run(inputs):
        return list(ordering.project(dict(zip(names, inputs)), exprs, out_names, _rows(inputs)).values())
    return Planned(run, [e.logical_type for e in exprs])


def _key_types_compatible(a: str, b: str) -> bool:
    return (a in NUMERIC and b in NUMERIC) or a == b


def plan_join(ctx: PlanningContext) -> Planned:
    node = ctx.node
    jtype = node.get("type", "inner")
    strategy = node.get("strategy", "sort")
    if strategy not in joins.STRATEGIES:
        raise CompileError(f"unknown join strategy {strategy!r}")
    lkeys, rkeys = node.get("left_keys"), node.get("right_keys")
    if not lkeys or not rkeys or len(lkeys) != len(rkeys):
        raise CompileError("join needs matching non-empty left_keys and right_keys")
    lnames, lschema = ctx.side(0)
    rnames, rschema = ctx.side(1)
    lk = [compile_expression(_as_expr(k), lschema) for k in lkeys]
    rk = [compile_expression(_as_expr(k), rschema) for k in rkeys]
    for a, b in zip(lk, rk):
        if not _key_types_compatible(a.logical_type, b.logical_type):
            raise CompileError(f"join key types differ: {a.logical_type} vs {b.logical_type}")
    nl = len(lnames)
    mask_name = node.get("mask_name", "match_mask")
    ltypes, rtypes = ctx.input_types[:nl], ctx.input_types[nl:]

    def run(inputs):
        left = dict(zip(lnames, inputs[:nl]))
        right = dict(zip(rnames, inputs[nl:]))
        ln, rn = _rows(inputs[:nl]), _rows(inputs[nl:])
        lkt = [k(left, ln) for k in lk]
        rkt = [k(right, rn) for k in rk]
        if jtype == "inner":
            out = joins.inner_join(left, right, lkt, rkt, strategy)
        elif jtype == "left_outer":
            out = joins.left_outer_join(left, right, lkt, rkt, strategy, mask_name)
        else:
            out = joins.semi_anti_join(left, right, lkt, rkt, anti=jtype == "left_anti")
        return list(out.values())

    if jtype in ("left_semi", "left_anti"):
        types = list(ltypes)
    else:
        types = list(ltypes) + list(rtypes) + (["bool"] if jtype == "left_outer" else [])
    return Planned(run, types, {"type": jtype, "strategy": strategy})


def _agg_type(fn: str, arg: str | None) -> str:
    if fn == "count":
        return "int64"
    if fn in ("sum", "avg") and arg not in NUMERIC:
        raise CompileError(f"{fn} over a {arg} column")
    if fn in ("min", "max") and arg == "bool":
        raise CompileError(f"{fn} over a boolean column")
    if fn == "avg":
        return "float64"
    if fn == "sum":
        return "float64" if arg == "float64" else "int64"
    return arg


def plan_aggregate(ctx: PlanningContext) -> Planned:
    names = ctx.op.input_names
    node = ctx.node
    gexprs = [compile_expression(_as_expr(g), ctx.schema) for g in node.get("group_by", [])]
    gnames = group_names(node)
    specs, types = [], [g.logical_type for g in gexprs]
    for a in node["aggs"]:
        fn = a["fn"]
        expr = a.get("expr")
        compiled = compile_expression(_as_expr(expr), ctx.schema) if expr is not None else None
        specs.append(aggregate.AggSpec(fn, compiled, a["name"], bool(a.get("distinct", False))))
        types.append(_agg_type(fn, compiled.logical_type if compiled else None))

    def run(inputs):
        out = aggregate.groupby_aggregate(dict(zip(names, inputs)), gexprs, gnames, specs, _rows(inputs))
        return list(out.values())
    return Planned(run, types)


def plan_sort(ctx: PlanningContext) -> Planned:
    names = ctx.op.input_names
    keys = []
    for k in ctx.node["keys"]:
        keys.append((compile_expression(_as_expr(k["expr"]), ctx.schema), bool(k.get("desc", False))))

    def run(inputs):
        return list(ordering.sort_operator(dict(zip(names, inputs)), keys, _rows(inputs)).values())
    return Planned(run, list(ctx.input_types))


def plan_limit(ctx: PlanningContext) -> Planned:
    names = ctx.op.input_names
    count = ctx.node["count"]
    if isinstance(count, bool) or not isinstance(count, int) or count < 0:
        raise CompileError(f"limit count must be a non-negative integer, got {count!r}")

    def run(inputs):
        return list(ordering.limit(dict(zip(names, inputs)), count).values())
    return Planned(run, list(ctx.input_types))


def _rows(inputs: Sequence[Tensor]) -> int:
    return inputs[0].rows if inputs else 0


BUILTINS = {
    "Scan": (plan_scan, (), scan_names),
    "Filter": (plan_filter, ("input",), None),
    "Project": (plan_project, ("input",), project_names),
    "Join": (plan_join, ("left", "right"), join_names),
    "Aggregate": (plan_aggregate, ("input",), aggregate_names),
    "Sort": (plan_sort, ("input",), None),
    "Limit": (plan_limit, ("input",), None),
}


def register_builtins(registry=None) -> None:
    for kind, (factory, child_keys, names) in BUILTINS.items():
        register_operator(FRONTEND + kind, factory, child_keys=child_keys,
                          output_names=names, registry=registry)
