"""Planning and execution layers.

Planning maps every IR operator to a tensor program (looked up by alias in
the operator registry) and derives the *feeder*: the per-table list of
columns that must be converted to tensors.  Execution converts the input
data, runs the programs in topological order, wires outputs to consumers, and
drops each intermediate tensor as soon as its last consumer has run.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from tqe.errors import CompileError, ExecutionError, PlanError, StorageError, TqeError
from tqe.ir import PlanGraph, parse_plan, topological_order, _default_registry
from tqe.kernels import Tensor
from tqe.operators.planners import Planned, PlanningContext
from tqe.rewrite import rewrite
from tqe.storage import Catalog, ColumnMeta, Table, TableSource


def _ms(t0: float) -> float:
    return time.perf_counter() - t0


def schemas_of(tables) -> dict[str, list[ColumnMeta]]:
    """Table -> column metas from a Catalog or a mapping of tables/sources/schemas."""
    if isinstance(tables, Catalog):
        return {n: list(s.schema) for n, s in tables.sources.items()}
    out = {}
    for name, t in tables.items():
        if isinstance(t, Table):
            out[name] = t.schema
        elif isinstance(t, TableSource):
            out[name] = list(t.schema)
        else:
            out[name] = list(t)
    return out


@dataclass
class Feeder:
    """Which columns of which tables to convert into tensors."""

    tables: dict[str, list[str]] = field(default_factory=dict)

    def add(self, table: str, columns: Sequence[str]) -> None:
        cols = self.tables.setdefault(table, [])
        for c in columns:
            if c not in cols:
                cols.append(c)

    @property
    def encoded_columns(self) -> int:
        return sum(len(c) for c in self.tables.values())

    def run(self, sources) -> dict[str, Tensor]:
        if isinstance(sources, Catalog):
            sources = sources.sources
        out = {}
        for table, cols in self.tables.items():
            try:
                src = sources[table]
            except KeyError:
                raise StorageError(f"no data for table {table!r}") from None
            loaded = src.load(cols) if isinstance(src, TableSource) else src.select(cols)
            for c in cols:
                out[f"{table}.{c}"] = loaded.column(c)
        return out


@dataclass
class OperatorProgram:
    op_id: int
    alias: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    output_names: tuple[str, ...]
    output_types: tuple[str, ...]
    run: Callable[[Sequence[Tensor]], list[Tensor]]
    info: dict = field(default_factory=dict)


@dataclass
class Timings:
    compile: float = 0.0
    convert: float = 0.0
    execute: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {"compile": self.compile, "convert": self.convert, "execute": self.execute}


@dataclass
class ExecutionContext:
    """Live tensors and remaining-use counters for one query run."""

    gc: bool = True
    check_liveness: bool = True
    live: dict[str, Tensor] = field(default_factory=dict)
    remaining: dict[str, int] = field(default_factory=dict)
    roots: frozenset = frozenset()
    timings: Timings = field(default_factory=Timings)
    dropped: list[tuple[int, str]] = field(default_factory=list)  # (step, uid)
    peak_live: int = 0
    step: int = -1

    def _release(self, uid: str) -> None:
        if self.gc and self.remaining.get(uid, 0) == 0 and uid not in self.roots and uid in self.live:
            del self.live[uid]
            self.dropped.append((self.step, uid))

    def assert_liveness(self) -> None:
        if not (self.gc and self.check_liveness):
            return
        stale = [u for u in self.live if self.remaining.get(u, 0) <= 0 and u not in self.roots]
        if stale:
            raise AssertionError(f"tensors held with no remaining uses: {stale}")


def plan_to_programs(g: PlanGraph, catalog, options: Mapping | None = None,
                     reverse_ties: bool = False) -> tuple[Feeder, list[OperatorProgram]]:
    """Instantiate one program per IR operator and build the feeder."""
    registry = _default_registry(g.registry)
    schemas = schemas_of(catalog)
    types: dict[str, str] = {}
    feeder = Feeder()
    programs = []
    for op in topological_order(g, reverse_ties):
        spec = registry.get(op.alias)
        ctx = PlanningContext(
            op=op,
            input_types=[types[v.uid] for v in op.inputs],
            child_widths=[len(g.op(c).outputs) for c in op.children],
            catalog=schemas,
            options=options or {},
        )
        try:
            planned: Planned = spec.planner_factory(ctx)
        except (KeyError, TypeError) as e:
            raise CompileError(f"{op.alias} #{op.id}: malformed operator ({e})") from None
        except TqeError as e:
            raise type(e)(f"{op.alias} #{op.id}: {e}") from None
        if len(planned.output_types) != len(op.outputs):
            raise CompileError(f"{op.alias} #{op.id}: planner returned {len(planned.output_types)} "
                               f"types for {len(op.outputs)} outputs")
        if planned.source is not None:
            table, cols = planned.source
            feeder.add(table, cols)
            inputs = tuple(f"{table}.{c}" for c in cols)
        else:
            inputs = tuple(v.uid for v in op.inputs)
        for v, t in zip(op.outputs, planned.output_types):
            types[v.uid] = t
        programs.append(OperatorProgram(
            op.id, op.alias, inputs, tuple(v.uid for v in op.outputs),
            tuple(op.output_names), tuple(planned.output_types), planned.run, dict(planned.info)))
    return feeder, programs


def execute(programs: Sequence[OperatorProgram], feeder: Feeder, tables, *, gc: bool = True,
            check_liveness: bool = True, ctx: ExecutionContext | None = None) -> Table:
    """Run ``programs`` in order and return the last program's outputs as a table."""
    if not programs:
        raise PlanError("nothing to execute")
    ctx = ctx or ExecutionContext(gc=gc, check_liveness=check_liveness)
    root = programs[-1]
    ctx.roots = frozenset(root.outputs)

    t0 = time.perf_counter()
    ctx.live.update(feeder.run(tables))
    ctx.timings.convert += _ms(t0)

    t0 = time.perf_counter()
    for p in programs:
        for u in p.inputs:
            ctx.remaining[u] = ctx.remaining.get(u, 0) + 1
    for u in list(ctx.live):
        ctx._release(u)
    for step, p in enumerate(programs):
        ctx.step = step
        try:
            args = [ctx.live[u] for u in p.inputs]
        except KeyError as e:
            raise ExecutionError(p.alias, f"input {e.args[0]} is not available") from None
        try:
            outs = p.run(args)
        except TqeError as e:
            raise ExecutionError(p.alias, e) from e
        except ValueError as e:
            raise ExecutionError(p.alias, e) from e
        if len(outs) != len(p.outputs):
            raise ExecutionError(p.alias, f"produced {len(outs)} outputs, expected {len(p.outputs)}")
        for u, t in zip(p.outputs, outs):
            ctx.live[u] = t
        for u in p.inputs:
            ctx.remaining[u] -= 1
            ctx._release(u)
        for u in p.outputs:
            ctx._release(u)
        ctx.peak_live = max(ctx.peak_live, len(ctx.live))
        ctx.assert_liveness()
    ctx.timings.execute += _ms(t0)

    cols = []
    for uid, name, ltype in zip(root.outputs, root.output_names, root.output_types):
        t = ctx.live[uid]
        cols.append((ColumnMeta(name, ltype, t.cols if ltype == "string" else 0), t))
    return Table("result", tuple(cols))


@dataclass
class CompiledQuery:
    graph: PlanGraph
    feeder: Feeder
    programs: list[OperatorProgram]
    timings: Timings

    def run(self, tables, *, gc: bool = True, ctx: ExecutionContext | None = None) -> Table:
        ctx = ctx or ExecutionContext(gc=gc)
        ctx.timings.compile = self.timings.compile
        result = execute(self.programs, self.feeder, tables, ctx=ctx)
        self.timings.convert, self.timings.execute = ctx.timings.convert, ctx.timings.execute
        return result

    def explain(self) -> str:
        return explain(self.graph, self.programs)


def compile_query(plan, catalog, *, optimize: bool = True, options: Mapping | None = None,
                  reverse_ties: bool = False, registry=None) -> CompiledQuery:
    """Parse, canonicalize, optionally optimize, and plan a query."""
    t0 = time.perf_counter()
    g = plan if isinstance(plan, PlanGraph) else parse_plan(plan, registry)
    schemas = schemas_of(catalog)
    g = rewrite(g, optimize=optimize, catalog=schemas)
    feeder, programs = plan_to_programs(g, schemas, options, reverse_ties)
    return CompiledQuery(g, feeder, programs, Timings(compile=_ms(t0)))


def run_query(plan, tables, *, optimize: bool = True, gc: bool = True,
              options: Mapping | None = None, reverse_ties: bool = False,
              ctx: ExecutionContext | None = None) -> Table:
    q = compile_query(plan, tables, optimize=optimize, options=options, reverse_ties=reverse_ties)
    return q.run(tables, gc=gc, ctx=ctx)


# -- explain -----------------------------------------------------------------------

_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/", "eq": "=", "ne": "<>",
          "lt": "<", "le": "<=", "gt": ">", "ge": ">=", "and": "AND", "or": "OR"}


def format_expr(e) -> str:
    if e is None:
        return "*"
    if isinstance(e, str):
        return e
    kind = e.get("kind")
    if kind == "col":
        return e["name"]
    if kind == "lit":
        v = e.get("value")
        if e.get("type") == "date":
            return f"date '{v}'"
        return repr(v) if isinstance(v, str) else str(v)
    fn = e.get("fn")
    args = [format_expr(a) for a in e.get("args", ())]
    if fn in _INFIX and len(args) >= 2:
        return "(" + f" {_INFIX[fn]} ".join(args) + ")"
    if fn == "not":
        return f"NOT {args[0]}"
    if fn == "in":
        return f"{args[0]} IN ({', '.join(args[1:])})"
    if fn == "like":
        return f"{args[0]} LIKE {args[1]}"
    if fn == "case":
        parts = " ".join(f"WHEN {format_expr(c)} THEN {format_expr(v)}" for c, v in e["branches"])
        return f"CASE {parts} ELSE {format_expr(e['else'])} END"
    return f"{fn}({', '.join(args)})"


def _details(op) -> str:
    n = op.frontend_ref
    kind = op.kind
    if kind == "Scan":
        return f"table={n['table']} columns=[{', '.join(n['columns'])}]"
    if kind == "Filter":
        return f"predicate={format_expr(n['predicate'])}"
    if kind == "Project":
        return "exprs=[" + ", ".join(f"{format_expr(e)} AS {nm}" for e, nm in zip(n["exprs"], n["names"])) + "]"
    if kind == "Join":
        keys = ", ".join(f"{format_expr(a)} = {format_expr(b)}" for a, b in zip(n["left_keys"], n["right_keys"]))
        return f"type={n.get('type', 'inner')} strategy={n.get('strategy', 'sort')} on [{keys}]"
    if kind == "Aggregate":
        groups = ", ".join(format_expr(g) for g in n.get("group_by", []))
        aggs = ", ".join(
            f"{a['fn']}({'DISTINCT ' if a.get('distinct') else ''}{format_expr(a.get('expr'))}) AS {a['name']}"
            for a in n["aggs"])
        return f"group_by=[{groups}] aggs=[{aggs}]"
    if kind == "Sort":
        return "keys=[" + ", ".join(f"{format_expr(k['expr'])}{' DESC' if k.get('desc') else ''}"
                                    for k in n["keys"]) + "]"
    if kind == "Limit":
        return f"count={n['count']}"
    return ""


def explain(g: PlanGraph, programs: Sequence[OperatorProgram] | None = None) -> str:
    """One line per operator in execution order, then any rule applications."""
    info = {p.op_id: p.info for p in programs or ()}
    lines = []
    for op in topological_order(g):
        ins = ",".join(v.uid for v in op.inputs)
        outs = ",".join(f"{v.uid}:{v.source_name}" for v in op.outputs)
        extra = ""
        if op.id in info and info[op.id].get("method"):
            extra = f" method={info[op.id]['method']}"
        lines.append(f"#{op.id} {op.alias} {_details(op)}{extra} in=[{ins}] out=[{outs}]")
    if g.applied_rules:
        lines.append("rules: " + ", ".join(g.applied_rules))
    return "\n".join(lines)
