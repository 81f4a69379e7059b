"""Rule-based IR-to-IR rewriting.

Rules are (matcher, action) pairs grouped into two stages.  ``canonicalize``
removes frontend quirks the planner cannot handle and always runs;
``optimize`` rewrites for speed.  Within a stage each rule, in registration
order, is applied until it no longer matches anywhere; the stage repeats until
a full pass changes nothing.

Shipped rules:

* ``count_star`` (canonicalize): a ``count(*)`` over a zero-column projection
  becomes a count over the narrowest column available.
* ``project_into_filter``: a column selection above a filter moves below it;
  other projections above a filter get a narrowing projection under it.
* ``project_into_scan``: a column selection directly over a scan becomes the
  scan's column list.
* ``merge_aggregate_project``: renames above an aggregate fold into it.
* ``dead_columns``: scan columns and projection outputs nobody reads are
  dropped.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from tqe.errors import RewriteError
from tqe.ir import IrOperator, PlanGraph, build_graph, topological_order
from tqe.operators.expressions import expr_columns

STAGES = ("canonicalize", "optimize")


@dataclass
class RewriteContext:
    """Optional catalog (table -> column metas) used to rank column widths."""

    catalog: Mapping[str, Sequence] = field(default_factory=dict)


@dataclass(frozen=True)
class RewriteRule:
    name: str
    stage: str
    matcher: Callable[[PlanGraph, IrOperator, RewriteContext], bool]
    action: Callable[[PlanGraph, IrOperator, RewriteContext], PlanGraph]


# -- helpers ---------------------------------------------------------------------

def _expr(e):
    return {"kind": "col", "name": e} if isinstance(e, str) else e


def _selection(node) -> list[str] | None:
    """Column names if the projection only selects columns without renaming."""
    exprs = [_expr(e) for e in node.get("exprs", [])]
    if not exprs or any(e.get("kind") != "col" for e in exprs):
        return None
    cols = [e["name"] for e in exprs]
    if cols != list(node["names"]) or len(set(cols)) != len(cols):
        return None
    return cols


def _child(g: PlanGraph, op: IrOperator, i: int = 0) -> IrOperator:
    return g.op(op.children[i])


def _sole_consumer(g: PlanGraph, producer: IrOperator) -> bool:
    return producer.id != g.root and len(g.consumers(producer.id)) == 1


def _rebuild(g: PlanGraph, nodes: dict, root: int | None = None) -> PlanGraph:
    return build_graph(nodes, g.root if root is None else root, g.frontend, g.registry, g.applied_rules)


def _widths(g: PlanGraph, ctx: RewriteContext) -> dict[str, int]:
    out = {}
    for op in g:
        if op.kind == "Scan" and op.frontend_ref.get("table") in ctx.catalog:
            for m in ctx.catalog[op.frontend_ref["table"]]:
                if m.logical_type == "string":
                    out[m.name] = m.max_len or (1 << 30)
    return out


def _narrowest(names: Sequence[str], widths: Mapping[str, int]) -> str:
    return min(names, key=lambda n: widths.get(n, 1))  # min keeps the first on ties


def required_columns(g: PlanGraph) -> dict[int, set[str]]:
    """Names each operator's consumers read from it (root: all outputs)."""
    req: dict[int, set[str]] = {op.id: set() for op in g}
    req[g.root] = set(g.root_op.output_names)
    for op in sorted(g, key=lambda o: -o.id):
        need = req[op.id]
        node = op.frontend_ref
        kids = [g.op(c) for c in op.children]
        kind = op.kind
        if kind == "Scan":
            continue
        if kind == "Filter":
            wants = [need | expr_columns(node["predicate"])]
        elif kind == "Sort":
            wants = [need | set().union(*(expr_columns(_expr(k["expr"])) for k in node["keys"]))]
        elif kind == "Limit":
            wants = [set(need)]
        elif kind == "Project":
            used = set()
            live = [e for e, n in zip(node["exprs"], node["names"]) if n in need]
            # dead_columns keeps the first output when nothing is read
            for e in live or node["exprs"][:1]:
                used |= expr_columns(_expr(e))
            wants = [used]
        elif kind == "Aggregate":
            used = set()
            for e in node.get("group_by", []):
                used |= expr_columns(_expr(e))
            for a in node["aggs"]:
                used |= expr_columns(_expr(a.get("expr")) if a.get("expr") is not None else None)
            wants = [used]
        elif kind == "Join":
            left, right = kids
            lkeys = set().union(*(expr_columns(_expr(k)) for k in node["left_keys"]))
            rkeys = set().union(*(expr_columns(_expr(k)) for k in node["right_keys"]))
            wants = [(need & set(left.output_names)) | lkeys]
            if node.get("type", "inner") in ("left_semi", "left_anti"):
                wants.append(rkeys)
            else:
                wants.append((need & set(right.output_names)) | rkeys)
        else:
            wants = [set(k.output_names) for k in kids]
        for k, w in zip(kids, wants):
            req[k.id] |= w
    return req


# -- count(*) --------------------------------------------------------------------

def _is_count_star(a) -> bool:
    return a["fn"] == "count" and a.get("expr") is None


def _count_star_match(g, op, ctx):
    if op.kind != "Aggregate":
        return False
    child = _child(g, op)
    if child.kind == "Project" and not child.frontend_ref["exprs"]:
        return True
    return any(_is_count_star(a) for a in op.frontend_ref["aggs"])


def _count_star_action(g, op, ctx):
    nodes = g.node_map()
    widths = _widths(g, ctx)
    child = _child(g, op)
    if child.kind == "Project" and not child.frontend_ref["exprs"]:
        if not child.children or not _child(g, child).output_names:
            raise RewriteError("count(*) projection has no input column to count")
        c = _narrowest(_child(g, child).output_names, widths)
        nodes[child.id]["exprs"] = [{"kind": "col", "name": c}]
        nodes[child.id]["names"] = [c]
        available = [c]
    else:
        available = child.output_names
    if not available:
        raise RewriteError("count(*) has no input column to count")
    c = _narrowest(available, widths)
    for a in nodes[op.id]["aggs"]:
        if _is_count_star(a):
            a["expr"] = {"kind": "col", "name": c}
    return _rebuild(g, nodes)


# -- projection into filter --------------------------------------------------------

def _filter_push_plan(g, op):
    """(mode, payload) when a projection over a filter can move, else None."""
    if op.kind != "Project" or not op.frontend_ref["exprs"]:
        return None
    flt = _child(g, op)
    if flt.kind != "Filter" or not _sole_consumer(g, flt):
        return None
    pred_cols = expr_columns(flt.frontend_ref["predicate"])
    sel = _selection(op.frontend_ref)
    if sel is not None and pred_cols <= set(sel):
        return "swap", None
    source = _child(g, flt)
    needed = set(pred_cols)
    for e in op.frontend_ref["exprs"]:
        needed |= expr_columns(_expr(e))
    available = source.output_names
    if needed and needed < set(available):
        return "narrow", [n for n in available if n in needed]
    return None


def _filter_push_match(g, op, ctx):
    return _filter_push_plan(g, op) is not None


def _filter_push_action(g, op, ctx):
    mode, cols = _filter_push_plan(g, op)
    nodes = g.node_map()
    flt = _child(g, op)
    if mode == "swap":
        project_node, filter_node = nodes[op.id], nodes[flt.id]
        nodes[op.id] = {**filter_node, "id": op.id, "input": flt.id}
        nodes[flt.id] = {**project_node, "id": flt.id, "input": filter_node["input"]}
    else:
        new_id = max(nodes) + 1
        nodes[new_id] = {"id": new_id, "kind": "Project", "input": nodes[flt.id]["input"],
                         "exprs": [{"kind": "col", "name": c} for c in cols], "names": list(cols)}
        nodes[flt.id]["input"] = new_id
    return _rebuild(g, nodes)


# -- projection into scan ---------------------------------------------------------

def _scan_push_match(g, op, ctx):
    if op.kind != "Project" or _selection(op.frontend_ref) is None:
        return False
    scan = _child(g, op)
    return scan.kind == "Scan" and _sole_consumer(g, scan)


def _scan_push_action(g, op, ctx):
    nodes = g.node_map()
    scan = _child(g, op)
    nodes[op.id] = {**nodes[scan.id], "id": op.id, "columns": _selection(op.frontend_ref)}
    return _rebuild(g, nodes)


# -- aggregate / projection merge ----------------------------------------------------

def _merge_plan(g, op):
    if op.kind != "Project" or not op.frontend_ref["exprs"]:
        return None
    agg = _child(g, op)
    if agg.kind != "Aggregate" or not _sole_consumer(g, agg):
        return None
    exprs = [_expr(e) for e in op.frontend_ref["exprs"]]
    if any(e.get("kind") != "col" for e in exprs):
        return None
    refs = [e["name"] for e in exprs]
    n_groups = len(agg.output_names) - len(agg.frontend_ref["aggs"])
    groups = agg.output_names[:n_groups]
    agg_names = agg.output_names[n_groups:]
    if refs[:n_groups] != groups:
        return None
    picked = []
    for r in refs[n_groups:]:
        if r not in agg_names:
            return None
        picked.append(agg_names.index(r))
    if picked != sorted(set(picked)):
        return None
    return picked


def _merge_match(g, op, ctx):
    return _merge_plan(g, op) is not None


def _merge_action(g, op, ctx):
    picked = _merge_plan(g, op)
    nodes = g.node_map()
    agg = _child(g, op)
    names = list(op.frontend_ref["names"])
    n_groups = len(agg.output_names) - len(agg.frontend_ref["aggs"])
    merged = dict(nodes[agg.id])
    merged["id"] = op.id
    merged["group_names"] = names[:n_groups]
    aggs = merged["aggs"]
    merged["aggs"] = [{**aggs[i], "name": n} for i, n in zip(picked, names[n_groups:])]
    nodes[op.id] = merged
    return _rebuild(g, nodes)


# -- dead columns ---------------------------------------------------------------------

def _dead_plan(g, op, req):
    if op.id == g.root:
        return None
    need = req[op.id]
    node = op.frontend_ref
    if op.kind == "Scan":
        cols = list(node["columns"])
        keep = [c for c in cols if c in need] or cols[:1]
        return keep if len(keep) < len(cols) else None
    if op.kind == "Project" and node["exprs"]:
        names = list(node["names"])
        keep = [i for i, n in enumerate(names) if n in need] or [0]
        return keep if len(keep) < len(names) else None
    return None


def _dead_match(g, op, ctx):
    if op.kind not in ("Scan", "Project"):
        return False
    return _dead_plan(g, op, required_columns(g)) is not None


def _dead_action(g, op, ctx):
    keep = _dead_plan(g, op, required_columns(g))
    nodes = g.node_map()
    node = nodes[op.id]
    if op.kind == "Scan":
        node["columns"] = keep
    else:
        node["exprs"] = [node["exprs"][i] for i in keep]
        node["names"] = [node["names"][i] for i in keep]
    return _rebuild(g, nodes)


RULES: list[RewriteRule] = [
    RewriteRule("count_star", "canonicalize", _count_star_match, _count_star_action),
    RewriteRule("project_into_filter", "optimize", _filter_push_match, _filter_push_action),
    RewriteRule("project_into_scan", "optimize", _scan_push_match, _scan_push_action),
    RewriteRule("merge_aggregate_project", "optimize", _merge_match, _merge_action),
    RewriteRule("dead_columns", "optimize", _dead_match, _dead_action),
]


def apply_rules(g: PlanGraph, stage: str, catalog: Mapping | None = None,
                rules: Sequence[RewriteRule] | None = None) -> PlanGraph:
    """Run one stage to fixpoint; applications are recorded on the graph."""
    if stage not in STAGES:
        raise RewriteError(f"unknown rewrite stage {stage!r}")
    ctx = RewriteContext(dict(catalog or {}))
    active = [r for r in (RULES if rules is None else rules) if r.stage == stage]
    cap = 10 * max(len(g), 1)
    applied = list(g.applied_rules)
    steps = 0
    changed = True
    while changed:
        changed = False
        for rule in active:
            while True:
                hit = next((op for op in topological_order(g) if rule.matcher(g, op, ctx)), None)
                if hit is None:
                    break
                steps += 1
                if steps > cap:
                    raise RewriteError("rewrite did not converge")
                applied.append(f"{rule.name}@{hit.id}")
                g = rule.action(g, hit, ctx).with_rules(applied)
                changed = True
    return g.with_rules(applied)


def canonicalize_count_star(g: PlanGraph, catalog: Mapping | None = None) -> PlanGraph:
    return apply_rules(g, "canonicalize", catalog, [r for r in RULES if r.name == "count_star"])


def rewrite(g: PlanGraph, optimize: bool = True, catalog: Mapping | None = None) -> PlanGraph:
    g = apply_rules(g, "canonicalize", catalog)
    if optimize:
        g = apply_rules(g, "optimize", catalog)
    return g
