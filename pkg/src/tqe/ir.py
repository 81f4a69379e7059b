"""Operator/variable graph built from a physical-plan file.

A plan file is JSON of the form::

    {"frontend": "TQPLite", "root": <node id>, "nodes": [{"id": ..., "kind": ...}, ...]}

Nodes reference their children by id (``input``, or ``left``/``right`` for
joins).  Parsing walks the plan depth-first from the root and emits operators
in post order, so children always precede parents and operator ids double as
a topological numbering.  Every operator output gets a fresh
:class:`Variable` whose uid, ``v<op id>_<position>``, depends only on the
graph shape.
"""
from __future__ import annotations

import copy
import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

from tqe.errors import PlanError

FRONTEND = "TQPLite"


@dataclass(frozen=True)
class Variable:
    uid: str
    source_name: str


def passthrough_names(node: Mapping, child_names: Sequence[Sequence[str]]) -> list[str]:
    return list(child_names[0])


@dataclass(frozen=True)
class OperatorSpec:
    alias: str
    planner_factory: Callable
    child_keys: tuple[str, ...] = ("input",)
    output_names: Callable[[Mapping, Sequence[Sequence[str]]], list[str]] = passthrough_names


class OperatorRegistry:
    """Alias -> operator description.  Written at start-up, read afterwards."""

    def __init__(self):
        self._specs: dict[str, OperatorSpec] = {}

    def register(self, alias, planner_factory, *, child_keys=("input",), output_names=None):
        if alias in self._specs:
            raise PlanError(f"operator {alias} already registered")
        self._specs[alias] = OperatorSpec(
            alias, planner_factory, tuple(child_keys), output_names or passthrough_names)

    def get(self, alias: str) -> OperatorSpec:
        try:
            return self._specs[alias]
        except KeyError:
            raise PlanError(f"unsupported operator {alias}") from None

    def __contains__(self, alias) -> bool:
        return alias in self._specs

    def aliases(self) -> list[str]:
        return sorted(self._specs)

    def copy(self) -> "OperatorRegistry":
        r = OperatorRegistry()
        r._specs = dict(self._specs)
        return r


REGISTRY = OperatorRegistry()


def register_operator(alias, planner_factory, *, child_keys=("input",), output_names=None,
                      registry: OperatorRegistry | None = None) -> None:
    (registry or REGISTRY).register(
        alias, planner_factory, child_keys=child_keys, output_names=output_names)


def _default_registry(registry):
    if registry is not None:
        return registry
    import tqe.operators  # noqa: F401  (registers the built-in operators)
    return REGISTRY


@dataclass(frozen=True)
class IrOperator:
    id: int
    alias: str
    inputs: tuple[Variable, ...]
    outputs: tuple[Variable, ...]
    frontend_ref: Mapping = field(compare=False)
    children: tuple[int, ...] = ()
    frontend: str = FRONTEND

    @property
    def kind(self) -> str:
        return self.alias[len(self.frontend):]

    @property
    def output_names(self) -> list[str]:
        return [v.source_name for v in self.outputs]

    @property
    def input_names(self) -> list[str]:
        return [v.source_name for v in self.inputs]


class PlanGraph:
    """Immutable IR graph; operators are stored in post order."""

    def __init__(self, operators: Sequence[IrOperator], root: int, frontend: str = FRONTEND,
                 applied_rules: Sequence[str] = (), registry: OperatorRegistry | None = None):
        self.operators = tuple(operators)
        self.root = root
        self.frontend = frontend
        self.applied_rules = tuple(applied_rules)
        self.registry = registry

    def __len__(self) -> int:
        return len(self.operators)

    def __iter__(self) -> Iterator[IrOperator]:
        return iter(self.operators)

    def op(self, op_id: int) -> IrOperator:
        return self.operators[op_id]

    @property
    def root_op(self) -> IrOperator:
        return self.operators[self.root]

    @property
    def variables(self) -> list[Variable]:
        return [v for op in self.operators for v in op.outputs]

    def consumers(self, op_id: int) -> list[int]:
        """Ids of operators reading any output of ``op_id`` (each listed once)."""
        return [op.id for op in self.operators if op_id in op.children]

    def producer(self, uid: str) -> IrOperator:
        for op in self.operators:
            if any(v.uid == uid for v in op.outputs):
                return op
        raise KeyError(uid)

    def dependency_chain(self) -> dict[int, set[int]]:
        """Producer ids per operator, recomputed from the variable schemas."""
        owner = {v.uid: op.id for op in self.operators for v in op.outputs}
        return {op.id: {owner[v.uid] for v in op.inputs} for op in self.operators}

    def node_map(self) -> dict[int, dict]:
        """Editable plan nodes keyed by operator id (children refer to ids)."""
        reg = _default_registry(self.registry)
        nodes = {}
        for op in self.operators:
            node = copy.deepcopy(dict(op.frontend_ref))
            node["id"] = op.id
            for key, child in zip(reg.get(op.alias).child_keys, op.children):
                node[key] = child
            nodes[op.id] = node
        return nodes

    def to_plan(self) -> dict:
        nodes = self.node_map()
        return {"frontend": self.frontend, "root": self.root,
                "nodes": [nodes[i] for i in sorted(nodes)]}

    def structure(self) -> str:
        """Canonical serialization, equal for structurally identical graphs."""
        return json.dumps(self.to_plan(), sort_keys=True)

    def with_rules(self, rules: Sequence[str]) -> "PlanGraph":
        return PlanGraph(self.operators, self.root, self.frontend, rules, self.registry)


def build_graph(nodes: Mapping, root, frontend: str = FRONTEND,
                registry: OperatorRegistry | None = None,
                applied_rules: Sequence[str] = ()) -> PlanGraph:
    """Post-order DFS over ``nodes`` (id -> node dict) starting at ``root``."""
    reg = _default_registry(registry)
    if root not in nodes:
        raise PlanError(f"root {root!r} is not a node id")

    operators: list[IrOperator] = []
    assigned: dict = {}
    on_stack: set = set()

    def visit(node_id, path):
        if node_id in assigned:
            return assigned[node_id]
        if node_id in on_stack:
            raise PlanError(f"cycle through node {node_id!r}")
        if node_id not in nodes:
            raise PlanError(f"dangling node reference {node_id!r} (from {path!r})")
        node = nodes[node_id]
        kind = node.get("kind")
        if not isinstance(kind, str):
            raise PlanError(f"node {node_id!r} has no kind")
        spec = reg.get(frontend + kind)
        on_stack.add(node_id)
        kids = []
        for key in spec.child_keys:
            if key not in node:
                raise PlanError(f"node {node_id!r} ({kind}) is missing {key!r}")
            kids.append(visit(node[key], node_id))
        on_stack.discard(node_id)

        op_id = len(operators)
        inputs = tuple(v for k in kids for v in operators[k].outputs)
        child_names = [operators[k].output_names for k in kids]
        try:
            names = spec.output_names(node, child_names)
        except (KeyError, TypeError) as e:
            raise PlanError(f"node {node_id!r} ({kind}) is malformed: {e}") from None
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise PlanError(f"node {node_id!r} ({kind}) produces duplicate columns {dup}")
        ref = {k: copy.deepcopy(v) for k, v in node.items() if k not in spec.child_keys}
        outputs = tuple(Variable(f"v{op_id}_{i}", n) for i, n in enumerate(names))
        operators.append(IrOperator(op_id, spec.alias, inputs, outputs, ref, tuple(kids), frontend))
        assigned[node_id] = op_id
        return op_id

    root_id = visit(root, None)
    return PlanGraph(operators, root_id, frontend, applied_rules, registry)


def parse_plan(plan, registry: OperatorRegistry | None = None) -> PlanGraph:
    """Build the IR graph from a plan file path, JSON text, or parsed dict."""
    if isinstance(plan, (str, Path)) and not str(plan).lstrip().startswith("{"):
        try:
            plan = json.loads(Path(plan).read_text())
        except FileNotFoundError:
            raise PlanError(f"plan file {plan} not found") from None
        except json.JSONDecodeError as e:
            raise PlanError(f"plan file {plan}: {e}") from None
    elif isinstance(plan, str):
        plan = json.loads(plan)
    if not isinstance(plan, Mapping) or "nodes" not in plan or "root" not in plan:
        raise PlanError("plan must be an object with 'root' and 'nodes'")
    frontend = plan.get("frontend", FRONTEND)
    nodes = {}
    for node in plan["nodes"]:
        if "id" not in node:
            raise PlanError(f"plan node without id: {node!r}")
        if node["id"] in nodes:
            raise PlanError(f"duplicate node id {node['id']!r}")
        nodes[node["id"]] = node
    return build_graph(nodes, plan["root"], frontend, registry)


def topological_order(g: PlanGraph, reverse_ties: bool = False) -> list[IrOperator]:
    """Producers before consumers; ties broken by operator id (or reversed id)."""
    deps = g.dependency_chain()
    pending = {i: len(d) for i, d in deps.items()}
    users: dict[int, list[int]] = {i: [] for i in deps}
    for i, d in deps.items():
        for p in d:
            users[p].append(i)
    sign = -1 if reverse_ties else 1
    ready = [sign * i for i, c in pending.items() if c == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = sign * heapq.heappop(ready)
        order.append(g.op(i))
        for u in users[i]:
            pending[u] -= 1
            if pending[u] == 0:
                heapq.heappush(ready, sign * u)
    if len(order) != len(g):
        raise PlanError("plan graph has a cycle")
    return order
