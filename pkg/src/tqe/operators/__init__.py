"""Relational operators implemented as tensor programs."""
from tqe.ir import REGISTRY, FRONTEND
from tqe.operators.aggregate import AggSpec, groupby_aggregate
from tqe.operators.expressions import CompiledExpression, compile_expression
from tqe.operators.filters import filter_bm, filter_sv
from tqe.operators.joins import (
    hash_join_inner, inner_join, left_outer_join, pkfk_join, semi_anti_join,
    sort_join_indices, sort_join_inner,
)
from tqe.operators.ordering import limit, project, sort_operator
from tqe.operators.planners import Planned, PlanningContext, register_builtins

if FRONTEND + "Scan" not in REGISTRY:
    register_builtins()

__all__ = [
    "AggSpec", "CompiledExpression", "Planned", "PlanningContext",
    "compile_expression", "filter_bm", "filter_sv", "groupby_aggregate",
    "hash_join_inner", "inner_join", "left_outer_join", "limit", "pkfk_join",
    "project", "semi_anti_join", "sort_join_indices", "sort_join_inner",
    "sort_operator",
]
