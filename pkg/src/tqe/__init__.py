"""Relational query execution expressed as dense-tensor programs."""
from tqe import operators  # registers the built-in operators
from tqe.executor import compile_query, execute, explain, plan_to_programs, run_query
from tqe.ir import parse_plan
from tqe.kernels import Tensor
from tqe.oracle import compare_results, oracle_execute
from tqe.rewrite import rewrite
from tqe.storage import Table, load_catalog, make_table

__version__ = "0.1.0"

__all__ = [
    "Table", "Tensor", "compare_results", "compile_query", "execute", "explain",
    "load_catalog", "make_table", "operators", "oracle_execute", "parse_plan",
    "plan_to_programs", "rewrite", "run_query",
]
