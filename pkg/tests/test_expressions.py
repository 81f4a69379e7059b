import numpy as np
import pytest

from _plangen import call, col, lit
from tqe.errors import CompileError
from tqe.kernels import Tensor
from tqe.operators.expressions import compile_expression, expr_columns
from tqe.storage import ColumnMeta, encode_column


def s(values, width=None):
    return encode_column(values, ColumnMeta("_", "string", width or max(len(v.encode()) for v in values)))


def d(values):
    return encode_column(values, ColumnMeta("_", "date"))


def run(expr, schema, cols):
    return compile_expression(expr, schema)(cols).to_list()


def test_string_eq_and_date_gt():
    expr = call("and", call("eq", col("o_orderstatus"), lit("F")),
                call("gt", col("l_receiptdate"), col("l_commitdate")))
    schema = {"o_orderstatus": "string", "l_receiptdate": "date", "l_commitdate": "date"}
    cols = {"o_orderstatus": s(["F", "O", "F"], 1),
            "l_receiptdate": d(["1994-01-05", "1994-01-05", "1994-01-01"]),
            "l_commitdate": d(["1994-01-01", "1994-01-01", "1994-01-02"])}
    ce = compile_expression(expr, schema)
    assert ce.logical_type == "bool"
    assert ce(cols).to_list() == [True, False, False]


def test_discounted_price():
    expr = call("mul", col("l_extendedprice"), call("sub", lit(1), col("l_discount")))
    out = run(expr, {"l_extendedprice": "float64", "l_discount": "float64"},
              {"l_extendedprice": Tensor([100.0], "float64"), "l_discount": Tensor([0.1], "float64")})
    assert out == pytest.approx([90.0])


def test_in_list():
    assert run(call("in", col("x"), lit(1), lit(3)), {"x": "int64"},
               {"x": Tensor([1, 2, 3], "int64")}) == [True, False, True]


def test_string_in_list():
    assert run(call("in", col("x"), lit("ab"), lit("b")), {"x": "string"},
               {"x": s(["ab", "abc", "b", ""])}) == [True, False, True, False]


def test_literal_padded_to_column_width():
    assert run(call("eq", col("x"), lit("F")), {"x": "string"}, {"x": s(["F", "FF"], 4)}) == [True, False]


def test_literal_wider_than_column_never_matches():
    assert run(call("eq", col("x"), lit("abcdef")), {"x": "string"}, {"x": s(["abc"], 3)}) == [False]


def test_string_ordering_is_bytewise():
    vals = ["", "a", "ab", "b", "Zeta"]
    got = run(call("lt", col("x"), lit("ab")), {"x": "string"}, {"x": s(vals)})
    assert got == [v.encode() < b"ab" for v in vals]


@pytest.mark.parametrize("pattern,expect", [
    ("help", [False, True, False, False]),
    ("he%", [True, True, False, False]),
    ("%lp", [False, True, False, False]),
    ("%el%", [True, True, False, True]),
    ("%", [True, True, True, True]),
])
def test_like_patterns(pattern, expect):
    vals = ["hello", "help", "ab", "xelx"]
    assert run(call("like", col("x"), lit(pattern)), {"x": "string"}, {"x": s(vals)}) == expect


@pytest.mark.parametrize("pattern", ["a%b", "a_c", "%a%b%"])
def test_unsupported_like(pattern):
    with pytest.raises(CompileError, match="unsupported LIKE pattern"):
        compile_expression(call("like", col("x"), lit(pattern)), {"x": "string"})


def test_case_expression():
    expr = {"kind": "call", "fn": "case",
            "branches": [[call("lt", col("x"), lit(2)), lit(10)], [call("lt", col("x"), lit(3)), lit(20)]],
            "else": lit(30)}
    assert run(expr, {"x": "int64"}, {"x": Tensor([1, 2, 3], "int64")}) == [10, 20, 30]


def test_year_and_month():
    dates = ["1970-01-01", "1992-02-29", "1998-12-31", "1969-12-31", "2000-03-01"]
    cols = {"d": d(dates)}
    assert run(call("year", col("d")), {"d": "date"}, cols) == [int(x[:4]) for x in dates]
    assert run(call("month", col("d")), {"d": "date"}, cols) == [int(x[5:7]) for x in dates]


def test_date_literal_comparison():
    expr = call("le", col("d"), lit("1998-09-02", "date"))
    assert run(expr, {"d": "date"}, {"d": d(["1998-09-02", "1998-09-03"])}) == [True, False]


def test_division_is_float():
    out = compile_expression(call("div", col("a"), lit(2)), {"a": "int64"})
    assert out.logical_type == "float64"
    assert out({"a": Tensor([3, 4], "int64")}).to_list() == [1.5, 2.0]


def test_constant_expression_broadcasts():
    out = compile_expression(lit(7), {})({"a": Tensor([1, 2, 3], "int64")})
    assert out.to_list() == [7, 7, 7]


def test_not_or():
    expr = call("or", call("not", col("b")), call("eq", col("a"), lit(0)))
    cols = {"a": Tensor([0, 1, 1], "int64"), "b": Tensor([True, True, False], "bool")}
    assert run(expr, {"a": "int64", "b": "bool"}, cols) == [True, False, True]


def test_mixed_int_float_arithmetic():
    ce = compile_expression(call("add", col("i"), col("f")), {"i": "int32", "f": "float64"})
    assert ce.logical_type == "float64"
    assert ce({"i": Tensor([1], "int32"), "f": Tensor([0.5], "float64")}).to_list() == [1.5]


def test_no_host_loop_dependency_on_rows():
    # the same compiled closure serves any row count
    ce = compile_expression(call("gt", col("x"), lit(5)), {"x": "int64"})
    big = Tensor(np.arange(10_000).reshape(-1, 1), "int64")
    assert sum(ce({"x": big}).to_list()) == 10_000 - 6


def test_unknown_column_and_function():
    with pytest.raises(CompileError, match="unknown column"):
        compile_expression(col("nope"), {"x": "int64"})
    with pytest.raises(CompileError, match="unknown function"):
        compile_expression(call("pow", col("x"), lit(2)), {"x": "int64"})


def test_type_mismatch():
    with pytest.raises(CompileError):
        compile_expression(call("eq", col("s"), lit(1)), {"s": "string"})
    with pytest.raises(CompileError):
        compile_expression(call("add", col("s"), lit(1)), {"s": "string"})
    with pytest.raises(CompileError):
        compile_expression(call("and", col("x"), lit(True)), {"x": "int64"})


def test_expr_columns():
    expr = call("and", call("eq", col("a"), lit(1)), call("lt", col("b"), col("a")))
    assert expr_columns(expr) == {"a", "b"}
