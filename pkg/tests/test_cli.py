import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from tqe.bench import loop_filter, measured_runs, median_of_measured
from tqe.cli import main
from tqe.datagen import gen_data
from tqe.oracle import compare_results, oracle_execute
from tqe.plans import plan_path
from tqe.storage import load_catalog


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_q6_prints_scalar_row(capsys, tpch_dir):
    code, out, err = run_cli(capsys, "run", "--plan", str(plan_path("q6")), "--data", str(tpch_dir))
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["revenue"]
    assert len(rows) == 2
    got = float(rows[1][0])
    want = oracle_execute(plan_path("q6"), load_catalog(tpch_dir)).rows[0][0]
    assert got == pytest.approx(want, rel=1e-9)
    assert "compile=" in err and "convert=" in err and "execute=" in err


def test_run_json_and_oracle_check(capsys, tpch_dir):
    code, out, err = run_cli(capsys, "run", "--plan", str(plan_path("q1")), "--data", str(tpch_dir),
                             "--format", "json", "--oracle-check")
    assert code == 0
    doc = json.loads(out)
    assert doc["columns"][:2] == ["l_returnflag", "l_linestatus"]
    ok, _ = compare_results([tuple(r) for r in doc["rows"]],
                            oracle_execute(plan_path("q1"), load_catalog(tpch_dir)))
    assert ok
    assert "oracle-check: ok" in err


def test_explain_runs_nothing(capsys, tpch_dir):
    code, out, err = run_cli(capsys, "run", "--plan", str(plan_path("q6")), "--data", str(tpch_dir),
                             "--explain")
    assert code == 0
    assert out.splitlines()[0].startswith("#0 TQPLiteScan")
    assert "compile=" not in err
    assert "revenue" not in out.splitlines()[0]


def test_no_optimize_same_rows(capsys, tpch_dir):
    _, a, _ = run_cli(capsys, "run", "--plan", str(plan_path("q3")), "--data", str(tpch_dir))
    _, b, _ = run_cli(capsys, "run", "--plan", str(plan_path("q3")), "--data", str(tpch_dir), "--no-optimize")
    assert a == b


def test_output_file(capsys, tpch_dir, tmp_path):
    target = tmp_path / "q6.csv"
    code, out, _ = run_cli(capsys, "run", "--plan", str(plan_path("q6")), "--data", str(tpch_dir),
                           "--output", str(target))
    assert code == 0 and out == ""
    assert target.read_text().startswith("revenue\n")


def test_missing_table_file_exits_1(capsys, tmp_path):
    gen_data(1, tmp_path, rows=20, orders=5, customers=3)
    (tmp_path / "lineitem.csv").unlink()
    code, out, err = run_cli(capsys, "run", "--plan", str(plan_path("q6")), "--data", str(tmp_path))
    assert code == 1
    assert err.startswith("tqe: error:") and err.count("\n") == 1


def test_missing_plan_exits_1(capsys, tpch_dir):
    code, _, err = run_cli(capsys, "run", "--plan", "/nonexistent.json", "--data", str(tpch_dir))
    assert code == 1 and "not found" in err


def test_gen_is_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(capsys, "gen", "--seed", "7", "--out", str(a))[0] == 0
    assert run_cli(capsys, "gen", "--seed", "7", "--out", str(b))[0] == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["customer.csv", "lineitem.csv", "orders.csv", "tables.json"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    c = tmp_path / "c"
    gen_data(8, c)
    assert (c / "lineitem.csv").read_bytes() != (a / "lineitem.csv").read_bytes()


def test_gen_row_counts_and_foreign_keys(tmp_path):
    counts = gen_data(3, tmp_path, rows=500, orders=60, customers=25)
    assert counts == {"lineitem": 500, "orders": 60, "customer": 25}
    cat = load_catalog(tmp_path)
    cust = cat.sources["customer"].load(["c_custkey"]).column("c_custkey").to_list()
    orders = cat.sources["orders"].load(["o_orderkey", "o_custkey"])
    items = cat.sources["lineitem"].load(["l_orderkey"]).column("l_orderkey").to_list()
    assert len(cust) == 25 and len(set(cust)) == 25
    okeys = orders.column("o_orderkey").to_list()
    assert len(okeys) == 60 and len(set(okeys)) == 60
    assert set(orders.column("o_custkey").to_list()) <= set(cust)
    assert len(items) == 500 and set(items) <= set(okeys)


def test_bench_output_is_csv(capsys, tpch_dir):
    code, out, _ = run_cli(capsys, "bench", "--plan", str(plan_path("q6")), "--data", str(tpch_dir),
                           "--repeat", "2", "--rows", "20000")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["metric", "value"]
    metrics = {k: float(v) for k, v in rows[1:]}
    assert {"compile_median_s", "convert_median_s", "execute_median_s", "filter_speedup"} <= set(metrics)
    assert metrics["filter_rows"] == 20000


def test_median_of_last_half():
    assert measured_runs(10) == slice(5, 10)
    samples = [100.0, 90.0, 80.0, 70.0, 60.0, 5.0, 1.0, 3.0, 2.0, 4.0]
    assert median_of_measured(samples) == 3.0
    assert median_of_measured([7.0]) == 7.0
    with pytest.raises(ValueError):
        measured_runs(0)


def test_loop_filter_baseline():
    import numpy as np
    v = np.array([[10.0], [24.0], [30.0], [5.0]])
    assert loop_filter(v, 24).ravel().tolist() == [10.0, 5.0]


def test_threads_env_fallback(tpch_dir, tmp_path):
    env = {"TQE_THREADS": "3", "PATH": "/usr/bin:/bin"}
    out = tmp_path / "q1.csv"
    proc = subprocess.run([sys.executable, "-m", "tqe.cli", "run", "--plan", str(plan_path("q1")),
                           "--data", str(tpch_dir), "--output", str(out)],
                          capture_output=True, text=True, env={**env, "PYTHONPATH": str(Path(__file__).parents[1] / "src")})
    assert proc.returncode == 0, proc.stderr
    assert out.read_text().splitlines()[0].startswith("l_returnflag,l_linestatus")
