"""``tqe`` command line: run plans, generate data, benchmark."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from tqe import kernels
from tqe.bench import bench_plan, filter_speedup
from tqe.datagen import gen_data
from tqe.errors import TqeError
from tqe.executor import compile_query
from tqe.oracle import compare_results, oracle_execute
from tqe.storage import decode_table, load_catalog


def format_rows(columns, rows, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"columns": list(columns), "rows": [list(r) for r in rows]}) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _threads(value) -> None:
    n = value if value is not None else os.environ.get("TQE_THREADS")
    if n not in (None, ""):
        kernels.set_num_threads(int(n))


def cmd_run(args) -> int:
    _threads(args.threads)
    catalog = load_catalog(args.data)
    q = compile_query(args.plan, catalog, optimize=not args.no_optimize)
    if args.explain:
        print(q.explain())
        return 0
    result = q.run(catalog)
    rows = decode_table(result)
    text = format_rows(result.names, rows, args.format)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    t = q.timings
    print(f"compile={t.compile:.6f}s convert={t.convert:.6f}s execute={t.execute:.6f}s", file=sys.stderr)
    if args.oracle_check:
        ok, why = compare_results(rows, oracle_execute(args.plan, catalog))
        if not ok:
            print(f"tqe: error: oracle mismatch: {why}", file=sys.stderr)
            return 1
        print("oracle-check: ok", file=sys.stderr)
    return 0


def cmd_gen(args) -> int:
    counts = gen_data(args.seed, args.out, rows=args.rows, orders=args.orders, customers=args.customers)
    print(", ".join(f"{k}={v}" for k, v in counts.items()), file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    _threads(args.threads)
    catalog = load_catalog(args.data)
    phases = bench_plan(args.plan, catalog, repeat=args.repeat)
    f = filter_speedup(rows=args.rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["metric", "value"])
    for k, v in phases.items():
        w.writerow([f"{k}_median_s", f"{v:.6f}"])
    w.writerow(["filter_rows", f["rows"]])
    w.writerow(["filter_sv_s", f"{f['tensor_s']:.6f}"])
    w.writerow(["filter_loop_s", f"{f['loop_s']:.6f}"])
    w.writerow(["filter_speedup", f"{f['speedup']:.1f}"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tqe", description="Run relational plans as tensor programs.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a plan file")
    r.add_argument("--plan", required=True)
    r.add_argument("--data", required=True, help="directory holding tables.json and CSV files")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--no-optimize", action="store_true")
    r.add_argument("--explain", action="store_true", help="print the rewritten plan and exit")
    r.add_argument("--oracle-check", action="store_true", help="compare against the reference interpreter")
    r.add_argument("--threads", type=int)
    r.add_argument("--output", help="write rows here instead of stdout")
    r.set_defaults(fn=cmd_run)

    g = sub.add_parser("gen", help="generate deterministic tables")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--rows", type=int, default=1000)
    g.add_argument("--orders", type=int, default=150)
    g.add_argument("--customers", type=int, default=100)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    b = sub.add_parser("bench", help="time a plan and the loop-filter baseline")
    b.add_argument("--plan", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--repeat", type=int, default=10)
    b.add_argument("--rows", type=int, default=1_000_000, help="rows for the filter baseline")
    b.add_argument("--threads", type=int)
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (TqeError, OSError, ValueError, KeyError) as e:
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"tqe: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
