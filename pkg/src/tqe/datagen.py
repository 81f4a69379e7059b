"""Deterministic micro-scale TPC-H-like tables.

``customer`` <- ``orders.o_custkey`` and ``orders`` <- ``lineitem.l_orderkey``
are primary-key/foreign-key pairs; every foreign key value exists in its
parent table.  The same seed always yields byte-identical files.
"""
from __future__ import annotations

import csv
import datetime as dt
from pathlib import Path

import numpy as np

from tqe.storage import ColumnMeta, write_catalog

SEGMENTS = ("AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY")
_START = dt.date(1992, 1, 1)
_ORDER_DAYS = (dt.date(1998, 8, 2) - _START).days

CUSTOMER = (
    ColumnMeta("c_custkey", "int64"),
    ColumnMeta("c_name", "string", 18),
    ColumnMeta("c_mktsegment", "string", 10),
    ColumnMeta("c_nationkey", "int32"),
)
ORDERS = (
    ColumnMeta("o_orderkey", "int64"),
    ColumnMeta("o_custkey", "int64"),
    ColumnMeta("o_orderdate", "date"),
    ColumnMeta("o_orderstatus", "string", 1),
    ColumnMeta("o_totalprice", "float64"),
    ColumnMeta("o_shippriority", "int32"),
)
LINEITEM = (
    ColumnMeta("l_orderkey", "int64"),
    ColumnMeta("l_linenumber", "int32"),
    ColumnMeta("l_quantity", "int64"),
    ColumnMeta("l_extendedprice", "float64"),
    ColumnMeta("l_discount", "float64"),
    ColumnMeta("l_tax", "float64"),
    ColumnMeta("l_returnflag", "string", 1),
    ColumnMeta("l_linestatus", "string", 1),
    ColumnMeta("l_shipdate", "date"),
    ColumnMeta("l_commitdate", "date"),
    ColumnMeta("l_receiptdate", "date"),
)
SCHEMAS = {"customer": CUSTOMER, "orders": ORDERS, "lineitem": LINEITEM}


def _day(offset: int) -> str:
    return (_START + dt.timedelta(days=int(offset))).isoformat()


def _money(x: float) -> str:
    return f"{x:.2f}"


def _write(path: Path, schema, columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([m.name for m in schema])
        w.writerows(zip(*columns))


def gen_data(seed: int, out_dir, rows: int = 1000, orders: int = 150, customers: int = 100) -> dict[str, int]:
    """Write ``customer.csv``, ``orders.csv``, ``lineitem.csv`` and ``tables.json``.

    Returns the row count per table.
    """
    if min(customers, orders) < 1 or rows < 0:
        raise ValueError("need at least one customer and one order, and rows >= 0")
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    custkey = np.arange(1, customers + 1)
    _write(out / "customer.csv", CUSTOMER, [
        custkey.tolist(),
        [f"Customer#{k:09d}" for k in custkey],
        [SEGMENTS[i] for i in rng.integers(0, len(SEGMENTS), customers)],
        rng.integers(0, 25, customers).tolist(),
    ])

    orderkey = np.arange(1, orders + 1)
    o_cust = rng.choice(custkey, orders)
    o_day = rng.integers(0, _ORDER_DAYS - 151, orders)
    # lines are attached to orders first so line numbers and status follow from them
    l_order_idx = np.sort(rng.integers(0, orders, rows))
    qty = rng.integers(1, 51, rows)
    price = np.round(qty * rng.uniform(9.0, 105.0, rows), 2)
    disc = rng.integers(0, 11, rows) / 100
    tax = rng.integers(0, 9, rows) / 100
    ship = o_day[l_order_idx] + rng.integers(1, 122, rows)
    commit = o_day[l_order_idx] + rng.integers(30, 91, rows)
    receipt = ship + rng.integers(1, 31, rows)
    cutoff = (dt.date(1995, 6, 17) - _START).days
    linestatus = np.where(ship > cutoff, "O", "F")
    returnflag = np.where(receipt <= cutoff, np.array(["R", "A"])[rng.integers(0, 2, rows)], "N")
    linenumber = np.zeros(rows, dtype=np.int64)
    for i in range(1, rows):
        if l_order_idx[i] == l_order_idx[i - 1]:
            linenumber[i] = linenumber[i - 1] + 1
    linenumber += 1

    total = np.zeros(orders)
    np.add.at(total, l_order_idx, price * (1 - disc) * (1 + tax))
    status = []
    for k in range(orders):
        s = linestatus[l_order_idx == k]
        status.append("O" if s.size and (s == "O").all() else "F" if s.size and (s == "F").all() else "P")
    _write(out / "orders.csv", ORDERS, [
        orderkey.tolist(),
        o_cust.tolist(),
        [_day(d) for d in o_day],
        status,
        [_money(x) for x in total],
        [0] * orders,
    ])

    _write(out / "lineitem.csv", LINEITEM, [
        orderkey[l_order_idx].tolist(),
        linenumber.tolist(),
        qty.tolist(),
        [_money(x) for x in price],
        [f"{x:.2f}" for x in disc],
        [f"{x:.2f}" for x in tax],
        returnflag.tolist(),
        linestatus.tolist(),
        [_day(d) for d in ship],
        [_day(d) for d in commit],
        [_day(d) for d in receipt],
    ])

    write_catalog(out, {name: (f"{name}.csv", schema) for name, schema in SCHEMAS.items()})
    return {"customer": customers, "orders": orders, "lineitem": rows}
