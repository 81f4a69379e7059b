# coding: utf-8

# # Rewrites shrink what gets converted
#
# The feeder converts only the CSV columns a plan reads.  Projection pushdown
# moves a narrow projection under the filter and into the scan, so fewer
# columns are parsed and encoded.

# %%

import tempfile

from tqe import compile_query
from tqe.datagen import gen_data
from tqe.plans import plan_path
from tqe.storage import decode_table, load_catalog

data = tempfile.mkdtemp(prefix="tqe-demo-")
gen_data(42, data, rows=20_000, orders=3_000, customers=2_000)
catalog = load_catalog(data)

# %% [markdown]
# The plan scans all eleven lineitem columns, filters on quantity, and keeps two.

# %%

plain = compile_query(plan_path("pushdown"), catalog, optimize=False)
print(plain.explain())
print("encoded columns:", plain.feeder.encoded_columns)

# %%

optimized = compile_query(plan_path("pushdown"), catalog)
print(optimized.explain())
print("encoded columns:", optimized.feeder.encoded_columns)

# %% [markdown]
# Same rows, less conversion work.

# %%

a = decode_table(plain.run(catalog))
b = decode_table(optimized.run(catalog))
print("identical results:", a == b)
print(f"convert time: {plain.timings.convert * 1e3:.1f} ms -> {optimized.timings.convert * 1e3:.1f} ms")

# %% [markdown]
# ``count(*)`` is always canonicalized, even with optimization off: the empty
# projection under the aggregate is rewired to the narrowest available column.

# %%

plan = {"frontend": "TQPLite", "root": 3, "nodes": [
    {"id": 1, "kind": "Scan", "table": "customer", "columns": ["c_name", "c_mktsegment", "c_custkey"]},
    {"id": 2, "kind": "Project", "input": 1, "exprs": [], "names": []},
    {"id": 3, "kind": "Aggregate", "input": 2, "aggs": [{"fn": "count", "name": "n"}]},
]}
q = compile_query(plan, catalog, optimize=False)
print(q.explain())
print(decode_table(q.run(catalog)))
