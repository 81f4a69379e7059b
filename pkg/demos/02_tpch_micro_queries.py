# coding: utf-8

# # TPC-H-shaped queries on generated data
#
# Generate a small deterministic dataset, run the bundled Q1, Q6 and Q3 plans,
# and check each result against the row-at-a-time reference interpreter.

# %%

import tempfile

from tqe import compile_query, compare_results, oracle_execute
from tqe.datagen import gen_data
from tqe.plans import plan_path
from tqe.storage import decode_table, load_catalog

data = tempfile.mkdtemp(prefix="tqe-demo-")
print(gen_data(42, data))
catalog = load_catalog(data)

# %% [markdown]
# ``compile_query`` parses the plan, applies the rewrite rules and builds one
# tensor program per operator.  ``explain`` lists them in execution order.

# %%

q1 = compile_query(plan_path("q1"), catalog)
print(q1.explain())

# %%

for name in ("q1", "q6", "q3"):
    q = compile_query(plan_path(name), catalog)
    rows = decode_table(q.run(catalog))
    ok, why = compare_results(rows, oracle_execute(plan_path(name), catalog))
    t = q.timings
    print(f"{name}: {len(rows)} rows, oracle {'agrees' if ok else 'disagrees: ' + why}, "
          f"compile {t.compile * 1e3:.1f} ms, convert {t.convert * 1e3:.1f} ms, execute {t.execute * 1e3:.1f} ms")

# %% [markdown]
# The Q3 result: top orders by revenue for one market segment.

# %%

q3 = compile_query(plan_path("q3"), catalog)
result = q3.run(catalog)
print(result.names)
for row in decode_table(result)[:5]:
    print(row)
