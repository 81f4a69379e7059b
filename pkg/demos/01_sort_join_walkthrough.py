# coding: utf-8

# # Histogram sort join, step by step
#
# The sort strategy joins two key columns without comparing rows pairwise.
# Each key gets a bucket; the bucket holds countL(k) * countR(k) output rows,
# and every output row finds its bucket with one binary search.

# %%

from tqe.kernels import Tensor
from tqe.operators.joins import hash_join_inner, sort_join_inner

left = {"lkey": Tensor([2, 1, 2], "int64"), "lrow": Tensor([0, 1, 2], "int64")}
right = {"rkey": Tensor([3, 2, 2], "int64"), "rrow": Tensor([0, 1, 2], "int64")}

# %% [markdown]
# Pass a dict as ``trace`` and the join writes its intermediate tensors into it.

# %%

trace = {}
out = sort_join_inner(left, right, "lkey", "rkey", trace=trace)

for name in ("left_hist", "right_hist", "hist_mul", "cum_hist_mul", "out_bucket",
             "left_out_idx", "right_out_idx"):
    print(f"{name:14s}", trace[name].to_list())
print("out_size      ", trace["out_size"])

# %% [markdown]
# Key 2 appears twice on each side, so its bucket holds 2 * 2 = 4 rows.  Inside
# the bucket, offset div rightHist picks the left row and offset mod rightHist
# picks the right row.

# %%

print(list(zip(out["lrow"].to_list(), out["rrow"].to_list())))

# %% [markdown]
# The hash strategy produces the same pairs, in no particular order.

# %%

hashed = hash_join_inner(left, right, "lkey", "rkey")
print(sorted(zip(hashed["lrow"].to_list(), hashed["rrow"].to_list())))

# %% [markdown]
# Keys that are negative or large are first mapped to a dense [0, K) domain, so
# the histograms stay as small as the number of distinct keys.

# %%

wide = {"lkey": Tensor([-7, 10**12, -7], "int64"), "lrow": Tensor([0, 1, 2], "int64")}
trace = {}
sort_join_inner(wide, right | {"rkey": Tensor([10**12, -7, 5], "int64")}, "lkey", "rkey", trace=trace)
print("histogram length:", trace["left_hist"].shape[0])
