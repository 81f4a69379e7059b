"""Timing harness: per-phase medians and the scalar-loop filter baseline."""
from __future__ import annotations

import statistics
import time

import numpy as np

from tqe import kernels as K
from tqe.executor import compile_query
from tqe.operators.expressions import col, compile_expression, lit, call
from tqe.operators.filters import filter_sv


def measured_runs(repeat: int) -> slice:
    """Runs that count: the first ``repeat // 2`` are warm-up."""
    if repeat < 1:
        raise ValueError("repeat must be >= 1")
    return slice(repeat // 2, repeat)


def median_of_measured(samples: list[float]) -> float:
    return statistics.median(samples[measured_runs(len(samples))])


def loop_filter(values: np.ndarray, bound) -> np.ndarray:
    """Element-by-element filter written with host control flow."""
    out = np.zeros_like(values)
    j = 0
    for i in range(values.shape[0]):
        datum = values[i]
        if datum < bound:
            out[j] = datum
            j = j + 1
    return out[:j]


def filter_speedup(rows: int = 1_000_000, repeat: int = 3, seed: int = 0, bound: int = 24) -> dict[str, float]:
    """Time the selection-vector filter against :func:`loop_filter` on ``rows`` quantities."""
    rng = np.random.default_rng(seed)
    qty = rng.integers(1, 51, rows).astype(np.float64)
    column = K.from_numpy(qty)
    pred = compile_expression(call("lt", col("l_quantity"), lit(float(bound))), {"l_quantity": "float64"})

    def tensor_path():
        return filter_sv({"l_quantity": column}, pred, rows)["l_quantity"]

    def loop_path():
        return loop_filter(qty.reshape(-1, 1), bound)

    def best(fn, n):
        times = []
        for _ in range(n):
            t0 = time.perf_counter()
            out = fn()
            times.append(time.perf_counter() - t0)
        return min(times), out

    t_sv, a = best(tensor_path, max(repeat, 1))
    t_loop, b = best(loop_path, 1)
    if not np.array_equal(a.numpy(), b):
        raise AssertionError("loop baseline and tensor filter disagree")
    return {"rows": rows, "tensor_s": t_sv, "loop_s": t_loop, "speedup": t_loop / t_sv}


def bench_plan(plan, catalog, repeat: int = 10, optimize: bool = True) -> dict[str, float]:
    """Compile and run ``plan`` ``repeat`` times; median of each phase over the measured runs."""
    samples = {"compile": [], "convert": [], "execute": []}
    for _ in range(repeat):
        q = compile_query(plan, catalog, optimize=optimize)
        q.run(catalog)
        for k, v in q.timings.as_dict().items():
            samples[k].append(v)
    return {k: median_of_measured(v) for k, v in samples.items()}
