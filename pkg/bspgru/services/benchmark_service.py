"""
Wall-clock benchmarking and operation counting for dense and sparse GRU inference
"""
import time
from dataclasses import dataclass

import numpy as np

from .gru_service import GruParams, PRUNABLE_MATRICES, gru_forward_sequence
from .kernel_service import sparse_gru_forward
from .pruning_service import StructuredMask
from ..utils.errors import InvariantViolationError
from ..utils.logging_utils import debug_print, log_event

BENCH_HEADER = ["kernel", "compression_rate", "median_ns", "p10_ns", "p90_ns", "gops",
                "loads_naive", "loads_scheduled", "workers"]

# sigmoid, tanh and gate arithmetic per hidden unit and timestep
ELEMENTWISE_OPS_PER_UNIT = 13
RESOLUTION_FACTOR = 100
MAX_INNER = 2 ** 20


def _nnz(value):
    if isinstance(value, StructuredMask):
        return value.nnz
    if hasattr(value, "nnz"):
        return int(value.nnz)
    return int(np.count_nonzero(value))


def count_ops(model, hidden_dim=None, seq_len=1):
    """Arithmetic of seq_len GRU steps.

    model is a GruParams (dense), or a mapping of the six matrix names to
    masks, boolean grids or BSPC matrices. weight_ops counts a multiply and
    an add per surviving weight; elementwise_ops is independent of pruning.
    """
    if isinstance(model, GruParams):
        nnz = model.prunable_count()
        hidden_dim = model.hidden_dim
    else:
        missing = [name for name in PRUNABLE_MATRICES if name not in model]
        if missing:
            raise InvariantViolationError("count_ops needs all six weight matrices", missing=missing)
        nnz = sum(_nnz(model[name]) for name in PRUNABLE_MATRICES)
        if hidden_dim is None:
            hidden_dim = _rows(model["U_z"])
    weight_ops = 2 * nnz * seq_len
    elementwise_ops = ELEMENTWISE_OPS_PER_UNIT * hidden_dim * seq_len
    return {"weight_ops": weight_ops, "elementwise_ops": elementwise_ops, "total": weight_ops + elementwise_ops}


def _rows(value):
    return value.rows if hasattr(value, "rows") else np.shape(value)[0]


def gop_per_frame(model, hidden_dim=None):
    """Giga-operations of one timestep"""
    return count_ops(model, hidden_dim, 1)["total"] / 1e9


def clock_resolution_ns():
    return time.get_clock_info("perf_counter").resolution * 1e9


@dataclass
class BenchmarkResult:
    kernel: str
    median_ns: float
    p10_ns: float
    p90_ns: float
    gops: float
    reps: int
    inner: int
    ops_count: int
    loads_naive: int = 0
    loads_scheduled: int = 0
    compression_rate: float = 1.0
    workers: int = 1

    def csv_row(self):
        return [self.kernel, repr(float(self.compression_rate)), repr(float(self.median_ns)),
                repr(float(self.p10_ns)), repr(float(self.p90_ns)), repr(float(self.gops)),
                self.loads_naive, self.loads_scheduled, self.workers]


def benchmark(fn, reps, warmup, ops_count, kernel="kernel", timer=time.perf_counter_ns, resolution_ns=None):
    """Time fn() reps times after warmup calls.

    Samples shorter than 100 clock ticks double the inner repetition count
    until they are not; reported times are per call and result.reps is the
    total number of timed calls.
    """
    if reps < 5:
        raise InvariantViolationError(f"reps must be at least 5, got {reps}", reps=reps)
    if resolution_ns is None:
        resolution_ns = clock_resolution_ns()

    for _ in range(max(warmup, 0)):
        fn()

    inner = 1
    while True:
        start = timer()
        for _ in range(inner):
            fn()
        elapsed = timer() - start
        if elapsed >= RESOLUTION_FACTOR * resolution_ns or inner >= MAX_INNER:
            break
        inner *= 2
    if inner > 1:
        debug_print(f"{kernel}: widened to {inner} calls per sample")

    samples = []
    for _ in range(reps):
        start = timer()
        for _ in range(inner):
            fn()
        samples.append((timer() - start) / inner)

    median = float(np.median(samples))
    p10, p90 = (float(v) for v in np.percentile(samples, [10, 90]))
    gops = ops_count / median if median > 0 else float("inf")
    return BenchmarkResult(kernel=kernel, median_ns=median, p10_ns=p10, p90_ns=p90, gops=gops,
                           reps=reps * inner, inner=inner, ops_count=ops_count)


def bench_dense(params, xs, reps, warmup, timer=time.perf_counter_ns):
    """Dense GRU forward over one sequence; the uncompressed baseline"""
    h0 = np.zeros(params.hidden_dim)
    ops = count_ops(params, seq_len=len(xs))["total"]
    result = benchmark(lambda: gru_forward_sequence(params, xs, h0), reps, warmup, ops,
                       kernel="dense_gru_forward", timer=timer)
    result.loads_naive = result.loads_scheduled = params.prunable_count() * len(xs)
    log_event("bench", f"dense_gru_forward median {result.median_ns:.0f} ns", "metric",
              {"kernel": result.kernel, "median_ns": result.median_ns, "reps": result.reps})
    return result


def bench_sparse(model, xs, reps, warmup, compression_rate=1.0, timer=time.perf_counter_ns):
    """Sparse GRU forward over one sequence with the model's schedules"""
    h0 = np.zeros(model.hidden_dim)
    ops = count_ops(model.matrices, model.hidden_dim, seq_len=len(xs))["total"]
    result = benchmark(lambda: sparse_gru_forward(model, xs, h0), reps, warmup, ops,
                       kernel="sparse_gru_forward", timer=timer)
    naive, scheduled = model.loads()
    result.loads_naive = naive * len(xs)
    result.loads_scheduled = scheduled * len(xs)
    result.compression_rate = compression_rate
    result.workers = next(iter(model.schedules.values())).workers
    log_event("bench", f"sparse_gru_forward median {result.median_ns:.0f} ns", "metric",
              {"kernel": result.kernel, "median_ns": result.median_ns, "reps": result.reps,
               "compression_rate": compression_rate, "workers": result.workers})
    return result
