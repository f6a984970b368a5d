"""
Grid search over block partitions and execution parameters, trading pruned
accuracy against measured sparse inference time
"""
import time
from dataclasses import dataclass, field, replace
from itertools import product

from .benchmark_service import bench_sparse
from .gru_service import PRUNABLE_MATRICES
from .kernel_service import SparseGruModel
from .pruning_service import BlockPartition, bsp_prune, plan_constraint
from ..utils.errors import ToolkitError, TuningError
from ..utils.logging_utils import debug_print, log_event

TUNING_HEADER = ["num_r", "num_c", "tile", "unroll", "workers", "median_ns", "accuracy_proxy", "score", "chosen"]
CANDIDATE_FIELDS = ("num_r", "num_c", "tile", "unroll", "workers")


@dataclass
class SearchSpace:
    num_r: list = field(default_factory=lambda: [1])
    num_c: list = field(default_factory=lambda: [1])
    tile: list = field(default_factory=lambda: [8])
    unroll: list = field(default_factory=lambda: [1])
    workers: list = field(default_factory=lambda: [1])

    @classmethod
    def from_config(cls, tune_config):
        return cls(**{name: [int(v) for v in getattr(tune_config, name)] for name in CANDIDATE_FIELDS})

    def candidates(self):
        """Every (num_r, num_c, tile, unroll, workers), in lexicographic order"""
        return sorted(set(product(self.num_r, self.num_c, self.tile, self.unroll, self.workers)))

    def validate_for(self, shapes):
        """Every partition candidate must fit every matrix shape"""
        for num_r, num_c in sorted(set(product(self.num_r, self.num_c))):
            for shape in shapes:
                try:
                    BlockPartition(num_r, num_c).validate_for(*shape)
                except ToolkitError as e:
                    raise TuningError(f"Candidate partition infeasible: {e.message}",
                                      config={"num_r": num_r, "num_c": num_c}, shape=list(shape))
        return self


@dataclass
class TuneRecord:
    config: tuple
    median_ns: float
    accuracy_proxy: float
    score: float = 0.0
    chosen: bool = False

    def as_dict(self):
        return dict(zip(CANDIDATE_FIELDS, self.config))

    def csv_row(self):
        return list(self.config) + [repr(float(self.median_ns)), repr(float(self.accuracy_proxy)),
                                    repr(float(self.score)), int(self.chosen)]


@dataclass
class TuneResult:
    chosen: tuple
    records: list
    lam: float

    def chosen_config(self):
        return dict(zip(CANDIDATE_FIELDS, self.chosen))

    def csv_rows(self):
        return [TUNING_HEADER] + [record.csv_row() for record in self.records]


def tune(space, evaluator, lam=0.5, seed=0):
    """Evaluate every candidate once and keep the best score.

    evaluator(candidate, seed) returns (median_ns, accuracy_proxy). score =
    accuracy_proxy - lam * normalized time, with times min-max normalized
    over the space; ties go to the lexicographically smaller candidate.
    """
    if lam < 0:
        raise TuningError("lam must be nonnegative", lam=lam)
    candidates = space.candidates()
    if not candidates:
        raise TuningError("Search space is empty")

    records = []
    for candidate in candidates:
        try:
            median_ns, accuracy = evaluator(candidate, seed)
        except Exception as e:
            message = e.message if isinstance(e, ToolkitError) else str(e)
            raise TuningError(f"Evaluation failed for {candidate}: {message}",
                              config=dict(zip(CANDIDATE_FIELDS, candidate)), cause=type(e).__name__)
        debug_print(f"tune {candidate}: {median_ns:.0f} ns, proxy {accuracy:.4f}")
        records.append(TuneRecord(candidate, float(median_ns), float(accuracy)))

    fastest = min(r.median_ns for r in records)
    slowest = max(r.median_ns for r in records)
    spread = slowest - fastest
    for record in records:
        normalized = (record.median_ns - fastest) / spread if spread > 0 else 0.0
        record.score = record.accuracy_proxy - lam * normalized

    best = min(records, key=lambda r: (-r.score, r.config))
    best.chosen = True
    log_event("tune_done", f"Chose {best.config} with score {best.score:.4f}", "metric",
              {"chosen": best.as_dict(), "score": best.score, "candidates": len(records)})
    return TuneResult(chosen=best.config, records=records, lam=lam)


def _keeps_everything(params, part, rates):
    for name in PRUNABLE_MATRICES:
        rows, cols = getattr(params, name).shape
        constraint = plan_constraint(rows, cols, part, rates)
        widths = [stop - start for start, stop in part.col_bounds(cols)]
        if constraint.row_keep < rows or list(constraint.col_keep) != widths:
            return False
    return True


def accuracy_proxy(num_r, num_c, rates, budget_epochs, seed, params, task, settings):
    """Validation accuracy after pruning with a short ADMM and retrain budget.

    When the rates prune nothing the dense model's accuracy is returned.
    Returns (accuracy, pruned params, masks).
    """
    part = BlockPartition(num_r, num_c)
    settings = replace(settings, seed=seed, admm_epochs=budget_epochs, retrain_epochs=budget_epochs)
    if _keeps_everything(params, part, rates):
        settings = replace(settings, retrain_epochs=0)
    pruned, masks, report = bsp_prune(params, part, rates, settings, task)
    return report.accuracy_after, pruned, masks


class PipelineEvaluator:
    """Evaluator backed by real pruning and benchmarking; proxies are cached per partition"""

    def __init__(self, params, task, rates, settings, budget_epochs, xs, reps, warmup, timer=time.perf_counter_ns):
        self.params = params
        self.task = task
        self.rates = rates
        self.settings = settings
        self.budget_epochs = budget_epochs
        self.xs = xs
        self.reps = reps
        self.warmup = warmup
        self.timer = timer
        self._proxies = {}

    def proxy(self, num_r, num_c, seed):
        key = (num_r, num_c, seed)
        if key not in self._proxies:
            self._proxies[key] = accuracy_proxy(num_r, num_c, self.rates, self.budget_epochs, seed,
                                                self.params, self.task, self.settings)
        return self._proxies[key]

    def __call__(self, candidate, seed):
        num_r, num_c, tile, unroll, workers = candidate
        accuracy, pruned, masks = self.proxy(num_r, num_c, seed)
        model = SparseGruModel.compile(pruned, masks, tile, unroll, workers)
        result = bench_sparse(model, self.xs, self.reps, self.warmup, timer=self.timer)
        return result.median_ns, accuracy
