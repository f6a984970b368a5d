"""
Performance service: benchmarks, tuning, cross-run reports and the event log
"""
import os

from .benchmark_service import BENCH_HEADER, bench_dense, bench_sparse
from .checkpoint_service import load_checkpoint
from .gru_service import PRUNABLE_MATRICES
from .kernel_service import SparseGruModel
from .pruning_service import PruneRates, PruneSettings, compression_rate
from .task_service import SyntheticTask
from .tuning_service import PipelineEvaluator, SearchSpace, tune
from ..utils.config_utils import RunConfig
from ..utils.errors import CorruptionError, InvariantViolationError, MissingFileError
from ..utils.logging_utils import events_file, get_events, log_event

SUMMARY_HEADER = ["run", "col_rate", "row_rate", "preserved_params", "compression_rate", "accuracy_dense",
                  "accuracy_pruned", "accuracy_drop", "gop_per_frame", "median_ns", "speedup",
                  "speedup_p10", "speedup_p90"]


def bench_sequence(config):
    """The single sequence every benchmark times"""
    task = SyntheticTask.from_config(config.task, config.seed)
    xs, _, _ = task.sample(1, "bench")
    return xs[0]


def _float(row, key):
    try:
        return float(row[key])
    except (KeyError, TypeError, ValueError):
        raise CorruptionError(f"bench.csv lacks a numeric '{key}'", column=key)


def format_table(rows):
    """Plain-text, right-aligned table of summary rows"""
    cells = [SUMMARY_HEADER]
    for row in rows:
        cells.append([row[key] if isinstance(row[key], str) else
                      f"{row[key]:.4g}" if isinstance(row[key], float) else str(row[key])
                      for key in SUMMARY_HEADER])
    widths = [max(len(line[i]) for line in cells) for i in range(len(SUMMARY_HEADER))]
    return "\n".join("  ".join(cell.rjust(width) for cell, width in zip(line, widths)) for line in cells) + "\n"


class PerformanceService:
    """Service for timing, tuning and summarizing run directories"""

    def __init__(self, run_service):
        self.runs = run_service

    def bench(self, config, model_dir=None, checkpoint=None, reps=None, workers=1):
        runs = self.runs
        reps = config.bench.reps if reps is None else reps
        xs = bench_sequence(config)

        model_dir = model_dir or runs.path(config, "model")
        checkpoint = checkpoint or runs.path(config, "checkpoint.grup")
        model = SparseGruModel.load(model_dir, workers=workers) if os.path.isdir(model_dir) else None
        if os.path.isfile(checkpoint):
            dense = load_checkpoint(checkpoint)
        elif model is not None:
            dense = model.dense
        else:
            raise MissingFileError(f"Nothing to benchmark: neither {model_dir} nor {checkpoint} exists",
                                   model=str(model_dir), checkpoint=str(checkpoint))

        results = [bench_dense(dense, xs, reps, config.bench.warmup)]
        if model is not None:
            rate = compression_rate({name: B.mask for name, B in model.matrices.items()})
            results.append(bench_sparse(model, xs, reps, config.bench.warmup, compression_rate=rate))

        runs.ensure_dir(config)
        runs.write_csv(runs.path(config, "bench.csv"), [BENCH_HEADER] + [r.csv_row() for r in results])
        return {r.kernel: {"median_ns": r.median_ns, "reps": r.reps, "gops": r.gops} for r in results}

    def tune(self, config, checkpoint=None, lam=None, reps=None):
        runs = self.runs
        if lam is not None:
            config.tune.lam = lam
        if reps is not None:
            config.bench.reps = reps
        config.validate()

        params = load_checkpoint(checkpoint or runs.require(runs.path(config, "checkpoint.grup")))
        space = SearchSpace.from_config(config.tune)
        space.validate_for([getattr(params, name).shape for name in PRUNABLE_MATRICES])
        evaluator = PipelineEvaluator(params, SyntheticTask.from_config(config.task, config.seed),
                                      PruneRates(config.prune.col_rate, config.prune.row_rate),
                                      PruneSettings.from_config(config), config.tune.budget_epochs,
                                      bench_sequence(config), config.bench.reps, config.bench.warmup)
        result = tune(space, evaluator, config.tune.lam, config.seed)

        runs.ensure_dir(config)
        runs.write_csv(runs.path(config, "tuning_log.csv"), result.csv_rows())
        chosen = result.chosen_config()
        best = next(r for r in result.records if r.chosen)
        runs.write_json(runs.path(config, "chosen_config.json"),
                        {"chosen": chosen, "lam": result.lam, "score": best.score,
                         "median_ns": best.median_ns, "accuracy_proxy": best.accuracy_proxy})
        return {"chosen": chosen, "score": best.score, "candidates": len(result.records)}

    def summarize_run(self, run_dir):
        """One summary row for a run directory with prune_summary.json and bench.csv"""
        summary = self.runs.read_json(os.path.join(run_dir, "prune_summary.json"))
        bench = {row["kernel"]: row for row in self.runs.read_csv(os.path.join(run_dir, "bench.csv"))}
        if "dense_gru_forward" not in bench or "sparse_gru_forward" not in bench:
            raise CorruptionError(f"{run_dir}/bench.csv needs dense and sparse rows", run=run_dir)
        dense, sparse = bench["dense_gru_forward"], bench["sparse_gru_forward"]
        dense_median, sparse_median = _float(dense, "median_ns"), _float(sparse, "median_ns")
        try:
            accuracy_dense = summary["accuracy_before"]
            accuracy_pruned = summary["accuracy_after"]
            row = {
                "run": os.path.basename(os.path.normpath(run_dir)),
                "col_rate": summary["col_rate"],
                "row_rate": summary["row_rate"],
                "preserved_params": summary["preserved_params"],
                "compression_rate": summary["compression_rate"],
                "accuracy_dense": accuracy_dense,
                "accuracy_pruned": accuracy_pruned,
                "accuracy_drop": accuracy_dense - accuracy_pruned,
                "gop_per_frame": summary["gop_per_frame"],
                "median_ns": sparse_median,
                "speedup": dense_median / sparse_median,
                "speedup_p10": _float(dense, "p10_ns") / _float(sparse, "p90_ns"),
                "speedup_p90": _float(dense, "p90_ns") / _float(sparse, "p10_ns"),
            }
        except KeyError as e:
            raise CorruptionError(f"{run_dir}/prune_summary.json lacks {e}", run=run_dir)
        return row

    @staticmethod
    def expand_run_dirs(run_dirs):
        """A directory holding prune_summary.json is a run; otherwise its run subdirectories are used"""
        expanded = []
        for run_dir in run_dirs:
            if os.path.isfile(os.path.join(run_dir, "prune_summary.json")) or not os.path.isdir(run_dir):
                expanded.append(run_dir)
                continue
            children = sorted(os.path.join(run_dir, name) for name in os.listdir(run_dir)
                              if os.path.isfile(os.path.join(run_dir, name, "prune_summary.json")))
            expanded.extend(children or [run_dir])
        return expanded

    def report(self, run_dirs, out_dir=None):
        """Compression rate vs accuracy vs speedup over one or more runs"""
        runs = self.runs
        run_dirs = list(run_dirs) or [out_dir or RunConfig().out_dir]
        target = out_dir or (run_dirs[0] if len(run_dirs) == 1 else os.getcwd())

        rows = sorted((self.summarize_run(run_dir) for run_dir in self.expand_run_dirs(run_dirs)),
                      key=lambda row: (row["compression_rate"], row["run"]))
        csv_rows = [SUMMARY_HEADER] + [[repr(row[k]) if isinstance(row[k], float) else row[k]
                                        for k in SUMMARY_HEADER] for row in rows]
        runs.write_csv(os.path.join(target, "summary.csv"), csv_rows)
        runs.write_text(os.path.join(target, "summary.txt"), format_table(rows))
        log_event("report", f"Summarized {len(rows)} runs into {target}", "event", {"runs": len(rows)})
        return {"runs": len(rows), "summary": os.path.join(target, "summary.csv")}

    def events(self, hours=24, limit=50, event_type=None):
        """Recent event-log records, newest first"""
        if hours <= 0 or limit < 1:
            raise InvariantViolationError("hours must be positive and limit at least 1", hours=hours, limit=limit)
        events = get_events(hours=hours, limit=limit, event_type=event_type)
        return {"file": events_file(), "count": len(events), "events": events}
