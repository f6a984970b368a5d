"""
Pipeline service: dataset generation, training, pruning, packing and inference over a run directory
"""
import os

import numpy as np

from .benchmark_service import gop_per_frame
from .bspc_service import index_overhead
from .checkpoint_service import load_checkpoint, load_masks, save_checkpoint, save_masks
from .gru_service import GruParams, gru_forward_sequence
from .kernel_service import SparseGruModel, sparse_gru_forward
from .pruning_service import BlockPartition, PruneRates, PruneSettings, bsp_prune
from .task_service import SyntheticTask
from .training_service import TrainOptions, Trainer, evaluate
from ..utils.config_utils import derive_rng
from ..utils.errors import VerificationError
from ..utils.logging_utils import debug_print, log_event

VERIFY_RTOL = 1e-10
VERIFY_ATOL = 1e-12


class PipelineService:
    """Service for the steps that turn a config into a packed sparse model"""

    def __init__(self, run_service):
        self.runs = run_service

    def generate(self, config):
        runs = self.runs
        runs.ensure_dir(config)
        runs.save_config(config)

        task = SyntheticTask.from_config(config.task, config.seed)
        splits = {"train": task.sample(config.task.train_size, "train"),
                  "test": task.sample(config.task.test_size, "test")}
        path = runs.path(config, "dataset.npz")
        runs.save_dataset(path, splits)
        log_event("generate", f"Generated dataset in {config.out_dir}", "event",
                  {"train": config.task.train_size, "test": config.task.test_size})
        return {"dataset": path, "train": config.task.train_size, "test": config.task.test_size}

    def train(self, config, epochs=None):
        runs = self.runs
        if epochs is not None:
            config.train.epochs = epochs
            config.validate()
        runs.ensure_dir(config)
        runs.save_config(config)

        task = SyntheticTask.from_config(config.task, config.seed)
        xs, labels, _ = task.sample(config.task.train_size, "train")
        params = GruParams.initialize(config.task.input_dim, config.model.hidden_dim, config.task.num_classes,
                                      derive_rng(config.seed, "model/init"))
        result = Trainer(TrainOptions.from_config(config)).run(params, xs, labels)

        test_xs, test_labels, _ = task.sample(config.task.test_size, "test")
        test_loss, test_accuracy = evaluate(result.params, test_xs, test_labels)

        save_checkpoint(result.params, runs.path(config, "checkpoint.grup"))
        rows = [["epoch", "loss", "train_accuracy"]]
        rows += [[epoch, repr(float(loss)), repr(float(accuracy))]
                 for epoch, (loss, accuracy) in enumerate(zip(result.loss_curve, result.accuracy_curve))]
        runs.write_csv(runs.path(config, "train_metrics.csv"), rows)

        summary = {"epochs": len(result.loss_curve), "test_loss": test_loss, "test_accuracy": test_accuracy,
                   "final_loss": result.loss_curve[-1] if result.loss_curve else None}
        log_event("train_done", f"Trained {summary['epochs']} epochs, test accuracy {test_accuracy:.4f}",
                  "metric", summary)
        return summary

    def prune(self, config, checkpoint=None, **overrides):
        """overrides: col_rate, row_rate, num_r, num_c; None leaves the config value"""
        runs = self.runs
        for name, value in overrides.items():
            if value is not None:
                setattr(config.prune, name, value)
        config.validate()
        runs.ensure_dir(config)
        runs.save_config(config)

        params = load_checkpoint(checkpoint or runs.require(runs.path(config, "checkpoint.grup")))
        task = SyntheticTask.from_config(config.task, config.seed)
        rates = PruneRates(config.prune.col_rate, config.prune.row_rate)
        part = BlockPartition(config.prune.num_r, config.prune.num_c)
        pruned, masks, report = bsp_prune(params, part, rates, PruneSettings.from_config(config), task)

        save_checkpoint(pruned, runs.path(config, "pruned.grup"))
        save_masks(masks, runs.path(config, "masks.bspm"))
        runs.write_csv(runs.path(config, "prune_report.csv"), report.csv_rows())
        summary = report.summary()
        summary.update({
            "col_rate": rates.col_rate,
            "row_rate": rates.row_rate,
            "num_r": part.num_r,
            "num_c": part.num_c,
            "gop_per_frame": gop_per_frame(masks, params.hidden_dim),
            "dense_gop_per_frame": gop_per_frame(params),
        })
        runs.write_json(runs.path(config, "prune_summary.json"), summary)
        return summary

    def pack(self, config, checkpoint=None, masks_path=None, tile_size=32, unroll_factor=1, workers=1):
        """Encode the pruned weights as BSPC files under <out>/model"""
        runs = self.runs
        params = load_checkpoint(checkpoint or runs.require(runs.path(config, "pruned.grup")))
        masks = load_masks(masks_path or runs.require(runs.path(config, "masks.bspm")))

        model = SparseGruModel.compile(params, masks, tile_size, unroll_factor, workers)
        directory = runs.path(config, "model")
        model.save(directory)

        overhead = {name: index_overhead(B) for name, B in model.matrices.items()}
        naive, scheduled = model.loads()
        log_event("pack", f"Packed BSPC model into {directory}", "event",
                  {"nnz": model.nnz(), "loads_naive": naive, "loads_scheduled": scheduled})
        return {"model": directory, "nnz": model.nnz(), "index_overhead": overhead,
                "loads_naive": naive, "loads_scheduled": scheduled}

    def load_model(self, config, model_dir=None, workers=1):
        model_dir = model_dir or self.runs.require(self.runs.path(config, "model"))
        if not os.path.isdir(model_dir):
            self.runs.require(model_dir)
        return SparseGruModel.load(model_dir, workers=workers)

    def infer(self, config, model_dir=None, input_path=None, verify=False, workers=1):
        """Classify sequences with the sparse GRU, optionally checking each against the dense weights"""
        runs = self.runs
        model = self.load_model(config, model_dir, workers)

        input_path = input_path or runs.path(config, "dataset.npz")
        if os.path.exists(input_path):
            xs, labels = runs.load_sequences(input_path)
        else:
            debug_print(f"{input_path} not found; sampling the test split")
            task = SyntheticTask.from_config(config.task, config.seed)
            xs, labels, _ = task.sample(config.task.test_size, "test")

        h0 = np.zeros(model.hidden_dim)
        predictions = []
        max_deviation = 0.0
        for index, sequence in enumerate(xs):
            _, logits = sparse_gru_forward(model, sequence, h0)
            if verify:
                _, reference = gru_forward_sequence(model.dense, sequence, h0)
                deviation = float(np.max(np.abs(logits - reference) / np.maximum(np.abs(reference), 1.0)))
                max_deviation = max(max_deviation, deviation)
                if not np.allclose(logits, reference, rtol=VERIFY_RTOL, atol=VERIFY_ATOL):
                    raise VerificationError(f"Sparse output of sequence {index} deviates from the dense reference",
                                            index=index, deviation=deviation)
            predictions.append(int(np.argmax(logits)))

        rows = [["index", "predicted", "label"]]
        rows += [[i, p, "" if labels is None else int(labels[i])] for i, p in enumerate(predictions)]
        runs.write_csv(runs.path(config, "predictions.csv"), rows)

        summary = {"sequences": len(predictions), "verified": bool(verify)}
        if verify:
            summary["max_deviation"] = max_deviation
        if labels is not None:
            summary["accuracy"] = float(np.mean(np.array(predictions) == np.asarray(labels)))
        log_event("infer", f"Classified {len(predictions)} sequences", "metric", summary)
        return summary
