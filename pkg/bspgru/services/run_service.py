"""
Run directory service: config resolution and the files every command reads and writes
"""
import os
import csv
import json

import numpy as np

from ..utils.config_utils import emit_config, load_config
from ..utils.errors import CorruptionError, MissingFileError
from ..utils.logging_utils import debug_print

CONFIG_FILE = "run_config.json"
DATASET_FILE = "dataset.npz"


class RunService:
    """Service for reading and writing run directory artifacts"""

    def resolve_config(self, config_path=None, seed=None, out_dir=None):
        """--config wins; otherwise reuse the run directory's saved config when there is one"""
        if not config_path and out_dir and os.path.isfile(os.path.join(out_dir, CONFIG_FILE)):
            config_path = os.path.join(out_dir, CONFIG_FILE)
        if config_path and not os.path.isfile(config_path):
            raise MissingFileError(f"Config file not found: {config_path}", path=str(config_path))
        config = load_config(config_path, seed=seed, out_dir=out_dir)
        debug_print(f"Resolved config from {config_path or 'defaults'} into {config.out_dir}")
        return config

    def path(self, config, *parts):
        return os.path.join(config.out_dir, *parts)

    def ensure_dir(self, config):
        os.makedirs(config.out_dir, exist_ok=True)
        return config.out_dir

    def require(self, path):
        if not os.path.exists(path):
            raise MissingFileError(f"Required file not found: {path}", path=str(path))
        return path

    def save_config(self, config):
        self.write_text(self.path(config, CONFIG_FILE), emit_config(config))

    def write_text(self, path, text):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, 'w', newline='') as f:
            f.write(text)

    def write_json(self, path, data):
        self.write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")

    def read_json(self, path):
        self.require(path)
        try:
            with open(path, 'r') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise CorruptionError(f"{path} is not valid JSON: {e}", path=str(path))

    def write_csv(self, path, rows):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, 'w', newline='') as f:
            csv.writer(f, lineterminator="\n").writerows(rows)

    def read_csv(self, path):
        """Rows as dicts keyed by the header"""
        self.require(path)
        with open(path, 'r', newline='') as f:
            return list(csv.DictReader(f))

    def save_dataset(self, path, splits):
        """splits maps a split name to (xs, labels, positions)"""
        arrays = {}
        for split, (xs, labels, positions) in splits.items():
            arrays[f"{split}_xs"] = xs
            arrays[f"{split}_labels"] = labels
            arrays[f"{split}_positions"] = positions
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        np.savez(path, **arrays)

    def load_sequences(self, path, split="test"):
        """(xs, labels or None) from an npz holding xs/labels or a saved dataset split"""
        self.require(path)
        try:
            with np.load(path) as data:
                if "xs" in data:
                    xs = data["xs"]
                    labels = data["labels"] if "labels" in data else None
                elif f"{split}_xs" in data:
                    xs, labels = data[f"{split}_xs"], data[f"{split}_labels"]
                else:
                    raise CorruptionError(f"{path} holds neither 'xs' nor '{split}_xs'", path=str(path))
        except (OSError, ValueError) as e:
            raise CorruptionError(f"Cannot read sequences from {path}: {e}", path=str(path))
        if xs.ndim == 2:
            xs = xs[np.newaxis]
        return np.asarray(xs, dtype=np.float64), labels
