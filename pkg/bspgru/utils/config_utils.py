"""
Run configuration, environment settings and seeded random substreams
"""
import os
import json
import zlib
from dataclasses import dataclass, field, fields, asdict, is_dataclass

import numpy as np
from dotenv import load_dotenv

from .errors import ConfigError
from ..services.gru_service import PRUNABLE_MATRICES

load_dotenv()

SCHEMA_VERSION = 1


def default_workers():
    """Worker count used when a command gets no --workers flag"""
    try:
        workers = int(os.getenv("BSPGRU_WORKERS", "1"))
    except ValueError:
        raise ConfigError("BSPGRU_WORKERS must be an integer", value=os.getenv("BSPGRU_WORKERS"))
    if workers < 1:
        raise ConfigError("BSPGRU_WORKERS must be at least 1", value=workers)
    return workers


def derive_rng(seed, name):
    """Named substream of the top-level seed.

    Components draw from their own substream so any stage can be re-run
    on its own and still see the numbers it saw inside the full pipeline.
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return np.random.default_rng(sequence)


@dataclass
class TaskConfig:
    seq_len: int = 20
    input_dim: int = 16
    num_classes: int = 4
    noise_std: float = 0.3
    train_size: int = 1024
    test_size: int = 256


@dataclass
class ModelConfig:
    hidden_dim: int = 32


@dataclass
class TrainConfig:
    lr: float = 0.01
    epochs: int = 30
    batch: int = 32
    optimizer: str = "adam"
    clip_norm: float = 5.0


@dataclass
class PruneConfig:
    col_rate: float = 4.0
    row_rate: float = 2.0
    num_r: int = 4
    num_c: int = 4
    rho: float = 0.01
    admm_epochs: int = 10
    retrain_epochs: int = 10
    admm_tol: float = 1e-3
    rho_overrides: dict = field(default_factory=dict)


@dataclass
class TuneConfig:
    num_r: list = field(default_factory=lambda: [1, 2, 4])
    num_c: list = field(default_factory=lambda: [1, 2, 4])
    tile: list = field(default_factory=lambda: [8, 32])
    unroll: list = field(default_factory=lambda: [1, 2])
    workers: list = field(default_factory=lambda: [1])
    lam: float = 0.5
    budget_epochs: int = 2


@dataclass
class BenchConfig:
    reps: int = 20
    warmup: int = 3
    workers: int = 1


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    out_dir: str = "runs/default"
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    tune: TuneConfig = field(default_factory=TuneConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def validate(self):
        """Check value ranges the services would otherwise trip over later"""
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"Unsupported schema_version {self.schema_version}", expected=SCHEMA_VERSION)
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer", seed=self.seed)
        task = self.task
        for name in ("seq_len", "input_dim", "train_size", "test_size"):
            if getattr(task, name) < 1:
                raise ConfigError(f"task.{name} must be positive", value=getattr(task, name))
        if task.num_classes < 2:
            raise ConfigError("task.num_classes must be at least 2", value=task.num_classes)
        if task.noise_std < 0:
            raise ConfigError("task.noise_std must be nonnegative", value=task.noise_std)
        if self.model.hidden_dim < 1:
            raise ConfigError("model.hidden_dim must be positive", value=self.model.hidden_dim)
        if self.train.optimizer not in ("sgd", "adam"):
            raise ConfigError("train.optimizer must be 'sgd' or 'adam'", value=self.train.optimizer)
        if self.train.batch < 1 or self.train.epochs < 0 or self.train.lr <= 0:
            raise ConfigError("train needs batch >= 1, epochs >= 0 and lr > 0")
        if self.prune.col_rate < 1 or self.prune.row_rate < 1:
            raise ConfigError("prune rates must be at least 1",
                              col_rate=self.prune.col_rate, row_rate=self.prune.row_rate)
        if self.prune.rho <= 0 or any(v <= 0 for v in self.prune.rho_overrides.values()):
            raise ConfigError("prune.rho values must be positive")
        unknown = sorted(set(self.prune.rho_overrides) - set(PRUNABLE_MATRICES))
        if unknown:
            raise ConfigError(f"prune.rho_overrides names unknown matrices: {', '.join(unknown)}", names=unknown)
        for name in ("num_r", "num_c", "tile", "unroll", "workers"):
            values = getattr(self.tune, name)
            if not values or any(not isinstance(v, int) or isinstance(v, bool) or v < 1 for v in values):
                raise ConfigError(f"tune.{name} must be a nonempty list of positive integers", value=values)
        if self.tune.lam < 0:
            raise ConfigError("tune.lam must be nonnegative", value=self.tune.lam)
        if self.bench.reps < 5:
            raise ConfigError("bench.reps must be at least 5", value=self.bench.reps)
        if self.bench.workers < 1:
            raise ConfigError("bench.workers must be at least 1", value=self.bench.workers)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        """Strict parse: unknown keys anywhere are rejected"""
        return _build(cls, data, "")


def _matches(default, value):
    if isinstance(value, bool):
        return isinstance(default, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float))
    return isinstance(value, type(default))


def _items_match(default, value):
    """List items are judged by the default's first item; mapping values must be numbers"""
    if isinstance(value, list):
        return not default or all(_matches(default[0], item) for item in value)
    if isinstance(value, dict):
        return all(isinstance(key, str) and _matches(0.0, item) for key, item in value.items())
    return True


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"Expected an object at '{prefix or '<root>'}'", got=type(data).__name__)

    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(prefix + k for k in unknown)}",
                          keys=[prefix + k for k in unknown])

    values = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if is_dataclass(default):
            values[name] = _build(type(default), value, f"{prefix}{name}.")
        elif not _matches(default, value):
            raise ConfigError(f"Config key '{prefix}{name}' expects {type(default).__name__}",
                              got=type(value).__name__)
        elif not _items_match(default, value):
            raise ConfigError(f"Config key '{prefix}{name}' holds items of the wrong type", value=value)
        else:
            values[name] = float(value) if isinstance(default, float) else value
    return cls(**values)


def load_config(path=None, seed=None, out_dir=None):
    """Load a RunConfig from JSON and apply command-line overrides"""
    if path:
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file is not valid JSON: {e}", path=str(path))
        config = RunConfig.from_dict(data)
    else:
        config = RunConfig()

    if seed is not None:
        config.seed = int(seed)
    if out_dir is not None:
        config.out_dir = str(out_dir)
    return config.validate()


def emit_config(config):
    """Serialize a RunConfig deterministically"""
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
