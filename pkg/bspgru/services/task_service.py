"""
Synthetic pattern-detection task used in place of a speech corpus
"""
from dataclasses import dataclass

import numpy as np

from ..utils.config_utils import derive_rng
from ..utils.errors import ConfigError


@dataclass
class SyntheticTask:
    """Sequences of Gaussian noise with one class pattern added at a random timestep.

    The label is the index of the embedded pattern; patterns are random
    +/-1 vectors drawn from the seed, so the whole dataset is a function
    of the fields below.
    """

    seq_len: int
    input_dim: int
    num_classes: int
    noise_std: float
    seed: int
    class_patterns: np.ndarray

    @classmethod
    def create(cls, seq_len, input_dim, num_classes, noise_std, seed):
        if seq_len < 1 or input_dim < 1 or num_classes < 2 or noise_std < 0:
            raise ConfigError("Invalid synthetic task dimensions", seq_len=seq_len, input_dim=input_dim,
                              num_classes=num_classes, noise_std=noise_std)
        rng = derive_rng(seed, "task/patterns")
        patterns = rng.choice(np.array([-1.0, 1.0]), size=(num_classes, input_dim))
        return cls(seq_len=seq_len, input_dim=input_dim, num_classes=num_classes,
                   noise_std=float(noise_std), seed=int(seed), class_patterns=patterns)

    @classmethod
    def from_config(cls, task_config, seed):
        return cls.create(task_config.seq_len, task_config.input_dim, task_config.num_classes,
                          task_config.noise_std, seed)

    def sample(self, count, split="train"):
        """Draw count labelled sequences from the named split.

        Returns xs (count x T x I), labels (count,) and the timestep each
        pattern was embedded at.
        """
        rng = derive_rng(self.seed, f"task/{split}")
        labels = rng.integers(0, self.num_classes, size=count)
        positions = rng.integers(0, self.seq_len, size=count)
        xs = rng.normal(0.0, self.noise_std, size=(count, self.seq_len, self.input_dim))
        xs[np.arange(count), positions] += self.class_patterns[labels]
        return xs, labels, positions
