import numpy as np
import pytest

from bspgru.services.task_service import SyntheticTask
from bspgru.utils.errors import ConfigError


def test_sampling_is_deterministic(small_task):
    a = small_task.sample(16, "train")
    b = small_task.sample(16, "train")
    for left, right in zip(a, b):
        np.testing.assert_array_equal(left, right)


def test_splits_differ(small_task):
    train_xs, _, _ = small_task.sample(16, "train")
    test_xs, _, _ = small_task.sample(16, "test")
    assert not np.array_equal(train_xs, test_xs)


def test_pattern_sits_at_its_position():
    task = SyntheticTask.create(seq_len=5, input_dim=4, num_classes=3, noise_std=0.0, seed=1)
    xs, labels, positions = task.sample(10)
    for x, label, position in zip(xs, labels, positions):
        np.testing.assert_array_equal(x[position], task.class_patterns[label])
        assert np.count_nonzero(x) == 4


def test_shapes(small_task):
    xs, labels, positions = small_task.sample(7, "test")
    assert xs.shape == (7, 6, 8)
    assert labels.shape == positions.shape == (7,)
    assert set(np.unique(labels)) <= {0, 1, 2}


@pytest.mark.parametrize("kwargs", [
    {"seq_len": 0}, {"input_dim": 0}, {"num_classes": 1}, {"noise_std": -1.0},
])
def test_create_rejects_bad_dimensions(kwargs):
    params = dict(seq_len=4, input_dim=3, num_classes=2, noise_std=0.1, seed=0)
    params.update(kwargs)
    with pytest.raises(ConfigError):
        SyntheticTask.create(**params)
