from dataclasses import replace

import numpy as np
import pytest

from bspgru.services.gru_service import PRUNABLE_MATRICES, GruParams
from bspgru.services.task_service import SyntheticTask
from bspgru.services.training_service import (
    TrainOptions,
    Trainer,
    check_mask,
    clip_gradients,
    evaluate,
    make_optimizer,
    train,
)
from bspgru.utils.config_utils import RunConfig, derive_rng
from bspgru.utils.errors import InvariantViolationError, NumericDivergenceError


@pytest.fixture
def setup(small_task):
    params = GruParams.initialize(8, 8, 3, derive_rng(0, "model/init"))
    xs, labels, _ = small_task.sample(96, "train")
    return params, xs, labels


def test_training_reduces_loss(setup):
    params, xs, labels = setup
    result = Trainer(TrainOptions(lr=0.02, epochs=8, batch=16)).run(params, xs, labels)
    assert len(result.loss_curve) == 8
    assert result.loss_curve[-1] < result.loss_curve[0]


def test_sgd_training_is_deterministic(setup):
    params, xs, labels = setup
    options = TrainOptions(lr=0.05, epochs=2, batch=16, optimizer="sgd", seed=5)
    a = Trainer(options).run(params, xs, labels).params
    b = Trainer(options).run(params, xs, labels).params
    for name, value in a.tensors().items():
        np.testing.assert_array_equal(value, getattr(b, name))


def test_mask_stays_closed(setup):
    params, xs, labels = setup
    rng = np.random.default_rng(0)
    mask = {"W_z": rng.random((8, 8)) < 0.5, "U_h": rng.random((8, 8)) < 0.3}
    trained = Trainer(TrainOptions(epochs=2, batch=32, mask=mask)).run(params, xs, labels).params
    for name, keep in mask.items():
        assert np.all(getattr(trained, name)[~keep] == 0.0)
    assert not np.array_equal(trained.W_r, params.W_r)


def test_divergence_is_reported(setup):
    params, xs, labels = setup
    params = params.copy()
    params.readout_b[0] = np.nan
    with pytest.raises(NumericDivergenceError) as info:
        Trainer(TrainOptions(epochs=1)).run(params, xs, labels)
    assert info.value.details["epoch"] == 0


def test_runs_continue_the_same_stream(setup):
    params, xs, labels = setup
    options = TrainOptions(epochs=2, batch=32, optimizer="sgd")
    whole = Trainer(options).run(params, xs, labels).params
    trainer = Trainer(options)
    split = trainer.run(trainer.run(params, xs, labels, epochs=1).params, xs, labels, epochs=1).params
    np.testing.assert_array_equal(whole.U_z, split.U_z)


def test_clip_gradients_caps_the_global_norm(small_params):
    grads = small_params.map(lambda name, value: np.full(value.shape, 3.0))
    clipped = clip_gradients(grads, 1.0)
    norm = np.sqrt(sum(np.sum(g * g) for g in clipped.tensors().values()))
    assert norm == pytest.approx(1.0)
    assert clip_gradients(grads, 0) is grads


def test_bad_optimizer_and_mask(small_params):
    with pytest.raises(InvariantViolationError):
        make_optimizer("rmsprop", 0.1)
    with pytest.raises(InvariantViolationError):
        check_mask(small_params, {"W_z": np.ones((2, 2), dtype=bool)})
    with pytest.raises(InvariantViolationError):
        check_mask(small_params, {"W_q": np.ones((6, 5), dtype=bool)})


def test_evaluate_range(setup):
    params, xs, labels = setup
    loss, accuracy = evaluate(params, xs, labels, batch=10)
    assert loss > 0
    assert 0.0 <= accuracy <= 1.0


@pytest.mark.slow
def test_reference_config_reaches_high_accuracy():
    config = RunConfig()
    task = SyntheticTask.from_config(config.task, config.seed)
    params = GruParams.initialize(config.task.input_dim, config.model.hidden_dim, config.task.num_classes,
                                  derive_rng(config.seed, "model/init"))
    trained, losses = train(params, task, TrainOptions.from_config(config))
    xs, labels, _ = task.sample(config.task.test_size, "test")
    _, accuracy = evaluate(trained, xs, labels)
    assert accuracy >= 0.95
    assert losses[-1] < losses[0]


def test_zero_epochs_return_the_input(setup, small_task):
    params, xs, labels = setup
    result = Trainer(TrainOptions(epochs=0)).run(params, xs, labels)
    assert result.loss_curve == []
    for name, value in params.tensors().items():
        np.testing.assert_array_equal(getattr(result.params, name), value)

    trained, losses = train(params, small_task, TrainOptions(epochs=0, train_size=32))
    assert losses == []
    np.testing.assert_array_equal(trained.U_h, params.U_h)


def test_all_true_mask_follows_the_unmasked_trajectory(setup):
    params, xs, labels = setup
    options = TrainOptions(lr=0.02, epochs=3, batch=16, seed=9)
    mask = {name: np.ones_like(getattr(params, name), dtype=bool) for name in PRUNABLE_MATRICES}
    plain = Trainer(options).run(params, xs, labels)
    masked = Trainer(replace(options, mask=mask)).run(params, xs, labels)
    assert masked.loss_curve == plain.loss_curve
    for name, value in plain.params.tensors().items():
        np.testing.assert_array_equal(getattr(masked.params, name), value)
