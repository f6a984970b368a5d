import numpy as np
import pytest

from bspgru.services.gru_service import GruParams
from bspgru.services.pruning_service import PruneRates, PruneSettings
from bspgru.services.task_service import SyntheticTask
from bspgru.services.training_service import evaluate
from bspgru.services.tuning_service import (
    TUNING_HEADER,
    PipelineEvaluator,
    SearchSpace,
    accuracy_proxy,
    tune,
)
from bspgru.utils.config_utils import TuneConfig, derive_rng
from bspgru.utils.errors import TuningError

ACCURACY_BY_NUM_C = {1: 0.6, 2: 0.8, 4: 0.9}


def surface(candidate, seed):
    num_r, num_c, _, _, _ = candidate
    return 100.0 + 10.0 * num_r + num_c, ACCURACY_BY_NUM_C[num_c]


def test_singleton_space():
    result = tune(SearchSpace(), lambda c, s: (123.0, 0.7))
    assert result.chosen == (1, 1, 8, 1, 1)
    assert result.records[0].score == 0.7
    assert result.records[0].chosen


def test_best_score_on_an_analytic_surface():
    space = SearchSpace(num_r=[1, 2], num_c=[1, 2, 4])
    result = tune(space, surface, lam=0.5)
    assert result.chosen_config() == {"num_r": 1, "num_c": 4, "tile": 8, "unroll": 1, "workers": 1}
    scores = [r.score for r in result.records]
    chosen = [r for r in result.records if r.chosen]
    assert len(chosen) == 1 and chosen[0].score == max(scores)
    assert result.csv_rows()[0] == TUNING_HEADER
    assert len(result.csv_rows()) == 7


def test_zero_lambda_ignores_time():
    space = SearchSpace(num_r=[1, 2], num_c=[1, 2, 4])
    slow_but_accurate = lambda c, s: (1000.0 * c[1], ACCURACY_BY_NUM_C[c[1]])
    assert tune(space, slow_but_accurate, lam=0.0).chosen[:2] == (1, 4)
    assert tune(space, slow_but_accurate, lam=10.0).chosen[:2] == (1, 1)


def test_ties_go_to_the_smaller_candidate():
    space = SearchSpace(num_r=[2, 1], num_c=[4, 2], tile=[32, 8])
    result = tune(space, lambda c, s: (50.0, 0.5))
    assert result.chosen == (1, 2, 8, 1, 1)
    assert [r.config for r in result.records] == sorted(r.config for r in result.records)


def test_evaluator_failures_name_the_candidate():
    def flaky(candidate, seed):
        if candidate[1] == 2:
            raise ValueError("boom")
        return 1.0, 0.5

    with pytest.raises(TuningError) as info:
        tune(SearchSpace(num_c=[1, 2]), flaky)
    assert info.value.details["config"] == {"num_r": 1, "num_c": 2, "tile": 8, "unroll": 1, "workers": 1}


def test_degenerate_spaces():
    with pytest.raises(TuningError):
        tune(SearchSpace(num_r=[]), surface)
    with pytest.raises(TuningError):
        tune(SearchSpace(), surface, lam=-1.0)
    with pytest.raises(TuningError):
        SearchSpace(num_r=[1, 8]).validate_for([(6, 5), (6, 6)])
    assert len(SearchSpace.from_config(TuneConfig()).candidates()) == 36


def test_evaluator_receives_the_seed():
    seen = []
    tune(SearchSpace(), lambda c, s: seen.append(s) or (1.0, 0.5), seed=9)
    assert seen == [9]


@pytest.fixture
def proxy_setup():
    task = SyntheticTask.create(seq_len=5, input_dim=8, num_classes=3, noise_std=0.3, seed=4)
    params = GruParams.initialize(8, 8, 3, derive_rng(4, "model/init"))
    settings = PruneSettings(batch=16, train_size=48, test_size=32, seed=4)
    return params, task, settings


def test_proxy_without_pruning_is_dense_accuracy(proxy_setup):
    params, task, settings = proxy_setup
    accuracy, pruned, _ = accuracy_proxy(2, 2, PruneRates(1, 1), 2, 4, params, task, settings)
    test_xs, test_labels, _ = task.sample(settings.test_size, "test")
    assert accuracy == evaluate(params, test_xs, test_labels)[1]
    np.testing.assert_array_equal(pruned.W_z, params.W_z)


def test_proxy_is_deterministic(proxy_setup):
    params, task, settings = proxy_setup
    a, pruned_a, _ = accuracy_proxy(2, 2, PruneRates(2, 1), 1, 4, params, task, settings)
    b, pruned_b, _ = accuracy_proxy(2, 2, PruneRates(2, 1), 1, 4, params, task, settings)
    assert a == b
    np.testing.assert_array_equal(pruned_a.U_h, pruned_b.U_h)


def test_pipeline_evaluator_caches_proxies(proxy_setup):
    params, task, settings = proxy_setup
    xs, _, _ = task.sample(1, "bench")
    evaluator = PipelineEvaluator(params, task, PruneRates(2, 1), settings, 1, xs[0], reps=5, warmup=0)
    median, accuracy = evaluator((2, 2, 8, 1, 1), 0)
    assert median > 0 and 0.0 <= accuracy <= 1.0
    first = evaluator.proxy(2, 2, 0)
    evaluator((2, 2, 4, 2, 1), 0)
    assert evaluator.proxy(2, 2, 0) is first


@pytest.mark.slow
def test_tune_over_the_real_pipeline(proxy_setup):
    params, task, settings = proxy_setup
    xs, _, _ = task.sample(1, "bench")
    evaluator = PipelineEvaluator(params, task, PruneRates(2, 2), settings, 1, xs[0], reps=5, warmup=1)
    result = tune(SearchSpace(num_r=[1, 2], num_c=[1, 2], tile=[2, 8]), evaluator, lam=0.5, seed=1)
    assert len(result.records) == 8
    assert sum(r.chosen for r in result.records) == 1
    assert len(evaluator._proxies) == 4
