import json

import numpy as np
import pytest

from bspgru.utils.config_utils import RunConfig, derive_rng, emit_config, load_config
from bspgru.utils.errors import ConfigError


def test_emit_then_parse_is_identity(tmp_path):
    config = RunConfig(seed=11, out_dir="runs/x")
    config.prune.rho_overrides = {"U_h": 0.05}
    config.tune.num_c = [2, 4]
    path = tmp_path / "config.json"
    path.write_text(emit_config(config))
    assert load_config(str(path)) == config
    assert emit_config(load_config(str(path))) == emit_config(config)


def test_unknown_keys_are_rejected(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"prune": {"col_rte": 2.0}}))
    with pytest.raises(ConfigError) as info:
        load_config(str(path))
    assert "prune.col_rte" in info.value.message


def test_wrong_types_and_ranges(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"model": {"hidden_dim": "big"}}))
    with pytest.raises(ConfigError):
        load_config(str(path))
    path.write_text(json.dumps({"prune": {"col_rate": 0.5}}))
    with pytest.raises(ConfigError):
        load_config(str(path))
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_overrides_apply():
    config = load_config(None, seed=4, out_dir="elsewhere")
    assert (config.seed, config.out_dir) == (4, "elsewhere")


def test_substreams_are_independent_and_repeatable():
    a = derive_rng(3, "task/train").normal(size=4)
    np.testing.assert_array_equal(a, derive_rng(3, "task/train").normal(size=4))
    assert not np.array_equal(a, derive_rng(3, "task/test").normal(size=4))
    assert not np.array_equal(a, derive_rng(4, "task/train").normal(size=4))


@pytest.mark.parametrize("section", [
    {"prune": {"rho_overrides": {"U_h": "x"}}},
    {"prune": {"rho_overrides": {"U_h": True}}},
    {"prune": {"rho_overrides": {"V_q": 0.1}}},
    {"tune": {"num_r": ["a"]}},
    {"tune": {"tile": [8, 2.5]}},
    {"tune": {"workers": [True]}},
    {"tune": {"unroll": [[1]]}},
])
def test_list_items_and_mapping_values_are_typed(tmp_path, section):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(section))
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_programmatic_tune_lists_are_checked():
    config = RunConfig()
    config.tune.num_c = [2, "4"]
    with pytest.raises(ConfigError):
        config.validate()
