import os

import hypothesis
import numpy as np
import pytest

from bspgru.services.gru_service import GruParams
from bspgru.services.pruning_service import BlockPartition, StructuredMask
from bspgru.services.task_service import SyntheticTask
from bspgru.toolkit import create_toolkit_app
from bspgru.utils.config_utils import derive_rng

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(autouse=True)
def data_dir(tmp_path, monkeypatch):
    """Keep the event log out of the working tree"""
    path = tmp_path / "data"
    monkeypatch.setenv("BSPGRU_DATA_DIR", str(path))
    monkeypatch.delenv("BSPGRU_WORKERS", raising=False)
    return path


@pytest.fixture
def small_params():
    return GruParams.initialize(5, 6, 3, derive_rng(7, "test/params"))


@pytest.fixture
def small_task():
    return SyntheticTask.create(seq_len=6, input_dim=8, num_classes=3, noise_std=0.3, seed=3)


def random_mask(rng, rows, cols, part):
    kept_rows = np.sort(rng.choice(rows, size=int(rng.integers(0, rows + 1)), replace=False))
    kept_cols = []
    for _ in part.row_bounds(rows):
        blocks = []
        for c0, c1 in part.col_bounds(cols):
            k = int(rng.integers(0, c1 - c0 + 1))
            blocks.append(np.sort(c0 + rng.choice(c1 - c0, size=k, replace=False)))
        kept_cols.append(blocks)
    return StructuredMask.from_selection(rows, cols, part, kept_rows, kept_cols)


@pytest.fixture(scope="session")
def make_bsp():
    """Factory for a random BSP-feasible matrix and its mask"""
    def make(seed, rows, cols, num_r, num_c):
        rng = np.random.default_rng(seed)
        mask = random_mask(rng, rows, cols, BlockPartition(num_r, num_c))
        M = np.where(mask.grid, rng.normal(size=(rows, cols)), 0.0)
        return M, mask
    return make


@pytest.fixture
def app():
    return create_toolkit_app({"TESTING": True})


@pytest.fixture
def runner(app):
    return app.test_cli_runner()
