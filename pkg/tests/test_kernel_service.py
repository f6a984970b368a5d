import numpy as np
import pytest

from bspgru.services.bspc_service import decode, encode
from bspgru.services.gru_service import (
    BIASES,
    PRUNABLE_MATRICES,
    GruParams,
    dense_matvec,
    gru_forward_sequence,
)
from bspgru.services.kernel_service import (
    ExecutionSchedule,
    LoadCounter,
    SparseGruModel,
    assign_rows,
    compile_matrix,
    pattern_key,
    plan_loads,
    reorder,
    sparse_gru_forward,
    spmv,
)
from bspgru.services.pruning_service import (
    BlockPartition,
    StructuredMask,
    infer_mask,
    project_block_columns,
    project_rows,
)
from bspgru.utils.errors import InvariantViolationError, ScheduleMismatchError


def _selection(rows, cols, part, kept_rows, kept_cols, seed=0):
    mask = StructuredMask.from_selection(rows, cols, part, kept_rows, kept_cols)
    M = np.where(mask.grid, np.random.default_rng(seed).normal(size=(rows, cols)), 0.0)
    return M, mask


def test_equal_patterns_merge_into_one_group():
    part = BlockPartition(2, 1)
    M, mask = _selection(8, 6, part, [0, 2, 5, 6], [[[1, 3]], [[1, 3]]])
    B, groups = reorder(encode(M, mask))
    assert len(groups) == 1
    assert groups[0].rows.tolist() == [0, 2, 5, 6]
    assert groups[0].pattern_key == pattern_key([1, 3])
    assert B.row_perm.tolist() == [0, 2, 5, 6]


def test_distinct_patterns_form_separate_groups():
    part = BlockPartition(2, 1)
    M, mask = _selection(8, 6, part, [0, 2, 5, 6, 7], [[[1, 3]], [[0, 1, 2]]])
    B, groups = reorder(encode(M, mask))
    by_size = {group.nnz_per_row: group.rows.tolist() for group in groups}
    assert by_size == {2: [0, 2], 3: [5, 6, 7]}
    assert B.row_perm.tolist() == [row for group in groups for row in group.rows.tolist()]
    assert [g.pattern_key for g in groups] == sorted(g.pattern_key for g in groups)


def test_shared_loads_count_once_per_group():
    part = BlockPartition(1, 1)
    M, mask = _selection(4, 6, part, [0, 1, 2, 3], [[[0, 2, 5]]])
    B, schedule = compile_matrix(M, mask)
    assert schedule.naive_loads == 12
    assert schedule.scheduled_loads == 3
    x = np.arange(1.0, 7.0)
    scheduled, naive = LoadCounter(), LoadCounter()
    y = spmv(B, schedule, x, scheduled)
    y_naive = spmv(B, schedule, x, naive, mode="naive")
    assert (scheduled.loads, naive.loads) == (3, 12)
    np.testing.assert_array_equal(y, y_naive)


@pytest.mark.parametrize("seed", range(200))
def test_spmv_matches_dense(make_bsp, seed):
    rng = np.random.default_rng(seed)
    rows, cols = int(rng.integers(1, 13)), int(rng.integers(1, 13))
    num_r, num_c = int(rng.integers(1, rows + 1)), int(rng.integers(1, cols + 1))
    M, mask = make_bsp(seed, rows, cols, num_r, num_c)
    B, schedule = compile_matrix(M, mask, tile_size=int(rng.integers(1, 5)), unroll_factor=int(rng.integers(1, 3)))
    x = rng.normal(size=cols)
    y = spmv(B, schedule, x)
    np.testing.assert_allclose(y, M @ x, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(y, dense_matvec(M, x))


def test_worker_count_does_not_change_results(make_bsp):
    M, mask = make_bsp(11, 40, 30, 5, 3)
    x = np.random.default_rng(11).normal(size=30)
    outputs = []
    for workers in (1, 2, 8):
        B, schedule = compile_matrix(M, mask, tile_size=2, workers=workers)
        counter = LoadCounter()
        outputs.append(spmv(B, schedule, x, counter))
        assert counter.loads == schedule.scheduled_loads
    np.testing.assert_array_equal(outputs[0], outputs[1])
    np.testing.assert_array_equal(outputs[0], outputs[2])


def test_naive_mode_loads_every_stored_entry(make_bsp):
    M, mask = make_bsp(12, 16, 12, 4, 3)
    B, schedule = compile_matrix(M, mask, workers=2)
    counter = LoadCounter()
    x = np.linspace(-1.0, 1.0, 12)
    y = spmv(B, schedule, x, counter, mode="naive")
    assert counter.loads == B.nnz == schedule.naive_loads
    np.testing.assert_array_equal(y, spmv(B, schedule, x))
    assert schedule.scheduled_loads <= schedule.naive_loads


def test_permutation_is_consistent(make_bsp):
    M, mask = make_bsp(13, 12, 9, 3, 3)
    B, _ = compile_matrix(M, mask)
    assert sorted(B.row_perm.tolist()) == B.kept_rows.tolist()
    np.testing.assert_array_equal(decode(B, permuted=True)[B.kept_rows], decode(B)[B.row_perm])
    np.testing.assert_array_equal(decode(B), M)


def test_identity_gathers_each_input_once():
    part = BlockPartition(5, 5)
    eye = np.eye(5)
    B, schedule = compile_matrix(eye, infer_mask(eye, part))
    x = np.array([3.0, -1.0, 0.5, 2.0, 7.0])
    np.testing.assert_array_equal(spmv(B, schedule, x), x)
    assert len(schedule.groups) == 5
    assert schedule.scheduled_loads == 5


def test_assign_rows_covers_and_balances(make_bsp):
    M, mask = make_bsp(14, 30, 8, 6, 2)
    _, groups = reorder(encode(M, mask))
    for workers in (1, 3, 4):
        assignments = assign_rows(groups, workers)
        seen = sorted(int(groups[g].rows[i]) for work in assignments for g, local in work for i in local)
        assert seen == sorted(int(r) for g in groups for r in g.rows)
        loads = [sum(local.size for _, local in work) for work in assignments]
        assert max(loads) - min(loads) <= 1
    with pytest.raises(InvariantViolationError):
        assign_rows(groups, 0)


def test_schedule_mismatches_are_rejected():
    part = BlockPartition(2, 1)
    M, mask = _selection(8, 6, part, [0, 2, 5, 6, 7], [[[1, 3]], [[0, 1, 2]]])
    B, schedule = compile_matrix(M, mask)
    other, _ = compile_matrix(*_selection(8, 6, part, [1, 2, 5], [[[1, 3]], [[0, 1, 2]]]))
    with pytest.raises(ScheduleMismatchError):
        spmv(other, schedule, np.ones(6))
    with pytest.raises(ScheduleMismatchError):
        plan_loads(schedule.groups[1:], B)
    with pytest.raises(InvariantViolationError):
        spmv(B, schedule, np.ones(7))
    with pytest.raises(InvariantViolationError):
        spmv(B, schedule, np.ones(6), mode="fast")


def test_plan_rejects_a_foreign_permutation():
    part = BlockPartition(2, 1)
    M, mask = _selection(8, 6, part, [0, 2, 5, 6, 7], [[[1, 3]], [[0, 1, 2]]])
    B, groups = reorder(encode(M, mask))
    with pytest.raises(ScheduleMismatchError):
        plan_loads(groups, B.with_perm(B.row_perm[::-1].copy()))


def _pruned_model(params, part, seed=0):
    params = params.copy()
    masks = {}
    for name in PRUNABLE_MATRICES:
        W = getattr(params, name)
        Z = project_rows(project_block_columns(W, part, 1), 4)
        setattr(params, name, Z)
        masks[name] = infer_mask(Z, part)
    return params, masks


def test_unpruned_sparse_forward_is_bitwise_dense(small_params):
    part = BlockPartition(2, 2)
    masks = {name: StructuredMask.full(*getattr(small_params, name).shape, part) for name in PRUNABLE_MATRICES}
    model = SparseGruModel.compile(small_params, masks)
    xs = np.random.default_rng(20).normal(size=(7, 5))
    h0 = np.zeros(6)
    _, sparse_logits = sparse_gru_forward(model, xs, h0)
    _, dense_logits = gru_forward_sequence(small_params, xs, h0)
    np.testing.assert_array_equal(sparse_logits, dense_logits)


def test_pruned_sparse_forward_matches_masked_dense(small_params, tmp_path):
    params, masks = _pruned_model(small_params, BlockPartition(2, 2))
    model = SparseGruModel.compile(params, masks, tile_size=2, workers=2)
    xs = np.random.default_rng(21).normal(size=(6, 5))
    h0 = np.random.default_rng(22).normal(scale=0.3, size=6)
    states, logits = sparse_gru_forward(model, xs, h0)
    _, reference = gru_forward_sequence(model.dense, xs, h0)
    np.testing.assert_allclose(logits, reference, rtol=1e-10, atol=1e-12)
    assert len(states) == 6

    counter = LoadCounter()
    sparse_gru_forward(model, xs, h0, counter)
    assert counter.loads == 6 * model.loads()[1]

    model.save(str(tmp_path / "model"))
    assert sorted(p.name for p in (tmp_path / "model").iterdir()) == sorted(
        [f"{name}.bspc" for name in PRUNABLE_MATRICES] + ["model.grup"])
    loaded = SparseGruModel.load(str(tmp_path / "model"))
    _, restored = sparse_gru_forward(loaded, xs, h0)
    np.testing.assert_array_equal(restored, logits)
    assert loaded.nnz() == model.nnz()


def test_forward_rejects_a_stale_schedule(small_params):
    params, masks = _pruned_model(small_params, BlockPartition(2, 2))
    model = SparseGruModel.compile(params, masks)
    model.schedules["U_h"] = model.schedules["W_z"]
    with pytest.raises(ScheduleMismatchError):
        sparse_gru_forward(model, np.zeros((2, 5)), np.zeros(6))


def test_shared_loads_do_not_grow_with_workers():
    part = BlockPartition(1, 1)
    M, mask = _selection(4, 6, part, [0, 1, 2, 3], [[[0, 2, 5]]])
    x = np.arange(1.0, 7.0)
    outputs = []
    for workers in (1, 2, 4):
        B, schedule = compile_matrix(M, mask, tile_size=1, workers=workers)
        counter = LoadCounter()
        outputs.append(spmv(B, schedule, x, counter))
        assert schedule.scheduled_loads == 3
        assert counter.loads == 3
        assert len(schedule.work) == workers
    for y in outputs[1:]:
        np.testing.assert_array_equal(y, outputs[0])


def test_scheduled_equals_naive_only_for_singleton_groups(make_bsp):
    M, mask = make_bsp(15, 24, 16, 4, 4)
    _, schedule = compile_matrix(M, mask, workers=3)
    assert schedule.scheduled_loads == sum(group.pattern.size for group in schedule.groups)
    singletons = all(group.rows.size == 1 for group in schedule.groups if group.pattern.size)
    assert (schedule.scheduled_loads == schedule.naive_loads) == (singletons or schedule.naive_loads == 0)


def test_work_items_follow_tile_and_unroll():
    part = BlockPartition(2, 1)
    M, mask = _selection(8, 6, part, [0, 1, 2, 4, 5, 6, 7], [[[1, 3]], [[0, 1, 2]]])
    x = np.random.default_rng(3).normal(size=6)
    B, wide = compile_matrix(M, mask, tile_size=32)
    assert [len(items) for items in wide.work] == [1]
    item = wide.work[0][0]
    assert item.expand.shape == (7, 3)
    assert item.nnz == B.nnz == 3 * 2 + 4 * 3
    np.testing.assert_array_equal(wide.load_index[item.expand], item.gather)

    B_narrow, narrow = compile_matrix(M, mask, tile_size=2, unroll_factor=2, workers=2)
    sizes = [item.rows.size for items in narrow.work for item in items]
    assert max(sizes) <= 4
    assert sum(sizes) == 7
    np.testing.assert_array_equal(spmv(B, wide, x), dense_matvec(M, x))
    np.testing.assert_array_equal(spmv(B_narrow, narrow, x), spmv(B, wide, x))


def test_empty_matrix_runs_without_work():
    part = BlockPartition(2, 2)
    M = np.zeros((4, 4))
    mask = StructuredMask.from_selection(4, 4, part, [], [[[], []], [[], []]])
    B, schedule = compile_matrix(M, mask, workers=2)
    counter = LoadCounter()
    np.testing.assert_array_equal(spmv(B, schedule, np.ones(4), counter), np.zeros(4))
    assert counter.loads == 0
    assert schedule.work == []


def test_forward_checks_schedules_once_per_call(small_params, monkeypatch):
    params, masks = _pruned_model(small_params, BlockPartition(2, 2))
    model = SparseGruModel.compile(params, masks)
    calls = []
    original = ExecutionSchedule.matches

    def counting(schedule, B):
        calls.append(B)
        return original(schedule, B)

    monkeypatch.setattr(ExecutionSchedule, "matches", counting)
    xs = np.random.default_rng(23).normal(size=(9, 5))
    sparse_gru_forward(model, xs, np.zeros(6))
    assert len(calls) == len(PRUNABLE_MATRICES)


def _random_sparse_params(seed, make_bsp):
    """GRU weights masked by random BSP grids with non-divisible partitions and empty blocks"""
    rng = np.random.default_rng(seed)
    I, H, C = (int(v) for v in rng.integers(2, 10, size=3))
    params = GruParams.initialize(I, H, C, rng)
    for name in BIASES:
        setattr(params, name, rng.normal(scale=0.5, size=H))
    params.readout_b = rng.normal(size=C)
    masks = {}
    for index, name in enumerate(PRUNABLE_MATRICES):
        cols = I if name.startswith("W") else H
        num_r, num_c = int(rng.integers(1, H + 1)), int(rng.integers(1, cols + 1))
        M, mask = make_bsp(seed * 8 + index, H, cols, num_r, num_c)
        setattr(params, name, M)
        masks[name] = mask
    return params, masks, rng


@pytest.mark.parametrize("seed", range(200))
def test_sparse_forward_matches_dense_on_any_worker_count(make_bsp, seed):
    params, masks, rng = _random_sparse_params(seed, make_bsp)
    xs = rng.normal(size=(int(rng.integers(1, 6)), params.input_dim))
    h0 = rng.normal(scale=0.5, size=params.hidden_dim)
    tile_size = int(rng.integers(1, 5))
    results = []
    for workers in (1, 2, 8):
        model = SparseGruModel.compile(params, masks, tile_size=tile_size, workers=workers)
        results.append(sparse_gru_forward(model, xs, h0)[1])
    _, reference = gru_forward_sequence(params, xs, h0)
    np.testing.assert_allclose(results[0], reference, rtol=1e-10, atol=1e-12)
    for logits in results[1:]:
        np.testing.assert_array_equal(logits, results[0])


def test_empty_recurrent_masks_leave_a_feed_forward_step(small_params):
    params = small_params.copy()
    for name in BIASES:
        setattr(params, name, np.zeros(6))
    masks = {}
    for name in PRUNABLE_MATRICES:
        if name.startswith("U"):
            setattr(params, name, np.zeros((6, 6)))
            masks[name] = StructuredMask.from_selection(6, 6, BlockPartition(1, 1), [], [[[]]])
        else:
            masks[name] = StructuredMask.full(6, 5, BlockPartition(1, 1))
    model = SparseGruModel.compile(params, masks, workers=2)
    x = np.random.default_rng(24).normal(size=5)
    _, logits = sparse_gru_forward(model, x[None, :], np.zeros(6))

    gate = lambda a: 1.0 / (1.0 + np.exp(-a))
    z = gate(params.W_z @ x)
    h = (1.0 - z) * np.tanh(params.W_h @ x)
    np.testing.assert_allclose(logits, params.readout_W @ h + params.readout_b, rtol=1e-12, atol=1e-14)
    assert sum(model.nnz().values()) == 3 * 30
