"""
Sparse execution over BSPC: matrix reorder, redundant-load elimination,
a row-parallel sparse matrix-vector executor and sparse GRU inference
"""
import os
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from threading import Lock

import numpy as np

from .bspc_service import decode, encode, load_bspc, save_bspc
from .checkpoint_service import load_checkpoint, save_checkpoint
from .gru_service import PRUNABLE_MATRICES, accumulate_rows, check_sequence, dense_matvec, gru_step
from ..utils.errors import InvariantViolationError, MissingFileError, NumericError, ScheduleMismatchError
from ..utils.logging_utils import debug_print

MODEL_FILE = "model.grup"

_executors = {}
_executors_lock = Lock()


def _executor(workers):
    """One thread pool per worker count, reused across calls"""
    with _executors_lock:
        if workers not in _executors:
            _executors[workers] = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="spmv")
        return _executors[workers]


def pattern_key(cols):
    """Canonical hash of a kept-column id sequence"""
    return hashlib.blake2b(np.asarray(cols, dtype="<u4").tobytes(), digest_size=8).hexdigest()


@dataclass
class RowGroup:
    """Rows sharing one exact kept-column pattern, in execution order"""

    pattern_key: str
    rows: np.ndarray
    pattern: np.ndarray

    @property
    def nnz_per_row(self):
        return int(self.pattern.size)

    @property
    def nnz(self):
        return int(self.rows.size * self.pattern.size)


class LoadCounter:
    """Counts input-vector element loads during an instrumented execution"""

    def __init__(self):
        self._lock = Lock()
        self.loads = 0

    def add(self, count):
        with self._lock:
            self.loads += int(count)

    def reset(self):
        with self._lock:
            self.loads = 0


@dataclass
class WorkItem:
    """Consecutive rows of one worker, padded to the widest pattern among them"""

    rows: np.ndarray
    expand: np.ndarray
    panel: np.ndarray
    gather: np.ndarray
    nnz: int


@dataclass
class ExecutionSchedule:
    groups: list
    shared_loads: list
    panels: list
    rows: int = 0
    load_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    tile_size: int = 8
    unroll_factor: int = 1
    workers: int = 1
    assignments: list = field(default_factory=list)
    work: list = field(default_factory=list)
    signature: tuple = ()
    source: object = None

    @property
    def naive_loads(self):
        return sum(group.nnz for group in self.groups)

    @property
    def scheduled_loads(self):
        """One load per pattern column of every group, however many workers share it"""
        return int(self.load_index.size)

    def matches(self, B):
        return B is self.source or _signature(B) == self.signature


def _signature(B):
    digest = hashlib.blake2b(digest_size=16)
    digest.update(np.asarray(B.kept_rows, dtype="<u4").tobytes())
    if B.row_perm is not None:
        digest.update(np.asarray(B.row_perm, dtype="<u4").tobytes())
    for blocks in B.kept_cols:
        for cols in blocks:
            digest.update(np.asarray(cols, dtype="<u4").tobytes())
            digest.update(b"|")
    return B.rows, B.cols, B.nnz, digest.hexdigest()


def _strip_patterns(B):
    """Per strip: surviving rows, concatenated kept columns and the matching value panel"""
    for strip, blocks in enumerate(B.kept_cols):
        rows = B.strip_rows(strip)
        if rows.size == 0:
            continue
        pattern = np.concatenate([np.zeros(0, dtype=np.int64)] + [np.asarray(c, dtype=np.int64) for c in blocks])
        panel = np.hstack([np.zeros((rows.size, 0))] + list(B.values[strip]))
        yield rows, pattern, panel


def reorder(B):
    """Sort kept rows by (pattern key, nnz, id); returns B with row_perm set and the row groups"""
    B.validate()
    by_key = {}
    for rows, pattern, _ in _strip_patterns(B):
        key = pattern_key(pattern)
        if key in by_key:
            by_key[key] = RowGroup(key, np.concatenate([by_key[key].rows, rows]), pattern)
        else:
            by_key[key] = RowGroup(key, rows, pattern)

    groups = sorted(by_key.values(), key=lambda g: (g.pattern_key, g.nnz_per_row))
    for group in groups:
        group.rows = np.sort(group.rows)
    perm = np.concatenate([np.zeros(0, dtype=np.int64)] + [g.rows for g in groups])
    debug_print(f"reorder: {B.kept_rows.size} rows in {len(groups)} pattern groups")
    return B.with_perm(perm), groups


def assign_rows(groups, workers):
    """Deal rows round-robin within each group, continuing the rotation across groups.

    Returns, per worker, a list of (group index, local row positions).
    """
    groups = getattr(groups, "groups", groups)
    if workers < 1:
        raise InvariantViolationError("workers must be at least 1", workers=workers)
    assignments = [[] for _ in range(workers)]
    start = 0
    for g, group in enumerate(groups):
        count = group.rows.size
        for w in range(workers):
            local = np.arange((w - start) % workers, count, workers)
            if local.size:
                assignments[w].append((g, local))
        start = (start + count) % workers
    return assignments


def _work_items(groups, panels, offsets, load_index, assignment, item_rows):
    """Cut one worker's rows, in group order, into items of at most item_rows rows"""
    entries = [(g, i) for g, local in assignment if groups[g].pattern.size for i in local]
    items = []
    for start in range(0, len(entries), item_rows):
        chunk = entries[start:start + item_rows]
        width = max(groups[g].pattern.size for g, _ in chunk)
        rows = np.empty(len(chunk), dtype=np.int64)
        expand = np.empty((len(chunk), width), dtype=np.int64)
        panel = np.zeros((len(chunk), width))
        nnz = 0
        for k, (g, i) in enumerate(chunk):
            size = groups[g].pattern.size
            rows[k] = groups[g].rows[i]
            expand[k, :size] = offsets[g] + np.arange(size)
            # padding repeats the row's first load against a zero weight
            expand[k, size:] = offsets[g]
            panel[k, :size] = panels[g][i]
            nnz += size
        items.append(WorkItem(rows, expand, panel, load_index[expand], nnz))
    return items


def plan_loads(groups, B, tile_size=8, unroll_factor=1, workers=1):
    """Build the execution schedule: one shared load list per group, gathered once per call.

    Each worker's rows are cut into items of tile_size * unroll_factor rows;
    an item is one gather and one accumulation.
    """
    if tile_size < 1 or unroll_factor < 1:
        raise InvariantViolationError("tile_size and unroll_factor must be positive",
                                      tile_size=tile_size, unroll_factor=unroll_factor)
    ordered = np.concatenate([np.zeros(0, dtype=np.int64)] + [g.rows for g in groups])
    if not np.array_equal(np.sort(ordered), B.kept_rows):
        raise ScheduleMismatchError("Row groups do not cover the kept rows exactly once")
    if B.row_perm is not None and not np.array_equal(B.row_perm, ordered):
        raise ScheduleMismatchError("Row groups do not follow the matrix's row permutation")

    row_values = {}
    row_pattern = {}
    for rows, pattern, panel in _strip_patterns(B):
        for i, row in enumerate(rows):
            row_values[int(row)] = panel[i]
            row_pattern[int(row)] = pattern

    panels = []
    for group in groups:
        for row in group.rows:
            if not np.array_equal(row_pattern[int(row)], group.pattern):
                raise ScheduleMismatchError(f"Row {row} does not share its group's column pattern", row=int(row))
        panels.append(np.vstack([np.zeros((0, group.pattern.size))] + [row_values[int(r)] for r in group.rows]))

    shared_loads = [group.pattern.copy() for group in groups]
    load_index = np.concatenate([np.zeros(0, dtype=np.int64)] + shared_loads)
    offsets = np.cumsum([0] + [loads.size for loads in shared_loads])
    assignments = assign_rows(groups, workers)
    item_rows = int(tile_size) * int(unroll_factor)
    work = [_work_items(groups, panels, offsets, load_index, assignment, item_rows) for assignment in assignments]

    return ExecutionSchedule(
        groups=groups,
        shared_loads=shared_loads,
        panels=panels,
        rows=B.rows,
        load_index=load_index,
        tile_size=int(tile_size),
        unroll_factor=int(unroll_factor),
        workers=int(workers),
        assignments=assignments,
        work=[items for items in work if items],
        signature=_signature(B),
        source=B,
    )


def compile_matrix(M, mask, tile_size=8, unroll_factor=1, workers=1):
    """encode, reorder and plan in one go"""
    B, groups = reorder(encode(M, mask))
    return B, plan_loads(groups, B, tile_size, unroll_factor, workers)


def _run_items(items, source, y, counter, naive):
    for item in items:
        if naive:
            values = source[item.gather]
            if counter is not None:
                counter.add(item.nnz)
        else:
            values = source[item.expand]
        y[item.rows] = accumulate_rows(item.panel * values)


def _execute(schedule, x, counter, naive):
    y = np.zeros(schedule.rows)
    if naive:
        source = x
    else:
        source = x[schedule.load_index]
        if counter is not None:
            counter.add(schedule.load_index.size)
    if schedule.workers == 1 or len(schedule.work) <= 1:
        for items in schedule.work:
            _run_items(items, source, y, counter, naive)
    else:
        futures = [_executor(schedule.workers).submit(_run_items, items, source, y, counter, naive)
                   for items in schedule.work]
        for future in futures:
            future.result()
    return y


def _check_mode(mode):
    if mode not in ("scheduled", "naive"):
        raise InvariantViolationError(f"Unknown execution mode '{mode}'", mode=mode)
    return mode == "naive"


def spmv(B, schedule, x, counter=None, mode="scheduled"):
    """y = decode(B) x, rows accumulated in ascending kept-column order.

    mode="naive" gathers the input once per row instead of once per group;
    results are identical, only the counted loads differ.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (B.cols,):
        raise InvariantViolationError(f"Input vector has shape {x.shape}, expected ({B.cols},)",
                                      shape=list(x.shape), cols=B.cols)
    naive = _check_mode(mode)
    if not schedule.matches(B):
        raise ScheduleMismatchError("Schedule was planned for a different matrix")
    return _execute(schedule, x, counter, naive)


@dataclass
class SparseGruModel:
    """Six BSPC weight matrices with their schedules plus dense biases and readout"""

    matrices: dict
    schedules: dict
    dense: object

    @property
    def input_dim(self):
        return self.dense.input_dim

    @property
    def hidden_dim(self):
        return self.dense.hidden_dim

    @classmethod
    def compile(cls, params, masks, tile_size=8, unroll_factor=1, workers=1):
        """Pack pruned params under their masks; dense holds the masked reference weights"""
        dense = params.copy()
        matrices, schedules = {}, {}
        for name in PRUNABLE_MATRICES:
            B, schedule = compile_matrix(getattr(params, name), masks[name], tile_size, unroll_factor, workers)
            matrices[name], schedules[name] = B, schedule
            setattr(dense, name, decode(B))
        return cls(matrices, schedules, dense)

    @classmethod
    def from_matrices(cls, matrices, dense, tile_size=8, unroll_factor=1, workers=1):
        """Plan schedules for BSPC matrices, re-grouping their rows"""
        reordered, schedules = {}, {}
        for name in PRUNABLE_MATRICES:
            if name not in matrices:
                raise MissingFileError(f"Sparse model lacks matrix {name}", matrix=name)
            B, groups = reorder(matrices[name])
            reordered[name] = B
            schedules[name] = plan_loads(groups, B, tile_size, unroll_factor, workers)
            expected = getattr(dense, name).shape
            if (B.rows, B.cols) != expected:
                raise ScheduleMismatchError(f"{name} is {B.rows}x{B.cols}, expected {expected}", matrix=name)
        return cls(reordered, schedules, dense)

    def nnz(self):
        return {name: B.nnz for name, B in self.matrices.items()}

    def loads(self):
        """(naive, scheduled) loads of one pass over all six matrices"""
        naive = sum(s.naive_loads for s in self.schedules.values())
        scheduled = sum(s.scheduled_loads for s in self.schedules.values())
        return naive, scheduled

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        for name, B in self.matrices.items():
            save_bspc(B, os.path.join(directory, f"{name}.bspc"))
        save_checkpoint(self.dense, os.path.join(directory, MODEL_FILE))

    @classmethod
    def load(cls, directory, tile_size=8, unroll_factor=1, workers=1):
        dense = load_checkpoint(os.path.join(directory, MODEL_FILE))
        matrices = {name: load_bspc(os.path.join(directory, f"{name}.bspc")) for name in PRUNABLE_MATRICES}
        return cls.from_matrices(matrices, dense, tile_size, unroll_factor, workers)


def sparse_gru_forward(model, xs, h0, counter=None, mode="scheduled"):
    """Unroll the GRU with every weight product computed by the sparse executor.

    Schedules are checked against their matrices once per call, not per step.
    """
    xs = check_sequence(xs, model.input_dim)
    h = np.asarray(h0, dtype=np.float64)
    if h.shape != (model.hidden_dim,):
        raise InvariantViolationError(f"h0 has shape {h.shape}, expected ({model.hidden_dim},)",
                                      shape=list(h.shape))
    if not np.all(np.isfinite(h)):
        raise NumericError("h0 contains non-finite values")
    for name in PRUNABLE_MATRICES:
        if name not in model.schedules or not model.schedules[name].matches(model.matrices[name]):
            raise ScheduleMismatchError(f"No schedule matches matrix {name}", matrix=name)

    naive = _check_mode(mode)
    schedules = model.schedules
    dense = model.dense

    def matvec(name, vector):
        return _execute(schedules[name], vector, counter, naive)

    states = []
    for x_t in xs:
        state = gru_step(x_t, h, matvec, dense.b_z, dense.b_r, dense.b_h)
        states.append(state)
        h = state.h
    logits = dense_matvec(dense.readout_W, h) + dense.readout_b
    return states, logits
